"""Fit pipeline as a LangGraph state graph"""
from .graph import FitGraph
from .state import FitState

__all__ = ["FitGraph", "FitState"]
