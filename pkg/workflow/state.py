"""Shared state for the fit pipeline"""
from typing import Any, Dict, Optional, TypedDict

from app.schemas import RunConfig
from integrations.storage import ResultStore


class FitState(TypedDict):
    """Complete pipeline state"""
    # Input
    config: RunConfig
    store: ResultStore

    # Loaded fixtures and computed results, keyed by name
    fixtures: Dict[str, Any]
    results: Dict[str, Any]

    # Control
    current_step: str
    written: list
    error: Optional[str]
