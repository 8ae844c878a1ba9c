"""Numerical services, one module per estimation stage"""
