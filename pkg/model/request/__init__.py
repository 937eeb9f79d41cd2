"""Pydantic request models (experiment configs)."""
