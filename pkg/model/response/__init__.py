"""Pydantic response models: the JSON artifacts written by train, compare and bench-all."""
