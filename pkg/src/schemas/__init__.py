"""
Schemas Package

Pydantic schemas for on-disk records and the training configuration.
"""
