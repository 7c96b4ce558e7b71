"""Synthetic copy-move validation suite (outputs under data/validation/)."""
