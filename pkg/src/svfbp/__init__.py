"""Shift-variant filtered backprojection for cone-beam CT with learned redundancy weights."""

__version__ = "0.1.0"
