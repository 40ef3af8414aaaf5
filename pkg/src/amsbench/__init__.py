"""Antimicrobial-stewardship prediction benchmark on patient-day EHR data."""

__version__ = "0.1.0"
