"""Gaussian-process surrogates for ABC discrepancies, with transforms and CV model selection."""

__version__ = "0.1.0"
