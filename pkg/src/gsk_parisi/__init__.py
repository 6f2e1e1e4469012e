"""Parisi variational formula for Sherrington-Kirkpatrick type models with general spin priors."""

__version__ = "0.1.0"
