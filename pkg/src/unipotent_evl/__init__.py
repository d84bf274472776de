"""Hitting times and extreme values of rank-k unipotent flows on the space
of unimodular lattices, with Monte Carlo limit-law oracles."""

from __future__ import annotations

__version__ = "0.1.0"
