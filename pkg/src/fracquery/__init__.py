"""Desk-scale simulation of fractional-query Hamiltonian simulation with
compressed control registers."""

from __future__ import annotations

__version__ = "0.1.0"
