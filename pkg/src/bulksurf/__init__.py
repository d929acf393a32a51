"""Numerical laboratory for a coupled bulk-surface reaction-diffusion system
on an evolving annulus: conservative pullback solver, equilibrium algebra,
and entropy-method diagnostics."""

__version__ = "0.1.0"
