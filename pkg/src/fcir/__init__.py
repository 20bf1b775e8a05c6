"""Simulation of generalised fractional Cox-Ingersoll-Ross processes.

``X_t = Z_t^2 1_[0, tau)(t)`` where ``dZ = f(t, Z) / (2 Z) dt + (sigma / 2) dW^H``
and ``W^H`` is a fractional Brownian motion with Hurst parameter ``H``.
"""

__version__ = "0.1.0"
