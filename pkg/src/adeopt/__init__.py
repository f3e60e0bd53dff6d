"""Spectral-Galerkin reduction, simulation and control of 2-D advection-diffusion mixing."""
