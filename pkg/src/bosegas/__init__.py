"""Variational energies and Brownian-path free energies for trapped dilute
boson gases: scattering lengths, Gross-Pitaevskii and Hartree minimization,
interacting Brownian-motion sampling, and large-deviation rate functions."""

__version__ = "0.1.0"

from . import errors, grids, potentials, scattering  # noqa: F401
