"""Simulator and analysis toolkit for cavity-enhanced single-emitter spectroscopy.

Generates synthetic pulsed experiments on narrow-line emitters coupled to a
nanophotonic cavity (excitation scans, lifetime decays, cavity-detuning
sweeps, photon autocorrelation, Zeeman scans, spin relaxation) and provides
the fitting routines used to analyse them.
"""

__version__ = "0.1.0"
