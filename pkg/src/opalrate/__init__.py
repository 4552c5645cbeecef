"""Relative spontaneous-emission rates of dipoles in dielectric nanoparticles on
flat and opal substrates, from an FDTD solver checked against analytic models."""
__version__ = "0.1.0"
