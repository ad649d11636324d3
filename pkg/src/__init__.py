"""Triplet Lab Package"""

__version__ = "1.0.0"
__author__ = "Triplet Lab Contributors"
__description__ = "Simulation, coincidence analysis and entanglement witnesses for three-photon energy-time entanglement"
