"""Spin-photon entanglement simulator for a charged quantum dot in a Voigt field"""

__version__ = '0.1.0'
__author__ = 'SpinPhotonSim developers'
