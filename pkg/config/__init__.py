"""
Configuration package for CCC Fiducial.
Contains app constants and the simulation scenario catalog.
"""

from .constants import *
