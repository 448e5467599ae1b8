"""
Core package for CCC Fiducial.
Contains the mixed-model fit, fiducial pivots, CCC evaluation, intervals and the simulation harness.
"""
