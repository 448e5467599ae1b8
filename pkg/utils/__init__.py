"""
Utilities package for CCC Fiducial.
Contains logging setup and seeded random substreams.
"""
