"""Test package for CCC Fiducial."""
