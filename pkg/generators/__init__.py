"""
Generators package for CCC Fiducial.
Renders interval, fit and coverage results as JSON records and text tables.
"""

from .report import render_json, render_table, write_report
