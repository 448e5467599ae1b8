"""
Data models for CCC Fiducial.
Defines ratings, model structure, parameters, results and scenarios using Pydantic.
"""

from .base import CccMethod, CccNormalization, DrawMode, Family, ModelSpec, ParameterSet, RatingDataset
from .results import (
    CccBounds,
    CccEvaluation,
    CccValue,
    FiducialDraw,
    FitResult,
    IntervalMethod,
    IntervalResult,
    MarginalCovariance,
    PredictorCovTarget,
    PredictorSet,
    SolverDiagnostics,
    WishartObservation,
)
from .run_config import Command, RunConfig
from .scenario import Contaminant, CoverageReport, CoverageRow, ErrorKind, ErrorModel, Scenario
