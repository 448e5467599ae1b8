"""
Parsers for rating datasets (long-format CSV) and flat key = value run configs.
"""

import re
from itertools import product
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from config.constants import CSV_COLUMNS
from core.exceptions import ParseError, UnbalancedDesign
from utils.logger import get_logger
from .models.base import Family, RatingDataset

logger = get_logger(__name__)

_PANDAS_LINE = re.compile(r"line (\d+)")

PathLike = Union[str, Path]


# =============================================================================
# DATASET CSV
# =============================================================================

def _read_frame(path: Path) -> pd.DataFrame:
    if not path.is_file():
        raise ParseError(f"dataset file {path} does not exist")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise ParseError(f"{path} is empty") from e
    except pd.errors.ParserError as e:
        match = _PANDAS_LINE.search(str(e))
        raise ParseError(str(e).strip(), line=int(match.group(1)) if match else None) from e
    except UnicodeDecodeError as e:
        raise ParseError(f"{path} is not UTF-8 text: {e}") from e

    columns = [c.strip().lower() for c in frame.columns]
    if columns != CSV_COLUMNS:
        raise ParseError(f"header must be {','.join(CSV_COLUMNS)}, got {','.join(columns)}", line=1)
    frame.columns = columns
    return frame.apply(lambda col: col.str.strip())


def _numeric_column(frame: pd.DataFrame, name: str, integer: bool) -> pd.Series:
    values = pd.to_numeric(frame[name], errors="coerce")
    bad = values.isna() | ~np.isfinite(values)
    if integer:
        bad |= values != values.round()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        kind = "an integer" if integer else "a finite number"
        # header is line 1
        raise ParseError(f"{name} must be {kind}, got '{frame[name].iloc[row]}'", line=row + 2)
    return values.astype(int) if integer else values.astype(float)


def _balance_check(frame: pd.DataFrame, subjects: List[str], times: List[int], reps: List[int], raters: List[str]) -> None:
    keys = ["subject", "time", "replicate", "rater"]
    cells = [(s, int(t), int(k), r) for s, t, k, r in frame[keys].itertuples(index=False, name=None)]
    dup_mask = frame.duplicated(keys, keep="first").to_numpy()
    duplicates = [cell for cell, dup in zip(cells, dup_mask) if dup]
    present = set(cells)
    missing = [cell for cell in product(subjects, times, reps, raters) if cell not in present]
    if duplicates or missing:
        raise UnbalancedDesign(missing=missing, duplicates=duplicates)


def parse_dataset_csv(path: PathLike, family: Optional[Family] = None) -> RatingDataset:
    """
    Read a long-format CSV with header subject,time,replicate,rater,value.

    Subjects and raters keep their order of first appearance; time points and
    replicates are sorted numerically. Every (subject, time, replicate, rater)
    cell must appear exactly once.

    Raises:
        ParseError: unreadable file, wrong header or a malformed value (with its line)
        UnbalancedDesign: duplicate or missing cells
        DomainError: values outside the support of ``family``
    """
    path = Path(path)
    frame = _read_frame(path)
    if frame.empty:
        raise ParseError(f"{path} has a header but no rows", line=2)
    frame["time"] = _numeric_column(frame, "time", integer=True)
    frame["replicate"] = _numeric_column(frame, "replicate", integer=True)
    frame["value"] = _numeric_column(frame, "value", integer=False)

    subjects = list(pd.unique(frame["subject"]))
    raters = list(pd.unique(frame["rater"]))
    times = sorted(pd.unique(frame["time"]).tolist())
    reps = sorted(pd.unique(frame["replicate"]).tolist())
    _balance_check(frame, subjects, times, reps, raters)

    ratings = np.empty((len(subjects), len(raters), len(times), len(reps)))
    si = pd.Index(subjects).get_indexer(frame["subject"])
    li = pd.Index(raters).get_indexer(frame["rater"])
    ti = pd.Index(times).get_indexer(frame["time"])
    ki = pd.Index(reps).get_indexer(frame["replicate"])
    ratings[si, li, ti, ki] = frame["value"].to_numpy()

    try:
        data = RatingDataset(ratings=ratings, subject_labels=subjects, rater_labels=raters)
    except ValidationError as e:
        raise ParseError(f"{path}: {e.errors()[0]['msg']}") from e
    if family is not None:
        data.check_family(family)
    logger.info("Loaded %s: N=%d, T=%d, K=%d, L=%d", path.name, *data.dims)
    return data


def write_dataset_csv(data: RatingDataset, path: PathLike) -> Path:
    """Write ratings in the long format parse_dataset_csv reads."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(data.records()), columns=CSV_COLUMNS).to_csv(path, index=False)
    return path


# =============================================================================
# RUN CONFIG FILE
# =============================================================================

def parse_config_file(path: PathLike) -> Dict[str, str]:
    """
    Flat ``key = value`` file; ``#`` starts a comment, blank lines are skipped.
    Keys are lower-cased with dashes turned into underscores.
    """
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"config file {path} does not exist")
    values: Dict[str, str] = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected 'key = value', got '{line}'", line=line_no)
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ParseError("empty key", line=line_no)
            key = key.lower().replace("-", "_")
            if key in values:
                logger.warning("%s line %d: '%s' set twice, keeping the later value", path.name, line_no, key)
            values[key] = value
    return values
