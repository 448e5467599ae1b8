"""
Simulation scenario catalog.
One JSON file per scenario in config/scenarios/; a user may also pass the path
of their own scenario file.
"""

import json
from pathlib import Path
from typing import Dict, List, Union

from pydantic import ValidationError

from config.constants import SCENARIOS_DIR
from core.exceptions import ConfigError, UnknownScenario
from core.models.scenario import Scenario

# =============================================================================
# CATALOG
# =============================================================================


def list_scenarios() -> List[str]:
    """Names of the shipped scenarios, sorted."""
    return sorted(p.stem for p in SCENARIOS_DIR.glob("*.json"))


def _read_scenario(file_path: Path) -> Scenario:
    try:
        with open(file_path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Scenario file {file_path} is not valid JSON: {e}") from e
    data.setdefault("name", file_path.stem)
    try:
        return Scenario.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Scenario file {file_path} is invalid: {e}") from e


def load_scenario(name_or_path: Union[str, Path]) -> Scenario:
    """
    Load a scenario by catalog name or by path to a JSON file.
    Raises UnknownScenario listing the catalog when neither exists.
    """
    candidate = Path(name_or_path)
    if candidate.suffix == ".json" and candidate.exists():
        return _read_scenario(candidate)

    file_path = SCENARIOS_DIR / f"{name_or_path}.json"
    if not file_path.exists():
        raise UnknownScenario(str(name_or_path), list_scenarios())
    return _read_scenario(file_path)


def load_catalog() -> Dict[str, Scenario]:
    return {name: load_scenario(name) for name in list_scenarios()}
