"""
Tests for the scenario catalog.
"""

import json

import pytest

from config.scenarios import list_scenarios, load_catalog, load_scenario
from core.exceptions import ConfigError, UnknownScenario
from core.models.base import Family


class TestCatalog:
    """Tests for listing and loading shipped scenarios."""

    def test_lists_every_file(self):
        """Test the eight shipped scenarios are listed in order."""
        names = list_scenarios()
        assert len(names) == 8
        assert names == sorted(names)
        assert "gaussian_two_rater" in names

    def test_loads_all(self):
        """Test every shipped scenario validates."""
        catalog = load_catalog()
        assert set(catalog) == set(list_scenarios())
        assert catalog["poisson_three_level"].spec.family == Family.POISSON
        assert catalog["gamma_three_level"].spec.has_interaction

    def test_unknown_name(self):
        """Test an unknown name lists the catalog."""
        with pytest.raises(UnknownScenario) as exc:
            load_scenario("no_such_scenario")
        assert "gaussian_two_rater" in exc.value.details["catalog"]
        assert exc.value.exit_code == 1


class TestScenarioFiles:
    """Tests for user scenario files."""

    def test_load_from_path(self, tmp_path, two_rater):
        """Test a scenario file outside the catalog, named after its file."""
        data = two_rater.model_dump(mode="json")
        del data["name"]
        path = tmp_path / "mine.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        scenario = load_scenario(path)
        assert scenario.name == "mine"
        assert scenario.truth.beta.tolist() == two_rater.truth.beta.tolist()

    def test_invalid_json(self, tmp_path):
        """Test malformed JSON is a configuration error."""
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_scenario(path)

    def test_family_mismatch(self, tmp_path, two_rater):
        """Test an error model that does not fit the family."""
        data = two_rater.model_dump(mode="json")
        data["error_model"] = {"kind": "poisson"}
        path = tmp_path / "mismatch.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        with pytest.raises(ConfigError):
            load_scenario(path)
