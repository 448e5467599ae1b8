"""
Tests for the dataset CSV and run-config parsers.
"""

from pathlib import Path

import numpy as np
import pytest

from core.exceptions import DomainError, ParseError, UnbalancedDesign
from core.models.base import Family
from core.parsers import parse_config_file, parse_dataset_csv, write_dataset_csv

EXAMPLE = Path(__file__).resolve().parent.parent / "docs" / "example_dataset.csv"

SMALL = """subject,time,replicate,rater,value
s1,1,1,A,1.0
s1,1,1,B,1.1
s1,2,1,A,2.0
s1,2,1,B,2.2
s2,1,1,A,0.5
s2,1,1,B,0.4
s2,2,1,A,1.5
s2,2,1,B,1.7
"""


def _write(tmp_path: Path, text: str, name: str = "data.csv") -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestDatasetCsv:
    """Tests for the long-format dataset reader."""

    def test_small_design(self, tmp_path):
        """Test eight rows become a 2 x 2 x 1 x 2 design."""
        data = parse_dataset_csv(_write(tmp_path, SMALL))
        assert data.dims == (2, 2, 1, 2)
        assert data.subjects() == ["s1", "s2"]
        assert data.raters() == ["A", "B"]
        assert data.ratings[1, 1, 1, 0] == 1.7

    def test_row_order_does_not_matter(self, tmp_path):
        """Test shuffled rows fill the same cells."""
        header, *rows = SMALL.strip().splitlines()
        shuffled = "\n".join([header] + rows[::-1]) + "\n"
        a = parse_dataset_csv(_write(tmp_path, SMALL, "a.csv"))
        b = parse_dataset_csv(_write(tmp_path, shuffled, "b.csv"))
        assert b.subjects() == ["s2", "s1"]
        assert np.array_equal(a.ratings, b.ratings[::-1][:, ::-1])

    def test_shipped_example(self):
        """Test the documented example dataset parses."""
        data = parse_dataset_csv(EXAMPLE)
        assert data.n_raters == 2
        assert data.n_replicates == 1

    def test_duplicate_cell(self, tmp_path):
        """Test a repeated cell is reported with its coordinates."""
        with pytest.raises(UnbalancedDesign) as exc:
            parse_dataset_csv(_write(tmp_path, SMALL + "s2,2,1,B,9.9\n"))
        assert exc.value.duplicates == [("s2", 2, 1, "B")]

    def test_missing_cell(self, tmp_path):
        """Test an absent cell is reported."""
        text = "\n".join(SMALL.strip().splitlines()[:-1]) + "\n"
        with pytest.raises(UnbalancedDesign) as exc:
            parse_dataset_csv(_write(tmp_path, text))
        assert exc.value.missing == [("s2", 2, 1, "B")]
        assert exc.value.exit_code == 1

    def test_bad_value_line(self, tmp_path):
        """Test a non-numeric value is reported with its file line."""
        text = SMALL.replace("s1,2,1,A,2.0", "s1,2,1,A,abc")
        with pytest.raises(ParseError) as exc:
            parse_dataset_csv(_write(tmp_path, text))
        assert exc.value.line == 4

    def test_fractional_time(self, tmp_path):
        """Test time points must be integers."""
        with pytest.raises(ParseError):
            parse_dataset_csv(_write(tmp_path, SMALL.replace("s1,2,1,A", "s1,2.5,1,A")))

    def test_wrong_header(self, tmp_path):
        """Test the header is checked on line 1."""
        with pytest.raises(ParseError) as exc:
            parse_dataset_csv(_write(tmp_path, SMALL.replace("value", "score", 1)))
        assert exc.value.line == 1

    def test_missing_file(self, tmp_path):
        """Test an absent file is a parse error."""
        with pytest.raises(ParseError):
            parse_dataset_csv(tmp_path / "absent.csv")

    def test_poisson_domain(self, tmp_path):
        """Test non-integer counts are rejected for the Poisson family."""
        text = SMALL.replace("s1,1,1,A,1.0", "s1,1,1,A,2.5")
        with pytest.raises(DomainError):
            parse_dataset_csv(_write(tmp_path, text), family=Family.POISSON)

    def test_gamma_domain(self, tmp_path):
        """Test non-positive ratings are rejected for the Gamma family."""
        text = SMALL.replace("s1,1,1,A,1.0", "s1,1,1,A,0")
        with pytest.raises(DomainError):
            parse_dataset_csv(_write(tmp_path, text), family=Family.GAMMA)

    def test_write_and_read_back(self, tmp_path, gaussian_data):
        """Test a written dataset reads back unchanged."""
        path = write_dataset_csv(gaussian_data, tmp_path / "out" / "sim.csv")
        again = parse_dataset_csv(path)
        assert again.dims == gaussian_data.dims
        assert np.allclose(again.ratings, gaussian_data.ratings)


class TestConfigFile:
    """Tests for key = value run configuration files."""

    def test_parse(self, tmp_path):
        """Test comments, blank lines and key normalization."""
        text = "# run settings\nN-Draws = 500\n\nalpha = 0.1  # ten percent\nmethods = fiducial,fisher_z\n"
        values = parse_config_file(_write(tmp_path, text, "run.cfg"))
        assert values == {"n_draws": "500", "alpha": "0.1", "methods": "fiducial,fisher_z"}

    def test_later_value_wins(self, tmp_path):
        """Test a repeated key keeps the later value."""
        values = parse_config_file(_write(tmp_path, "seed = 1\nseed = 2\n", "run.cfg"))
        assert values["seed"] == "2"

    def test_missing_equals(self, tmp_path):
        """Test a line without '=' is reported with its number."""
        with pytest.raises(ParseError) as exc:
            parse_config_file(_write(tmp_path, "alpha = 0.1\nverbose\n", "run.cfg"))
        assert exc.value.line == 2
