import pytest

from smoothdiv.config import dump_spec, load_config, parse_config
from smoothdiv.errors import ConfigError
from smoothdiv.measures import Gaussian, GaussianMixture, PointCloud, UniformBox

GAUSSIAN = {"variant": "gaussian", "mean": [0.0], "covariance": [[0.25]]}


class TestParse:
    def test_full(self):
        s = parse_config({"measure": GAUSSIAN, "sigma": 1, "n_grid": [50, 500], "reps": "20", "seed": 3})
        assert isinstance(s["spec"], Gaussian)
        assert s["sigma"] == 1.0 and s["reps"] == 20 and s["n_grid"] == [50.0, 500.0] and s["seed"] == 3

    def test_bare_measure(self):
        assert isinstance(parse_config(GAUSSIAN)["spec"], Gaussian)

    @pytest.mark.parametrize("measure,kind", [
        ({"variant": "uniform_box", "lo": [0, 0], "hi": [1, 1]}, UniformBox),
        ({"variant": "point_cloud", "points": [[0.0], [1.0]]}, PointCloud),
        ({"variant": "gaussian_mixture", "weights": [0.5, 0.5],
          "components": [{"mean": [0.0], "covariance": [[1.0]]}, {"mean": [2.0], "covariance": [[0.5]]}]},
         GaussianMixture),
    ])
    def test_variants(self, measure, kind):
        assert isinstance(parse_config({"measure": measure})["spec"], kind)

    @pytest.mark.parametrize("doc", [
        [1, 2], {"sigma": 1.0}, {"measure": GAUSSIAN, "bogus": 1}, {"measure": GAUSSIAN, "reps": "many"},
        {"measure": {"variant": "cauchy"}}, {"measure": {"variant": "gaussian", "mean": [0.0]}},
    ])
    def test_rejects(self, doc):
        with pytest.raises(ConfigError):
            parse_config(doc)


class TestFiles:
    def test_round_trip(self, tmp_path):
        spec = PointCloud([[0.0, 1.0], [2.0, -1.0]], [0.25, 0.75])
        path = tmp_path / "c.yaml"
        path.write_text(dump_spec(spec) + "sigma: 0.5\n")
        s = load_config(path)
        assert s["spec"].to_dict() == spec.to_dict() and s["sigma"] == 0.5

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.yaml")

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("measure: [unclosed\n")
        with pytest.raises(ConfigError, match="invalid YAML"):
            load_config(path)
