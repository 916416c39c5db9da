import pytest

from ctgames.config import parse_config, parse_config_text
from ctgames.errors import ConfigError


def cfg(text, **kw):
    return parse_config_text(text, "run.yaml", **kw)


class TestDefaults:
    def test_renewal_defaults(self):
        c = cfg("command: solve\nmodel:\n  family: renewal\n")
        assert c.model == {}
        assert c.solver["tol"] == 1e-13
        assert c.theta == {"lambda_L": 0.05, "lambda_H": 0.10, "gamma": 0.5, "beta": -2.0, "mu": -9.0}
        assert c.seed == 0 and c.threads == 1
        assert c.identify["hazards"] == "intensity"
        assert c.mc["schemes"] == ["continuous"]

    def test_theta_override(self):
        c = cfg("command: solve\nmodel: {family: renewal, K: 20}\ntheta: {gamma: 0.7}\n")
        assert c.model["K"] == 20 and c.theta["gamma"] == 0.7

    def test_cli_overrides(self):
        c = cfg("command: solve\nmodel: {family: entry}\nseed: 3\n", overrides={"seed": 9, "output": None})
        assert c.seed == 9 and c.output == "out"

    def test_digest_is_stable(self):
        text = "command: solve\nmodel: {family: entry}\n"
        assert cfg(text).digest == cfg(text).digest
        assert len(cfg(text).digest) == 64

    def test_mc_design_echo(self):
        c = cfg("command: mc\nmodel: {family: renewal}\n"
                "mc: {markets: 200, horizon: 120, schemes: [continuous, 1, 8], replications: 25}\n")
        assert c.mc["schemes"] == ["continuous", 1.0, 8.0]
        assert c.to_dict()["mc"]["markets"] == 200

    def test_relative_data_path(self, tmp_path):
        p = tmp_path / "est.yaml"
        p.write_text("command: estimate\nmodel: {family: renewal}\ndata: {path: events.csv}\n")
        assert parse_config(p).data["path"] == str(tmp_path / "events.csv")


class TestErrors:
    @pytest.mark.parametrize("text,msg", [
        ("command: solve\nmodel:\n  family: renewal\ntheta:\n  lambda_L: -0.1\n", r"run\.yaml:5: theta\.lambda_L"),
        ("command: solve\nmodel: {family: renewal}\nbogus: 1\n", r"run\.yaml:3: bogus: unknown key"),
        ("command: solve\nmodel: {family: renewal}\nsolver:\n  tolerance: 1\n", r"run\.yaml:4: solver\.tolerance"),
        ("command: fly\nmodel: {family: renewal}\n", "command: must be one of"),
        ("model: {family: renewal}\n", "missing required key 'command'"),
        ("command: solve\nmodel: {family: auction}\n", "model.family"),
        ("command: solve\nmodel: {family: renewal, K: 1}\n", "K >= 2"),
        ("command: solve\nmodel: {family: renewal}\ntheta: {delta: 1}\n", "unknown parameter"),
        ("command: estimate\nmodel: {family: renewal}\n", "data.path: required"),
        ("command: solve\nmodel: {family: renewal}\nsimulate: {sampling: -1}\n", "simulate.sampling"),
        ("command: solve\nmodel: {family: renewal}\nsolver: {max_iter: 2.5}\n", "must be an integer"),
        ("command: solve\nmodel: {family: entry}\nidentify: {value_pins: [{state: 9, value: 0}]}\n",
         "state 9 outside 1..8"),
        ("command: solve\nmodel: {family: entry}\nidentify: {hazards: model}\n", "intensity"),
        ("command: solve\nmodel: {family: entry, flow_payoff_table: [[1, 2]]}\n", "2 rows of 8"),
        ("command: solve\nmodel: [1, 2]\n", "model"),
        ("- a\n- b\n", "top level"),
        ("command: solve\nmodel: {family: renewal\n", "invalid YAML"),
    ])
    def test_messages(self, text, msg):
        with pytest.raises(ConfigError, match=msg):
            cfg(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            parse_config(tmp_path / "nope.yaml")

    def test_ladder_entry_rung(self):
        with pytest.raises(ConfigError, match="omega_entry"):
            cfg("command: solve\nmodel: {family: ladder, omega_bar: 3, omega_entry: 5}\n")
