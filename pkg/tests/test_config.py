import json

import pytest

from quantctl import config as cfgmod
from quantctl.config import ConfigError
from quantctl.sim import ErasureRate, FixedRate, RateSchedule


def _mc(**over):
    cfg = {
        "kind": "monte_carlo",
        "plant": {"a": 1.2, "disturbance": "gaussian:0,1", "horizon": 5},
        "rates": {"model": "fixed", "rate": 1},
        "policy": {"name": "greedy"},
        "trials": 10,
        "seed": 3,
    }
    cfg.update(over)
    return cfg


def _err(cfg):
    with pytest.raises(ConfigError) as exc:
        cfgmod.validate(cfg)
    return exc.value


class TestValidate:
    def test_minimal_ok(self):
        cfgmod.validate(_mc())

    def test_missing_kind(self):
        assert "kind" in str(_err({}))

    def test_unknown_top_level_key(self):
        assert "bogus" in str(_err(_mc(bogus=1)))

    def test_path_of_nested_error(self):
        cfg = _mc()
        cfg["plant"]["horizon"] = 0
        assert _err(cfg).path == "plant.horizon"

    def test_zero_gain_rejected(self):
        cfg = _mc()
        cfg["plant"]["a"] = 0
        assert _err(cfg).path == "plant.a"

    def test_array_index_in_path(self):
        cfg = _mc(policy={"name": "event", "rate_bar": [0.5, 1.5]})
        assert _err(cfg).path == "policy.rate_bar[1]"

    def test_bad_pdf_string(self):
        cfg = _mc()
        cfg["plant"]["disturbance"] = "gaussian"
        assert _err(cfg).path == "plant.disturbance"

    @pytest.mark.parametrize(
        "rates",
        [
            {"model": "fixed"},
            {"model": "fixed", "rate": 1, "p_drop": 0.1},
            {"model": "schedule", "rate": 1},
            {"model": "erasure", "rate": 1},
        ],
    )
    def test_rate_model_fields(self, rates):
        _err(_mc(rates=rates))

    def test_event_needs_rate_bar(self):
        assert _err(_mc(policy={"name": "event"})).path == "policy"

    def test_lqr_policy_kind_mismatch(self):
        assert _err(_mc(policy={"name": "lqr"})).path == "policy.name"
        cfg = _mc(kind="lqr_exact")
        assert _err(cfg).path == "policy.name"

    def test_bennett_requires_rates(self):
        _err({"kind": "bennett", "densities": ["gaussian:0,1"]})
        cfgmod.validate({"kind": "bennett", "densities": ["gaussian:0,1"], "bennett_rates": [1, 2]})


class TestLoad:
    def test_defaults_filled(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({k: v for k, v in _mc().items() if k not in ("trials", "seed")}))
        cfg = cfgmod.load(p)
        assert cfg["trials"] == cfgmod.DEFAULTS["trials"]
        assert cfg["seed"] == 0
        assert cfg["numerics"] == cfgmod.DEFAULTS["numerics"]
        assert cfg["cost"] == {"state_weight": 1.0, "control_weight": 0.0}

    def test_partial_numerics_merged(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps(_mc(numerics={"points": 128})))
        num = cfgmod.load(p)["numerics"]
        assert num["points"] == 128
        assert num["max_points"] == cfgmod.DEFAULTS["numerics"]["max_points"]

    def test_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{ not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            cfgmod.load(p)

    @pytest.mark.parametrize("name", cfgmod.PRESETS)
    def test_presets_load(self, name):
        cfg = cfgmod.load_preset(name)
        assert cfg["name"] == name

    def test_unknown_preset(self):
        with pytest.raises(cfgmod.InvalidParameterError):
            cfgmod.preset_path("fig9")


class TestBuild:
    def _cfg(self, **over):
        return cfgmod.with_defaults(_mc(numerics={"points": 64, "tail_mass": 1e-6, "max_points": 128}, **over))

    def test_build_spec(self):
        spec = cfgmod.build_spec(self._cfg())
        assert spec.a == 1.2
        assert spec.horizon == 5
        assert spec.mode == "iid"

    def test_schedule_length_checked(self):
        cfg = self._cfg(rates={"model": "schedule", "rates": [1, 2]})
        with pytest.raises(ConfigError) as exc:
            cfgmod.build_spec(cfg)
        assert exc.value.path == "rates.rates"

    def test_rate_models(self):
        assert cfgmod.rate_model(self._cfg()) == FixedRate(1)
        sched = self._cfg(rates={"model": "schedule", "rates": [1, 2, 0, 1]})
        assert cfgmod.rate_model(sched) == RateSchedule((1, 2, 0, 1))
        er = self._cfg(rates={"model": "erasure", "p_drop": 0.2, "rate": 2})
        assert cfgmod.rate_model(er) == ErasureRate(0.2, 2)

    def test_greedy_experiment(self):
        [(label, exp)] = cfgmod.experiments(self._cfg())
        assert label == "greedy"
        assert exp.trials == 10 and exp.seed == 3

    def test_event_experiments(self):
        cfg = self._cfg(policy={"name": "event", "rate_bar": [0.6, 0.8], "baseline": True})
        exps = cfgmod.experiments(cfg)
        assert [label for label, _ in exps] == ["rbar0.6", "rbar0.8", "greedy_R1"]
        assert exps[0][1].delta == pytest.approx(0.4)
        assert exps[2][1].policy == "greedy"
