import json

import pytest

from lldd import config as cfgmod
from lldd.config import ConfigError


class TestSchema:
    def test_defaults(self):
        cfg = cfgmod.default()
        assert cfg.cohort.patients == 10
        assert cfg.degradation.kind == "sr"
        assert cfg.distill.steps == 2000
        assert cfg.spg.code_dim == 2
        assert cfg.seeds["root"] == 0

    def test_round_trip_through_dict(self):
        cfg = cfgmod.default()
        again = cfgmod.from_dict(cfg.to_dict())
        assert again.to_dict() == cfg.to_dict()

    def test_unknown_top_level_rejected(self):
        with pytest.raises(ConfigError, match="unknown top-level"):
            cfgmod.from_dict({"cohorts": {}})

    def test_unknown_section_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            cfgmod.from_dict({"cohort": {"patients": 4, "slice_count": 9}})

    def test_unknown_seed_rejected(self):
        with pytest.raises(ConfigError, match="seed names"):
            cfgmod.from_dict({"seeds": {"roots": 3}})

    def test_invalid_value_propagates(self):
        with pytest.raises(ConfigError, match="cohort"):
            cfgmod.from_dict({"cohort": {"patient_jitter": 0.9}})

    def test_net_spec_validated(self):
        with pytest.raises(ConfigError, match="arch"):
            cfgmod.from_dict({"distill": {"net": {"arch": "lenet"}}})
        cfg = cfgmod.from_dict(
            {"distill": {"net": {"arch": "srcnn_lite", "channels": [8, 4]}}})
        assert cfg.network_spec().channels == (8, 4)
        assert cfg.network_spec().kernels == (9, 1, 5)


class TestResolve:
    def test_all_seeds_explicit_after_resolution(self):
        cfg = cfgmod.resolve(cfgmod.from_dict({"seeds": {"root": 42}}))
        for name in ("root", "cohort", "distill", "train", "select",
                     "export", "test"):
            assert name in cfg.seeds
        assert cfg.seeds["root"] == 42
        again = cfgmod.resolve(cfgmod.from_dict({"seeds": {"root": 42}}))
        assert again.seeds == cfg.seeds

    def test_env_override(self, monkeypatch):
        monkeypatch.setenv(cfgmod.ENV_SEED, "777")
        cfg = cfgmod.default()
        assert cfg.seeds["root"] == 777

    def test_bad_env_value(self, monkeypatch):
        monkeypatch.setenv(cfgmod.ENV_SEED, "not-a-number")
        with pytest.raises(ConfigError, match="LLDD_SEED"):
            cfgmod.default()

    def test_load_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"cohort": {"patients": 3},
                                    "seeds": {"root": 5}}))
        cfg = cfgmod.load(path)
        assert cfg.cohort.patients == 3
        assert cfg.seeds["root"] == 5

    def test_load_missing_or_invalid(self, tmp_path):
        with pytest.raises(ConfigError, match="no such config"):
            cfgmod.load(tmp_path / "absent.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError, match="invalid JSON"):
            cfgmod.load(bad)
