import pytest

from avatarlab.config import (
    SCHEMA_VERSION,
    ConfigError,
    default_config,
    load_config,
    resolve_config,
    save_config,
    to_objects,
    validate_config,
)
from avatarlab.curriculum import CurriculumConfig
from avatarlab.optimize import DEFAULT_LEARNING_RATES


class TestDefaults:
    def test_default_config_validates(self):
        validate_config(default_config())

    def test_round_trips_to_objects(self):
        train, curriculum, weights, corruption = to_objects(default_config())
        assert train.total_iters > 0
        assert isinstance(curriculum, CurriculumConfig)
        assert weights.lambda_l1 == 10.0
        assert corruption.tau > 0

    def test_default_learning_rates_mirrored(self):
        cfg = default_config()
        assert cfg["learning_rates"] == DEFAULT_LEARNING_RATES


class TestValidation:
    def test_unknown_top_level_key_named_in_error(self):
        with pytest.raises(ConfigError, match="bogus_key"):
            resolve_config({"bogus_key": 1})

    def test_unknown_nested_key_named_with_path(self):
        cfg = default_config()
        cfg["train"]["warp_speed"] = 9
        with pytest.raises(ConfigError, match="train"):
            validate_config(cfg)

    def test_missing_required_key_named(self):
        cfg = default_config()
        del cfg["seed"]
        with pytest.raises(ConfigError, match="seed"):
            validate_config(cfg)

    def test_wrong_schema_version_rejected(self):
        cfg = default_config()
        cfg["schema_version"] = SCHEMA_VERSION + 1
        with pytest.raises(ConfigError, match="schema_version"):
            validate_config(cfg)

    def test_bad_mode_rejected(self):
        with pytest.raises(ConfigError, match="mode"):
            resolve_config({"mode": "chaotic"})

    def test_wrong_type_names_key_path(self):
        with pytest.raises(ConfigError, match="train.total_iters"):
            resolve_config({"train": {"total_iters": "many"}})

    def test_stage_order_cross_field_check(self):
        with pytest.raises(ConfigError, match="k_temporal"):
            resolve_config(
                {"curriculum": {"k_temporal_syn": 9000, "k_temporal_real": 5000}}
            )


class TestMerge:
    def test_override_merges_deeply(self):
        cfg = resolve_config({"train": {"resolution": 128}})
        base = default_config()
        assert cfg["train"]["resolution"] == 128
        assert cfg["train"]["total_iters"] == base["train"]["total_iters"]
        assert cfg["loss_weights"] == base["loss_weights"]

    def test_mode_change_touches_nothing_else(self):
        a = resolve_config({"mode": "progressive"})
        b = resolve_config({"mode": "random"})
        a.pop("mode")
        b.pop("mode")
        assert a == b


class TestIo:
    def test_save_load_round_trip(self, tmp_path):
        cfg = resolve_config({"seed": 7, "train": {"resolution": 48}})
        path = tmp_path / "run.yaml"
        save_config(cfg, path)
        assert load_config(path) == cfg

    def test_load_validates(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("schema_version: 1\nseed: 0\nnonsense: true\n")
        with pytest.raises(ConfigError, match="nonsense"):
            load_config(path)

    def test_unparseable_yaml_reported(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("seed: [unclosed\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_missing_file_reported(self, tmp_path):
        with pytest.raises(ConfigError, match="no_such"):
            load_config(tmp_path / "no_such.yaml")

    def test_partial_file_fills_defaults(self, tmp_path):
        path = tmp_path / "partial.yaml"
        path.write_text("schema_version: 1\nseed: 3\nmode: random\n")
        cfg = load_config(path)
        assert cfg["seed"] == 3
        assert cfg["mode"] == "random"
        assert cfg["train"] == default_config()["train"]


def test_objects_reflect_overrides():
    cfg = resolve_config(
        {
            "train": {"total_iters": 123},
            "loss_weights": {"lambda_pos": 0.7},
            "oracle": {"sigma_pose": 3.0},
            "curriculum": {"n_frames": 4},
        }
    )
    train, curriculum, weights, corruption = to_objects(cfg)
    assert train.total_iters == 123
    assert weights.lambda_pos == 0.7
    assert corruption.sigma_pose == 3.0
    assert curriculum.n_frames == 4
