import json

import pytest

from mmpfn.config import ConfigError, emit_config, parse_config, validate_config


class TestDefaults:
    def test_empty_config_gets_all_defaults(self):
        cfg = validate_config({})
        assert cfg["training"]["learning_rate"] == 1e-5
        assert cfg["training"]["steps"] == 100
        assert cfg["training"]["seeds"] == [0, 1, 2, 3, 4]
        assert cfg["training"]["context_fraction"] == 0.8
        assert cfg["model"]["dim"] == 64
        assert cfg["pretrain"]["n_tasks"] == 20000

    def test_explicit_values_survive(self):
        cfg = validate_config({"training": {"learning_rate": 0.003, "steps": 7}})
        assert cfg["training"]["learning_rate"] == 0.003
        assert cfg["training"]["steps"] == 7
        assert cfg["training"]["seeds"] == [0, 1, 2, 3, 4]


class TestRejection:
    def test_misspelled_key_rejected_with_path(self):
        with pytest.raises(ConfigError, match="training.learing_rate"):
            validate_config({"training": {"learing_rate": 0.01}})

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="optimzer"):
            validate_config({"optimzer": {}})

    def test_wrong_type(self):
        with pytest.raises(ConfigError, match="training.steps"):
            validate_config({"training": {"steps": "many"}})

    def test_boolean_is_not_a_number(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            validate_config({"training": {"learning_rate": True}})

    def test_out_of_range(self):
        with pytest.raises(ConfigError, match="context_fraction"):
            validate_config({"training": {"context_fraction": 1.5}})

    def test_bad_enum(self):
        with pytest.raises(ConfigError, match="task.name"):
            validate_config({"task": {"name": "parity"}})

    def test_projector_requires_variant(self):
        with pytest.raises(ConfigError, match="projector.image.variant"):
            validate_config({"projector": {"image": {"n_heads": 4}}})

    def test_projector_unknown_key(self):
        with pytest.raises(ConfigError, match="projector.image.heads"):
            validate_config({"projector": {"image": {"variant": "mgm", "heads": 2}}})

    def test_invalid_variant_name(self):
        with pytest.raises(ConfigError, match="projector.image.variant"):
            validate_config({"projector": {"image": {"variant": "conv"}}})


class TestRoundTrip:
    def test_parse_emit_parse_is_stable(self, tmp_path):
        raw = {
            "model": {"dim": 32, "heads": 2},
            "projector": {"image": {"variant": "mgm", "n_heads": 8}},
            "training": {"learning_rate": 0.003},
        }
        p1 = tmp_path / "a.json"
        p1.write_text(json.dumps(raw))
        cfg1 = parse_config(p1)
        p2 = tmp_path / "b.json"
        p2.write_text(emit_config(cfg1))
        cfg2 = parse_config(p2)
        assert cfg1 == cfg2
        assert emit_config(cfg1) == emit_config(cfg2)

    def test_invalid_json_reports_path(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError, match="invalid JSON"):
            parse_config(p)


class TestReferenceConfigs:
    def test_packaged_configs_validate(self):
        import importlib.resources as res

        pkg_files = res.files("mmpfn") / "configs"
        names = [f.name for f in pkg_files.iterdir() if f.name.endswith(".json")]
        assert names, "no packaged reference configs found"
        for name in names:
            data = json.loads((pkg_files / name).read_text())
            validate_config(data)  # must not raise
