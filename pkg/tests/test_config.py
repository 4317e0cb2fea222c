import pytest

from gagcn.config import apply_overrides, from_dict, load_config, to_dict
from gagcn.exceptions import ConfigurationError
from gagcn.trainer import HORIZONS_MS, AblationConfig


def test_defaults():
    cfg = from_dict({})
    assert cfg.data.source == "synthetic" and cfg.model.width == 64 and cfg.train.learning_rate == 1e-3
    assert tuple(cfg.eval.horizons) == HORIZONS_MS and cfg.eval.metrics == ["mpjpe"]
    assert cfg.ablation.train == AblationConfig().train


def test_load_toml(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('[model]\nwidth = 16\nn = 2\n\n[train]\nepochs = 3\n\n[output]\ndir = "out/x"\n')
    cfg = load_config(path)
    assert (cfg.model.width, cfg.model.n, cfg.train.epochs) == (16, 2, 3)
    assert str(cfg.output_dir) == "out/x" and cfg.source == str(path)
    # A [train] table overrides the ablation schedule field by field.
    assert cfg.ablation.train.epochs == 3
    assert cfg.ablation.train.learning_rate == AblationConfig().train.learning_rate


@pytest.mark.parametrize("raw,needle", [
    ({"model": {"widht": 3}}, r"\[model\] widht: unknown key"),
    ({"train": {"epochs": "ten"}}, r"\[train\] epochs"),
    ({"data": {"classes": ["moonwalk"]}}, r"\[data\] classes"),
    ({"data": {"source": "csv"}}, r"\[data\] paths"),
    ({"model": {"gated": False}}, r"\[model\] gated"),
    ({"eval": {"metrics": ["rmse"]}}, r"\[eval\] metrics"),
    ({"extras": {}}, "unknown config table"),
    ({"suite": "all"}, "suite"),
    ({"train": {"learning_rate": -1.0}}, r"\[train\]"),
])
def test_field_level_errors(raw, needle):
    with pytest.raises(ConfigurationError, match=needle):
        from_dict(raw)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        load_config(tmp_path / "nope.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[model\nwidth = 1\n")
    with pytest.raises(ConfigurationError, match="invalid TOML"):
        load_config(bad)


def test_overrides_merge_and_revalidate():
    cfg = from_dict({"train": {"epochs": 4}})
    new = apply_overrides(cfg, {"train.learning_rate": 0.01, "model.width": None, "suite": "candidate_sweep"})
    assert (new.train.epochs, new.train.learning_rate, new.suite) == (4, 0.01, "candidate_sweep")
    assert new.model.width == 64 and cfg.train.learning_rate == 1e-3
    with pytest.raises(ConfigurationError):
        apply_overrides(cfg, {"model.n": 0})


def test_to_dict_roundtrip():
    cfg = from_dict({"model": {"width": 8}, "ablation": {"held_out": "sit_down", "seeds": [0, 1]}})
    again = from_dict(to_dict(cfg))
    assert to_dict(again) == to_dict(cfg)
    assert again.ablation.held_out_classes == ("sit_down",)
