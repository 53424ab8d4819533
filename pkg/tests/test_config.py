import pytest

from repo_evolve.errors import ConfigError
from repo_evolve.models.config import PRESETS, RepoEmbeddingMode, build_config, load_config


def test_defaults():
    config = build_config({})
    assert config.grouping.n_groups == 100
    assert config.model.lstm_hidden == (250, 150)
    assert config.model.window_size == 20
    assert config.features.use_repo_embedding == RepoEmbeddingMode.LEARNED
    assert config.windows.to_windows().sim_end == 1_504_224_000


def test_preset_sets_flags_and_explicit_values_win():
    config = build_config({"preset": "baseline"})
    assert config.features.use_repo_embedding == RepoEmbeddingMode.NONE
    assert not config.features.use_group_activity

    config = build_config({"preset": "baseline", "features": {"use_group_activity": True}})
    assert config.features.use_group_activity
    assert not config.features.use_no_event_type

    assert build_config({"preset": "sts_all"}).model.loss_weights == (1.0, 0.0, 0.0)


def test_every_preset_validates():
    for name in PRESETS:
        build_config({"preset": name})


def test_overrides():
    config = build_config({"model": {"epochs": 5}}, ["model.epochs=7", "features.use_repo_embedding=index", "model.lstm_hidden=[4, 3]"])
    assert config.model.epochs == 7
    assert config.features.use_repo_embedding == RepoEmbeddingMode.INDEX
    assert config.model.lstm_hidden == (4, 3)
    assert build_config({}, ["preset=mts_all_11"]).features.use_no_event_type is False


@pytest.mark.parametrize(
    "raw, field",
    [
        ({"model": {"dropout": 1.5}}, "model.dropout"),
        ({"grouping": {"n_groups": 0}}, "grouping.n_groups"),
        ({"model": {"unknown": 1}}, "model.unknown"),
        ({"preset": "nope"}, "preset"),
        ({"embedding": {"layers": 3}}, "embedding"),
        ({"windows": {"sim_end": 0}}, "windows"),
    ],
)
def test_invalid_fields_are_named(raw, field):
    with pytest.raises(ConfigError) as error:
        build_config(raw)
    assert field in str(error.value)
    assert error.value.exit_code == 1


def test_bad_override_syntax():
    with pytest.raises(ConfigError):
        build_config({}, ["model.epochs"])


def test_iso_windows(tmp_path):
    path = tmp_path / "config.toml"
    path.write_text(
        '[windows]\nsim_start = "2017-08-16T00:00:00"\nsim_end = 2017-09-01T00:00:00Z\n', encoding="utf-8"
    )
    windows = load_config(path).windows
    assert windows.sim_start == 1_502_841_600
    assert windows.sim_end == 1_504_224_000


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    broken = tmp_path / "broken.toml"
    broken.write_text("[model\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(broken)


def test_config_hash_is_stable():
    a = build_config({"model": {"epochs": 3}})
    b = build_config({}, ["model.epochs=3"])
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != build_config({}).config_hash()
