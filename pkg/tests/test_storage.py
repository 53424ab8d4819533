import numpy as np
import pytest

from repo_evolve.errors import DataError, MissingArtifactError
from repo_evolve.util.storage import (
    read_bundle,
    read_chains,
    read_event_table,
    read_json,
    write_bundle,
    write_chains,
    write_event_table,
)
from tests.conftest import hours, make_chain


def test_bundle_keeps_exact_values(tmp_path):
    tensors = {
        "weights": np.random.default_rng(0).normal(size=(3, 4)).astype(np.float32),
        "counts": np.arange(5, dtype=np.int64),
        "scalar": np.array(1e-300),
        "fortran": np.asfortranarray(np.arange(6, dtype=np.float64).reshape(2, 3)),
        "big_endian": np.arange(4, dtype=">i4"),
    }
    write_bundle(tmp_path / "x.bundle", tensors, {"kind": "test", "dim": 4})
    loaded, meta = read_bundle(tmp_path / "x.bundle", "train")
    assert meta == {"kind": "test", "dim": 4}
    for name, array in tensors.items():
        assert loaded[name].shape == array.shape, name
        assert np.array_equal(loaded[name], array), name
    assert loaded["scalar"].shape == ()
    assert loaded["weights"].dtype == np.float32
    assert loaded["big_endian"].dtype == np.dtype("<i4")


def test_bundle_bytes_are_deterministic(tmp_path):
    tensors = {"b": np.ones(3), "a": np.zeros((2, 2), dtype=np.float32)}
    write_bundle(tmp_path / "1.bundle", tensors, {"z": 1, "a": 2})
    write_bundle(tmp_path / "2.bundle", dict(reversed(list(tensors.items()))), {"a": 2, "z": 1})
    assert (tmp_path / "1.bundle").read_bytes() == (tmp_path / "2.bundle").read_bytes()


def test_bad_bundles(tmp_path):
    path = tmp_path / "bad.bundle"
    path.write_bytes(b"not json\n\x00")
    with pytest.raises(DataError):
        read_bundle(path, "train")

    write_bundle(path, {"w": np.ones(10)}, {})
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DataError):
        read_bundle(path, "train")


def test_missing_artifact_names_the_stage(tmp_path):
    with pytest.raises(MissingArtifactError) as error:
        read_json(tmp_path / "groups.json", "group-users")
    assert "repo-evolve group-users" in str(error.value)
    assert error.value.exit_code == 2


def test_chains_survive_a_round_trip(tmp_path):
    chains = [
        make_chain("r1", [("Push", "a", 0), ("Watch", "b", 3.5), ("Fork", "a", 800)]),
        make_chain("r2", [("Issues", "c", 10)]),
    ]
    write_chains(tmp_path / "chains.tsv", chains)
    loaded = read_chains(tmp_path / "chains.tsv")
    assert loaded == {chain.repo_id: chain for chain in chains}


def test_event_table(tmp_path):
    rows = [("r1", "Push", 0, hours(1), 1.5, 0.9, 0.8), ("r1", "NoEventForOneMonth", 3, hours(721), 720.0, 1.0, 1.0)]
    write_event_table(tmp_path / "run.tsv", rows)
    frame = read_event_table(tmp_path / "run.tsv", "simulate")
    assert frame["event_type"].tolist() == ["Push", "NoEventForOneMonth"]
    assert frame["delay_hours"].tolist() == [1.5, 720.0]

    (tmp_path / "short.tsv").write_text("repo_id\tevent_type\nr\tPush\n", encoding="utf-8")
    with pytest.raises(DataError):
        read_event_table(tmp_path / "short.tsv", "simulate")
