import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvguard import eot
from cvguard.eot import ModelFileError, TrainConfig, TrainingError, TrainingSet, VersionMismatchError


def toy_set(n=10, seed=0, dims=10):
    """Feature 0 carries the class: near -1 for class 0, near +1 for class 1."""
    rng = np.random.default_rng(seed)
    X = rng.normal(0, 1e-3, (2 * n, dims))
    X[:n, 0] = -1 + rng.uniform(-0.25, 0.25, n)
    X[n:, 0] = 1 + rng.uniform(-0.25, 0.25, n)
    return TrainingSet(X, np.array([0] * n + [1] * n))


def stump(label):
    return [[0, 0.0, 1, 2], [label], [label]]


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 99, 12345])
def test_separable_toy_has_zero_training_error(seed):
    model = eot.train(toy_set(seed=seed, dims=1), TrainConfig(seed=seed))
    assert model.training_error == 0.0
    model10 = eot.train(toy_set(seed=seed), TrainConfig(seed=seed))
    assert model10.training_error == 0.0


def test_single_stump_has_two_leaves():
    model = eot.train(toy_set(dims=1), TrainConfig(tree_count=1, max_depth=1))
    assert model.n_leaves == 2
    assert len(model.trees[0]) == 3 and model.trees[0][0][0] == 0


def test_predict_unanimous_and_tie():
    cfg = TrainConfig(tree_count=3, max_depth=1)
    x = np.zeros(10)
    assert eot.predict(eot.EotModel((stump(1),) * 3, cfg, 10, 0.0), x) == 1
    tie = eot.EotModel((stump(0), stump(1)), cfg, 10, 0.0)
    assert eot.predict(tie, x) == 0


def test_flipping_one_vote_moves_tally_by_one(model, corpus):
    x = corpus[0][0]
    votes = model.votes(x)
    for k in range(len(votes)):
        flipped = list(votes)
        flipped[k] = 1 - flipped[k]
        assert abs(sum(flipped) - sum(votes)) == 1
        assert eot.tally(flipped) in (0, 1)


def test_wrong_feature_length(model):
    with pytest.raises(ValueError):
        eot.predict(model, np.zeros(9))


def test_heldout_toy_points_beyond_gap():
    data = toy_set()
    model = eot.train(data, TrainConfig(seed=4))
    lo = data.X[data.y == 0, 0].max()
    hi = data.X[data.y == 1, 0].min()
    gap = hi - lo
    rng = np.random.default_rng(8)
    for sign, label in ((-1, 0), (1, 1)):
        for _ in range(50):
            x = rng.normal(0, 1e-3, 10)
            x[0] = (lo - gap / 2 - rng.uniform(0, 2)) if sign < 0 else (hi + gap / 2 + rng.uniform(0, 2))
            assert eot.predict(model, x) == label


@settings(max_examples=25, deadline=None)
@given(st.integers(4, 40), st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**32))
def test_leaf_bookkeeping(n, depth, trees, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 10))
    y = rng.integers(0, 2, n)
    y[0], y[1] = 0, 1
    model = eot.train(TrainingSet(X, y), TrainConfig(tree_count=trees, max_depth=depth, seed=seed % 1000))
    assert model.n_leaves == sum(eot.leaf_count(t) for t in model.trees)
    assert model.n_leaves <= trees * 2 ** depth
    for tree in model.trees:
        for node in tree:
            assert len(node) == 1 or 0 <= node[0] < 10
    assert set(eot.predict_many(model, X)) <= {0, 1}


def test_corpus_training_error(model):
    assert model.l == 80
    assert model.training_error <= 0.05


def test_training_is_deterministic(corpus):
    data = TrainingSet.from_vectors(*corpus)
    a = eot.dumps(eot.train(data, TrainConfig(seed=3)))
    b = eot.dumps(eot.train(data, TrainConfig(seed=3)))
    assert a == b
    assert eot.dumps(eot.train(data, TrainConfig(seed=4))) != a


def test_training_set_errors():
    with pytest.raises(TrainingError, match="single class"):
        TrainingSet(np.zeros((3, 10)), np.ones(3))
    with pytest.raises(TrainingError, match="empty"):
        TrainingSet(np.zeros((0, 10)), np.zeros(0))
    with pytest.raises(TrainingError, match="empty"):
        TrainingSet.from_vectors([], [])


def test_config_validation():
    for kwargs in (dict(tree_count=0), dict(max_depth=0), dict(min_leaf=0)):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


def test_training_set_csv_round_trip(tmp_path, corpus):
    data = TrainingSet.from_vectors(*corpus)
    data.to_csv(tmp_path / "train.csv")
    lines = (tmp_path / "train.csv").read_text().splitlines()
    assert lines[0] == "f0,f1,f2,f3,f4,f5,f6,f7,f8,f9,label"
    back = TrainingSet.from_csv(tmp_path / "train.csv")
    assert np.array_equal(back.X, data.X) and np.array_equal(back.y, data.y)


def test_save_load_save_byte_identical(tmp_path, model, corpus):
    first = eot.save(model, tmp_path / "a.json").read_bytes()
    loaded = eot.load(tmp_path / "a.json")
    second = eot.save(loaded, tmp_path / "b.json").read_bytes()
    assert first == second
    for fv in corpus[0] + corpus[1]:
        assert eot.predict(loaded, fv) == eot.predict(model, fv)
    assert loaded.n_leaves == model.n_leaves and loaded.training_error == model.training_error


def test_truncated_file(tmp_path, model):
    text = eot.dumps(model)
    (tmp_path / "m.json").write_text(text[: len(text) // 2])
    with pytest.raises(ModelFileError, match="malformed model file"):
        eot.load(tmp_path / "m.json")


def test_version_bump(tmp_path, model):
    doc = json.loads(eot.dumps(model))
    doc["version"] += 1
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(VersionMismatchError, match="version"):
        eot.load(tmp_path / "m.json")


def test_checksum_detects_tampering(tmp_path, model):
    doc = json.loads(eot.dumps(model))
    doc["model"]["training_error"] = 0.5
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(ModelFileError, match="checksum"):
        eot.load(tmp_path / "m.json")


def test_not_a_model(tmp_path):
    (tmp_path / "m.json").write_text('{"hello": 1}')
    with pytest.raises(ModelFileError):
        eot.load(tmp_path / "m.json")
    (tmp_path / "bin").write_bytes(b"\xff\xfe\x00")
    with pytest.raises(ModelFileError):
        eot.load(tmp_path / "bin")
