import numpy as np
import pytest

from core.errors import ArtifactError, PreconditionError, ShapeError
from core.nn import (
    Batch, LossKind, TrainConfig, embed, evaluate, forward, init_model, load_model, loss_and_grads, save_model,
    softmax, train,
)


def _targets(rng, kind: LossKind, n: int, width: int):
    if kind == LossKind.HARD_CE:
        return rng.integers(0, width, size=n)
    if kind == LossKind.SOFT_CE:
        return softmax(rng.normal(size=(n, width)))
    return rng.normal(size=(n, width))


def _numeric_grads(model, batch, kind, eps=1e-6):
    grads = []
    for param in model.parameters():
        grad = np.zeros_like(param)
        it = np.nditer(param, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = param[i]
            param[i] = old + eps
            up, _ = loss_and_grads(model, batch, kind)
            param[i] = old - eps
            down, _ = loss_and_grads(model, batch, kind)
            param[i] = old
            grad[i] = (up - down) / (2 * eps)
        grads.append(grad)
    return grads


@pytest.mark.parametrize("case", range(20))
def test_gradients_match_finite_differences(case):
    rng = np.random.default_rng(case)
    kind = list(LossKind)[case % 3]
    sizes = [int(rng.integers(2, 6))] + [int(rng.integers(3, 7)) for _ in range(case % 3)] + [int(rng.integers(2, 5))]
    model = init_model(sizes, seed=case)
    # keep pre-activations away from the rectifier kink
    for b in model.biases[:-1]:
        b += 0.1
    n = int(rng.integers(1, 6))
    batch = Batch(rng.normal(size=(n, sizes[0])), _targets(rng, kind, n, sizes[-1]))

    _, analytic = loss_and_grads(model, batch, kind)
    numeric = _numeric_grads(model, batch, kind)
    for a, g in zip(analytic, numeric):
        denominator = np.linalg.norm(a) + np.linalg.norm(g)
        if denominator < 1e-10:
            continue
        assert np.linalg.norm(a - g) / denominator < 1e-4


def test_init_is_deterministic_per_seed():
    a, b, c = init_model([4, 8, 3], 7), init_model([4, 8, 3], 7), init_model([4, 8, 3], 8)
    assert all(np.array_equal(x, y) for x, y in zip(a.parameters(), b.parameters()))
    assert not np.array_equal(a.weights[0], c.weights[0])
    assert all(np.all(bias == 0) for bias in a.biases)


@pytest.mark.parametrize("sizes", [[4], [4, 0, 2], [4, 2.5, 2]])
def test_invalid_layer_sizes(sizes):
    with pytest.raises(ShapeError):
        init_model(sizes, 0)


def test_forward_rejects_wrong_width():
    model = init_model([4, 3], 0)
    with pytest.raises(ShapeError):
        forward(model, np.zeros((2, 5)))


def test_posteriors_are_distributions():
    model = init_model([6, 10, 4], 1)
    post = forward(model, np.random.default_rng(0).normal(size=(50, 6)) * 30).posteriors
    assert np.all(post >= 0)
    np.testing.assert_allclose(post.sum(axis=1), 1.0, atol=1e-12)


def test_embed_returns_penultimate_activations():
    model = init_model([6, 10, 5, 4], 1)
    x = np.ones((3, 6))
    emb = embed(model, x)
    assert emb.shape == (3, 5)
    assert np.all(emb >= 0)
    with pytest.raises(ShapeError):
        embed(init_model([6, 4], 0), x)


def test_hard_ce_rejects_out_of_range_labels():
    model = init_model([3, 2], 0)
    with pytest.raises(ShapeError):
        loss_and_grads(model, Batch(np.zeros((2, 3)), np.array([0, 2])), LossKind.HARD_CE)


def test_soft_ce_rejects_rows_not_summing_to_one():
    model = init_model([3, 2], 0)
    with pytest.raises(ShapeError):
        loss_and_grads(model, Batch(np.zeros((1, 3)), np.array([[0.7, 0.7]])), LossKind.SOFT_CE)


def test_training_fits_separable_data():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 2))
    y = (x[:, 0] + x[:, 1] > 0).astype(np.int64)
    model, history = train(init_model([2, 16, 2], 0), Batch(x, y), TrainConfig(learning_rate=1e-2, batch_size=32, epochs=100))
    assert history[-1] < history[0]
    assert evaluate(model, Batch(x, y)) > 0.95


def test_training_is_reproducible():
    rng = np.random.default_rng(3)
    batch = Batch(rng.normal(size=(40, 3)), rng.integers(0, 2, size=40))
    config = TrainConfig(batch_size=8, epochs=5, seed=11)
    a, _ = train(init_model([3, 5, 2], 0), batch, config)
    b, _ = train(init_model([3, 5, 2], 0), batch, config)
    assert all(np.array_equal(x, y) for x, y in zip(a.parameters(), b.parameters()))


def test_batch_larger_than_dataset_is_refused():
    with pytest.raises(PreconditionError):
        train(init_model([2, 2], 0), Batch(np.zeros((4, 2)), np.zeros(4, dtype=np.int64)), TrainConfig(batch_size=8))


def test_artifact_keeps_parameters_bit_exact(tmp_path):
    model = init_model([5, 7, 3], 4)
    path = save_model(model, tmp_path / "m.npz", {"note": "kept"})
    loaded, header = load_model(path)
    assert loaded.layer_sizes == model.layer_sizes
    assert all(np.array_equal(a, b) for a, b in zip(loaded.parameters(), model.parameters()))
    assert header["metadata"] == {"note": "kept"}


def test_corrupt_artifact_is_rejected(tmp_path):
    path = tmp_path / "broken.npz"
    path.write_bytes(b"not an archive")
    with pytest.raises(ArtifactError):
        load_model(path)
    with pytest.raises(ArtifactError):
        load_model(tmp_path / "missing.npz")
