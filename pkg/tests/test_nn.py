import numpy as np
import pytest

from isomesh.geometry import build_icosphere
from isomesh.nn import (
    LAYER_SIZES,
    Mlp,
    PairSet,
    TrainConfig,
    TrainingDiverged,
    load_checkpoint,
    loss_and_grads,
    mlp_forward,
    mlp_init,
    mlp_train,
    normal_penalty,
    save_checkpoint,
)


def fd_relative_error(mlp: Mlp, sets, h=1e-4, squared=False):
    """Relative L2 gap between backprop and central differences over every parameter."""
    _, grads = loss_and_grads(mlp, sets, squared)
    analytic, numeric = [], []
    for p, g in zip(mlp.params(), grads):
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp, _ = loss_and_grads(mlp, sets, squared)
            flat[i] = old - h
            lm, _ = loss_and_grads(mlp, sets, squared)
            flat[i] = old
            numeric.append((lp - lm) / (2 * h))
        analytic.append(g.reshape(-1))
    a = np.concatenate(analytic)
    n = np.array(numeric)
    return np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-300)


def random_instance(seed):
    rng = np.random.default_rng(seed)
    sizes = (3, int(rng.integers(2, 7)), int(rng.integers(2, 7)), 3)
    mlp = mlp_init(seed, sizes, dtype=np.float64)
    x = rng.normal(size=(int(rng.integers(3, 9)), 3))
    y = rng.normal(size=x.shape)
    return mlp, x, y


def test_layer_sizes_fixed():
    assert mlp_init(0).layer_sizes == LAYER_SIZES == (3, 128, 256, 512, 512, 3)


def test_init_deterministic_and_seeded():
    a, b, c = mlp_init(3), mlp_init(3), mlp_init(4)
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))
    assert not all(np.array_equal(p, q) for p, q in zip(a.params(), c.params()))
    for w in a.weights:
        assert np.abs(w).max() <= 1 / np.sqrt(w.shape[0])


def test_forward_origin_finite():
    out = mlp_forward(mlp_init(1), np.zeros(3))
    assert out.shape == (3,) and np.all(np.isfinite(out))


def test_zero_network_outputs_zero():
    m = mlp_init(0)
    z = Mlp([np.zeros_like(w) for w in m.weights], [np.zeros_like(b) for b in m.biases])
    assert np.array_equal(z.forward(np.random.default_rng(0).normal(size=(7, 3))), np.zeros((7, 3)))


def test_forward_batch_preserves_order():
    m = mlp_init(2)
    x = np.random.default_rng(1).normal(size=(10, 3)).astype(np.float32)
    batch = m.forward(x)
    for i in range(10):
        np.testing.assert_allclose(batch[i], m.forward(x[i]), rtol=1e-5, atol=1e-6)


def test_rejects_wrong_widths():
    with pytest.raises(ValueError):
        Mlp([np.zeros((2, 4)), np.zeros((4, 3))], [np.zeros(4), np.zeros(3)])


# --- gradients --------------------------------------------------------------


def test_one_hidden_unit_hand_gradients():
    # 3-1-3 network; the second input lands on the inactive side of the ReLU
    W1 = np.array([[1.0], [-2.0], [0.5]])
    b1 = np.array([0.1])
    W2 = np.array([[2.0, -1.0, 0.5]])
    b2 = np.array([0.0, 0.5, -0.5])
    mlp = Mlp([W1, W2], [b1, b2])
    x = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 0.0]])
    y = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])

    # pair 1: z = 1 + 0 + 1 + 0.1 = 2.1 -> h = 2.1; out = (4.2, -1.6, 0.55)
    # pair 2: z = -2 + 0.1 = -1.9 -> h = 0;  out = b2 = (0, 0.5, -0.5)
    r1 = np.array([4.2, -1.6, 0.55])
    r2 = np.array([-1.0, -0.5, -1.5])
    n1, n2 = np.linalg.norm(r1), np.linalg.norm(r2)
    loss_expected = (n1 + n2) / 2
    u1, u2 = r1 / n1 / 2, r2 / n2 / 2  # d loss / d out for each pair
    dW2 = 2.1 * u1[None, :]
    db2 = u1 + u2
    dz1 = float(u1 @ W2[0])  # pair 2 contributes nothing through the dead unit
    dW1 = x[0][:, None] * dz1
    db1 = np.array([dz1])

    loss, g = loss_and_grads(mlp, [PairSet(x, y)])
    assert loss == pytest.approx(loss_expected, rel=1e-14)
    for got, want in zip(g, [dW1, db1, dW2, db2]):
        np.testing.assert_allclose(got, want, rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    mlp, x, y = random_instance(seed)
    assert fd_relative_error(mlp, [PairSet(x, y)]) < 1e-4


def test_gradients_two_term_and_squared():
    mlp, x, y = random_instance(42)
    rng = np.random.default_rng(9)
    second = PairSet(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), 0.5)
    assert fd_relative_error(mlp, [PairSet(x, y), second]) < 1e-4
    assert fd_relative_error(mlp, [PairSet(x, y)], squared=True) < 1e-4


def test_loss_is_mean_of_unsquared_norms():
    mlp, x, y = random_instance(7)
    out = mlp.forward(x)
    loss, _ = loss_and_grads(mlp, [PairSet(x, y)])
    assert loss == pytest.approx(np.linalg.norm(out - y, axis=1).mean(), rel=1e-13)
    sq, _ = loss_and_grads(mlp, [PairSet(x, y)], squared=True)
    assert sq == pytest.approx((np.linalg.norm(out - y, axis=1) ** 2).mean(), rel=1e-13)


# --- training ---------------------------------------------------------------


def _small_cfg(**kw):
    base = dict(epochs=200, learning_rate=1e-3)
    base.update(kw)
    return TrainConfig(**base)


def test_memorizes_identity():
    x = np.random.default_rng(0).uniform(-1, 1, size=(50, 3))
    mlp = mlp_init(0, (3, 64, 64, 3))
    rep = mlp_train(mlp, x, x, _small_cfg(epochs=600))
    assert rep.final_loss < rep.initial_loss
    assert rep.final_loss < 0.05
    assert rep.epochs_run == 600


def test_alpha_zero_second_set_inert():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(20, 3)), rng.normal(size=(20, 3))
    x2, y2 = rng.normal(size=(9, 3)), rng.normal(size=(9, 3))
    a, b = mlp_init(5, (3, 16, 16, 3)), mlp_init(5, (3, 16, 16, 3))
    mlp_train(a, x, y, _small_cfg(epochs=30, alpha=0.0))
    mlp_train(b, x, y, _small_cfg(epochs=30, alpha=0.0), second=(x2, y2))
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))


def test_alpha_positive_second_set_matters():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(20, 3)), rng.normal(size=(20, 3))
    x2, y2 = rng.normal(size=(9, 3)), rng.normal(size=(9, 3))
    a, b = mlp_init(5, (3, 16, 16, 3)), mlp_init(5, (3, 16, 16, 3))
    mlp_train(a, x, y, _small_cfg(epochs=5, alpha=0.5))
    mlp_train(b, x, y, _small_cfg(epochs=5, alpha=0.5), second=(x2, y2))
    assert not all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))


def test_training_bit_reproducible():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(30, 3)), rng.normal(size=(30, 3))
    runs = []
    for _ in range(2):
        m = mlp_init(11, (3, 32, 32, 3))
        mlp_train(m, x, y, _small_cfg(epochs=40))
        runs.append(m)
    assert all(np.array_equal(p, q) for p, q in zip(runs[0].params(), runs[1].params()))


def test_tiny_learning_rate_keeps_parameters():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
    m = mlp_init(0, (3, 8, 3), dtype=np.float64)
    before = [p.copy() for p in m.params()]
    mlp_train(m, x, y, TrainConfig(epochs=20, learning_rate=1e-300, optimizer="sgd"))
    assert all(np.array_equal(p, q) for p, q in zip(before, m.params()))


def test_non_finite_loss_aborts():
    x = np.ones((4, 3))
    y = np.full((4, 3), np.inf)
    with pytest.raises(TrainingDiverged):
        mlp_train(mlp_init(0, (3, 4, 3)), x, y, _small_cfg(epochs=3))


def test_trainconfig_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(alpha=1.5)


# --- normal penalty ---------------------------------------------------------


def test_penalty_identity_is_one():
    m = build_icosphere(6)
    assert normal_penalty(m, m) == pytest.approx(1.0)


def test_penalty_point_reflection_keeps_normals():
    # (-x) x (-y) = x x y: negating every vertex leaves each patch normal unchanged
    m = build_icosphere(6)
    assert normal_penalty(m, m.with_vertices(-m.vertices)) == pytest.approx(1.0)


def test_penalty_plane_mirror():
    # mirroring x flips n to (n_x, -n_y, -n_z); the sphere average of n_x^2 - n_y^2 - n_z^2 is -1/3
    m = build_icosphere(16)
    assert normal_penalty(m, m.with_vertices(m.vertices * [-1, 1, 1])) == pytest.approx(-1 / 3, abs=0.01)


def test_penalty_gentle_radial_field():
    m = build_icosphere(12)
    v = m.vertices
    bumped = v * (1 + 0.05 * np.sin(3 * v[:, [0]]) * np.cos(2 * v[:, [1]]))
    assert normal_penalty(m, m.with_vertices(bumped)) > 0.9


def test_penalty_needs_same_connectivity():
    with pytest.raises(ValueError):
        normal_penalty(build_icosphere(2), build_icosphere(3))


# --- checkpoints ------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    m = mlp_init(8, (3, 5, 7, 3), dtype=np.float64)
    path = tmp_path / "net.bin"
    save_checkpoint(m, path)
    raw = path.read_bytes()
    assert int.from_bytes(raw[:8], "little") == 4
    back = load_checkpoint(path, dtype=np.float64)
    assert back.layer_sizes == (3, 5, 7, 3)
    assert all(np.array_equal(p, q) for p, q in zip(m.params(), back.params()))


def test_checkpoint_trailing_bytes(tmp_path):
    m = mlp_init(8, (3, 4, 3))
    path = tmp_path / "net.bin"
    save_checkpoint(m, path)
    with open(path, "ab") as fh:
        fh.write(b"\0" * 8)
    with pytest.raises(ValueError):
        load_checkpoint(path)
