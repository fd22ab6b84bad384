import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flipvdl import synth
from flipvdl.neural import VAE, WorkNet, train_vae, train_worknet
from flipvdl.neural.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from flipvdl.neural.layers import Conv2d, Dense, ReLU, Sigmoid, Upsample
from flipvdl.neural.losses import kld_closed_form, kld_monte_carlo, normalize_theta, reparameterize, vae_loss
from flipvdl.neural.optim import Adam, RMSprop, staged_rate
from flipvdl.neural.vae import VaeTrainConfig, reconstruction_mse
from flipvdl.neural.worknet import MinMaxScaler, WorkNetConfig
from oracles import numeric_gradients, relative_error, randomize_biases, vae_gradient_errors, worknet_gradient_errors


def test_normalize_examples():
    theta = np.array([[1.0, 2.0], [3.0, 2.0]])
    np.testing.assert_array_equal(normalize_theta(theta), [[1.0, 0.5], [0.0, 0.5]])
    assert np.all(normalize_theta(np.full((4, 4), 1.3)) == 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_normalize_range_and_argmin(seed):
    theta = np.random.default_rng(seed).uniform(0.05, 5.0, (16, 16))
    x = normalize_theta(theta)
    assert x.min() >= 0.0 and x.max() <= 1.0
    assert x.flat[np.argmin(theta)] == 1.0


def test_kld_examples():
    zero = kld_closed_form(np.zeros(24), np.zeros(24))
    assert zero == 0.0 and np.copysign(1.0, zero) == 1.0
    assert kld_closed_form([1.0], [0.0]) == 0.5


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=8), st.lists(st.floats(-3, 3), min_size=1, max_size=8))
def test_kld_nonnegative(mu, lv):
    n = min(len(mu), len(lv))
    assert kld_closed_form(mu[:n], lv[:n]) >= -1e-12


def test_kld_matches_monte_carlo():
    rng = np.random.default_rng(2)
    for _ in range(5):
        mu, sigma = rng.uniform(-2, 2), rng.uniform(0.2, 2.0)
        mean, se = kld_monte_carlo(mu, sigma, 200_000, rng)
        assert abs(mean - kld_closed_form([mu], [2 * np.log(sigma)])) < 3 * se


def test_reparameterize():
    mu, lv = np.array([0.3, -1.0]), np.array([0.5, 0.0])
    np.testing.assert_array_equal(reparameterize(mu, lv, np.zeros(2)), mu)
    eps = np.array([0.7, -0.2])
    np.testing.assert_array_equal(reparameterize(mu, np.zeros(2), eps), mu + eps)
    rng = np.random.default_rng(0)
    z = reparameterize(1.5, np.log(0.25), rng.standard_normal(100_000))
    assert z.mean() == pytest.approx(1.5, rel=0.01)
    assert z.var() == pytest.approx(0.25, rel=0.01)


def test_loss_examples():
    x = np.zeros((1, 1, 16, 16))
    zero = np.zeros((1, 24))
    assert vae_loss(x, x, zero, zero)[0] == 0.0
    x_hat = x.copy()
    x_hat[0, 0, 3, 4] = 1.0
    assert vae_loss(x, x_hat, zero, zero)[0] == pytest.approx(1000 / 256, rel=1e-15)


def test_loss_is_batch_mean():
    rng = np.random.default_rng(3)
    x, xh = rng.random((4, 1, 16, 16)), rng.random((4, 1, 16, 16))
    mu, lv = rng.normal(size=(4, 24)), rng.normal(size=(4, 24))
    single = [vae_loss(x[i : i + 1], xh[i : i + 1], mu[i : i + 1], lv[i : i + 1])[0] for i in range(4)]
    assert vae_loss(x, xh, mu, lv)[0] == pytest.approx(np.mean(single), rel=1e-13)


def test_loss_input_gradients():
    rng = np.random.default_rng(4)
    x = rng.random((2, 1, 16, 16))
    arrays = {"x_hat": rng.random((2, 1, 16, 16)), "mu": rng.normal(size=(2, 24)), "log_var": rng.normal(size=(2, 24))}
    grads = vae_loss(x, arrays["x_hat"], arrays["mu"], arrays["log_var"])[3]
    num = numeric_gradients(lambda: vae_loss(x, arrays["x_hat"], arrays["mu"], arrays["log_var"])[0], arrays)
    for k in arrays:
        assert relative_error(grads[k], num[k]) < 1e-7


@pytest.mark.parametrize(
    "layer, shape",
    [
        (Dense(5, 3, np.random.default_rng(0), np.float64), (4, 5)),
        (Conv2d(2, 3, 3, 2, 1, np.random.default_rng(0), np.float64), (2, 2, 6, 6)),
        (Conv2d(2, 2, 3, 1, 1, np.random.default_rng(1), np.float64), (1, 2, 5, 5)),
        (Upsample(2), (2, 3, 3, 3)),
        (Sigmoid(), (3, 4)),
        (ReLU(), (3, 4)),
    ],
)
def test_layer_backward_matches_differences(layer, shape):
    rng = np.random.default_rng(5)
    x = rng.normal(size=shape)
    w_out = rng.normal(size=layer.forward(x).shape)

    def loss():
        return float(np.sum(layer.forward(x) * w_out))

    loss()
    dx = layer.backward(w_out)
    analytic = {k: v.copy() for k, v in layer.grads.items()}
    num = numeric_gradients(loss, dict(layer.params, x=x))
    assert relative_error(dx, num["x"]) < 1e-7
    for k in layer.params:
        assert relative_error(analytic[k], num[k]) < 1e-7


def test_vae_gradients_small_model():
    rng = np.random.default_rng(6)
    for rep in range(3):
        model = VAE(latent_dim=4, channels=(2, 3), seed=rep, dtype=np.float64)
        randomize_biases(model, rng)
        x = rng.uniform(0, 1, (2, 16, 16))
        eps = rng.standard_normal((2, 4))
        errors = vae_gradient_errors(model, x, eps, beta=1000.0)
        assert len(errors) == 14
        assert max(errors.values()) < 1e-4, errors


def test_worknet_gradients_small_model():
    rng = np.random.default_rng(7)
    for rep in range(3):
        net = randomize_biases(WorkNet(6, (5, 5, 5), 4, seed=rep, dtype=np.float64), rng)
        errors = worknet_gradient_errors(net, rng.random((8, 6)), rng.random((8, 4)))
        assert max(errors.values()) < 1e-4, errors


def test_vae_shapes_and_determinism():
    x = np.zeros((3, 16, 16))
    eps = np.random.default_rng(0).standard_normal((3, 24))
    a = VAE(seed=1).forward(x, eps)
    b = VAE(seed=1).forward(x, eps)
    assert a[0].shape == (3, 16, 16)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert np.all(np.isfinite(a[0])) and np.all((a[0] >= 0) & (a[0] <= 1))
    with pytest.raises(ValueError):
        VAE().encode(np.zeros((2, 8, 8)))


def test_optimizer_updates():
    w = np.array([1.0, -2.0])
    g = np.array([0.5, -0.25])
    adam = Adam(lr=0.1)
    # first Adam step moves each weight by lr * sign(g)
    np.testing.assert_allclose(adam.update("w", w, g), w - 0.1 * np.sign(g), rtol=1e-6)
    rms = RMSprop(lr=0.01, rho=0.9, eps=0.0)
    np.testing.assert_allclose(rms.update("w", w, g), w - 0.01 * g / np.sqrt(0.1 * g * g), rtol=1e-12)
    assert staged_rate([(2, 1e-3), (3, 1e-4)], 0) == 1e-3
    assert staged_rate([(2, 1e-3), (3, 1e-4)], 2) == 1e-4
    with pytest.raises(ValueError):
        Adam(lr=0.0)


def test_training_is_reproducible():
    images = normalize_theta(np.random.default_rng(0).random((40, 16, 16)))
    cfg = VaeTrainConfig(schedule=[(2, 1e-3)], batch_size=8, seed=3)
    m1, c1 = train_vae(images, cfg)
    m2, c2 = train_vae(images, cfg)
    assert c1.rows == c2.rows
    assert all(np.array_equal(a, b) for a, b in zip(m1.state_dict().values(), m2.state_dict().values()))


def test_single_sample_memorised():
    ph = synth.draw_phenotype("normal-peristaltic", synth.sample_rng(0, 0))
    x = normalize_theta(synth.theta_field(ph))[None]
    model, _ = train_vae(x, VaeTrainConfig(schedule=[(4000, 2e-3), (2000, 2e-4)], batch_size=1))
    assert reconstruction_mse(model, x) < 1e-4


def test_divergence_is_reported():
    model = VAE(seed=0)
    for _, layer, name in model.parameters():
        layer.params[name][...] = np.nan
    from flipvdl.neural import TrainingDivergence

    with pytest.raises(TrainingDivergence, match="epoch 0"):
        train_vae(np.zeros((4, 16, 16)), VaeTrainConfig(schedule=[(1, 1e-3)]), model=model)


def test_worknet_learns_linear_target():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (500, 30))
    y = x @ rng.normal(size=(30, 4))
    net, curve = train_worknet(x[:400], y[:400], WorkNetConfig(epochs=300, lr=1e-3), x[400:], y[400:])
    val = curve.column("val_mse")
    assert val[-1] < 0.01 * np.var(y)
    again, curve2 = train_worknet(x[:400], y[:400], WorkNetConfig(epochs=300, lr=1e-3), x[400:], y[400:])
    assert curve.rows == curve2.rows


def test_worknet_input_range_and_scalers(tmp_path):
    net = WorkNet(seed=0)
    with pytest.raises(ValueError, match="normalised"):
        net.predict_normalized(np.full((1, 30), 1.5))
    with pytest.raises(RuntimeError, match="normalisation"):
        net.predict(np.zeros((1, 30)))
    x = np.random.default_rng(1).random((2, 30))
    out = net.predict_normalized(np.vstack([x[0], x[0]]))
    assert np.array_equal(out[0], out[1]) and out.min() >= 0 and out.max() <= 1
    sc = MinMaxScaler().fit(np.array([[0.0, 5.0], [2.0, 5.0]]))
    np.testing.assert_array_equal(sc.transform([[1.0, 5.0]]), [[0.5, 0.0]])


def test_checkpoint_round_trip(tmp_path):
    model = VAE(seed=4)
    model.save(tmp_path / "m.bin", {"note": "x"})
    raw = (tmp_path / "m.bin").read_bytes()
    assert raw[:4] == MAGIC
    version, n_desc = struct.unpack("<II", raw[4:12])
    assert version == 1 and n_desc > 0
    back, side = VAE.load(tmp_path / "m.bin")
    assert side["note"] == "x" and side["seed"] == 4
    for key, arr in model.state_dict().items():
        assert np.array_equal(arr, back.state_dict()[key]) and arr.dtype == back.state_dict()[key].dtype
    z = np.random.default_rng(0).standard_normal((2, 24))
    assert np.array_equal(model.decode(z), back.decode(z))


def test_checkpoint_rejects_bad_files(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.bin")
    save_checkpoint(tmp_path / "t.bin", {"model": "x"}, {"a": np.arange(6.0)})
    data = (tmp_path / "t.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(data[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "t.bin")


def test_worknet_checkpoint_keeps_scalers(tmp_path):
    rng = np.random.default_rng(0)
    x, y = rng.random((40, 30)), rng.random((40, 4)) * 10
    net, _ = train_worknet(x, y, WorkNetConfig(epochs=2))
    net.save(tmp_path / "w.bin")
    back, _ = WorkNet.load(tmp_path / "w.bin")
    assert np.array_equal(back.predict(x), net.predict(x))
