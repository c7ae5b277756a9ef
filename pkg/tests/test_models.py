"""Models: gradients vs finite differences, datasets, training, checkpoints."""

import numpy as np
import pytest

from reconstab.errors import (ParameterError, ShapeError,
                              TrainingDivergedError)
from reconstab.linops import ConvolutionOperator, Shape, \
    build_gaussian_kernel
from reconstab.models import (ConvNetModel, LinearFourierFilter, TrainConfig,
                              TrainMode, as_reconstructor, build_dataset,
                              load_model, loss_and_gradients, mse,
                              save_loss_curve, save_model, train)
from reconstab.reconstruct import (StabilizerSpec, TikhonovConfig, cgls,
                                   stabilizer, tikhonov)


def blur(side, radius=2, sigma=1.3):
    return ConvolutionOperator(Shape(side, side),
                               build_gaussian_kernel(radius, sigma))


def batch(shape, count, seed):
    rng = np.random.default_rng(seed)
    ys = rng.standard_normal((count, shape.n))
    xs = rng.standard_normal((count, shape.n))
    return ys, xs


def central_fd(model, inputs, targets, index, h=1e-6):
    params = model.get_params()
    bumped = params.copy()
    bumped[index] += h
    model.set_params(bumped)
    up, _ = loss_and_gradients(model, inputs, targets)
    bumped[index] -= 2 * h
    model.set_params(bumped)
    down, _ = loss_and_gradients(model, inputs, targets)
    model.set_params(params)
    return (up - down) / (2 * h)


def test_filter_gradient_matches_fd():
    shape = Shape(8, 8)
    model = LinearFourierFilter(shape)
    rng = np.random.default_rng(0)
    model.set_params(0.1 * rng.standard_normal(2 * shape.n))
    model.project()
    ys, xs = batch(shape, 3, 1)
    _, grad = loss_and_gradients(model, ys, xs)
    for index in rng.integers(0, grad.shape[0], size=12):
        fd = central_fd(model, ys, xs, int(index))
        assert abs(grad[index] - fd) <= 1e-6 * max(1.0, abs(fd))


def test_convnet_gradient_matches_fd():
    shape = Shape(8, 8)
    model = ConvNetModel(shape, channels=(1, 4, 4, 1), seed=2)
    ys, xs = batch(shape, 2, 3)
    _, grad = loss_and_gradients(model, ys, xs)
    rng = np.random.default_rng(4)
    for index in rng.integers(0, grad.shape[0], size=20):
        fd = central_fd(model, ys, xs, int(index))
        assert abs(grad[index] - fd) <= 1e-5 * max(1.0, abs(fd))


def test_loss_value_matches_forward():
    shape = Shape(4, 4)
    rng = np.random.default_rng(5)
    for model in (LinearFourierFilter(shape),
                  ConvNetModel(shape, channels=(1, 3, 1), seed=6)):
        model.set_params(0.3 * rng.standard_normal(
            model.get_params().shape[0]))
        ys, xs = batch(shape, 4, 7)
        loss, _ = loss_and_gradients(model, ys, xs)
        expect = np.mean([mse(model.forward(y), x) for y, x in zip(ys, xs)])
        assert abs(loss - expect) < 1e-12
        out = model.forward_batch(ys)
        stacked = np.stack([model.forward(y) for y in ys])
        assert np.max(np.abs(out - stacked)) < 1e-12


def test_filter_projection_conjugate_symmetry():
    shape = Shape(8, 8)
    model = LinearFourierFilter(shape)
    rng = np.random.default_rng(8)
    model.set_params(rng.standard_normal(2 * shape.n))
    model.project()
    g = model.gains
    flipped = np.roll(np.conj(g[::-1, ::-1]), (1, 1), axis=(0, 1))
    assert np.max(np.abs(g - flipped)) < 1e-15
    before = g.copy()
    model.project()
    assert np.max(np.abs(model.gains - before)) < 1e-15
    # symmetric gains keep real inputs real: forward equals its own re-cast
    y = rng.standard_normal(shape.n)
    out = np.fft.ifft2(g * np.fft.fft2(y.reshape(8, 8)))
    assert np.max(np.abs(out.imag)) < 1e-13


def test_dataset_modes():
    side = 8
    shape = Shape(side, side)
    op = blur(side)
    tik_cfg = TikhonovConfig(lam=1e-2)
    sigs = [np.random.default_rng(9 + i).standard_normal(shape.n)
            for i in range(3)]
    phi = stabilizer(op, StabilizerSpec(k=3, tikhonov=tik_cfg))
    tik = tikhonov(op, tik_cfg)

    nn = build_dataset(sigs, op, TrainMode.NN)
    for i, x in enumerate(sigs):
        assert np.array_equal(nn.inputs[i], op.apply(x))
        assert np.array_equal(nn.targets[i], x)

    renn = build_dataset(sigs, op, "ReNN", tikhonov_config=tik_cfg)
    for i, x in enumerate(sigs):
        assert np.array_equal(renn.targets[i], tik.reconstruct(op.apply(x)))

    stnn = build_dataset(sigs, op, "StNN", tikhonov_config=tik_cfg,
                         stabilizer_k=3)
    for i, x in enumerate(sigs):
        assert np.array_equal(stnn.inputs[i], phi.reconstruct(op.apply(x)))
        assert np.array_equal(stnn.targets[i], x)

    strenn = build_dataset(sigs, op, "StReNN", tikhonov_config=tik_cfg,
                           stabilizer_k=3)
    for i, x in enumerate(sigs):
        assert np.array_equal(strenn.inputs[i],
                              phi.reconstruct(op.apply(x)))
        assert np.array_equal(strenn.targets[i],
                              tik.reconstruct(op.apply(x)))

    # shared construction noise: target sees the same perturbed data
    noisy = build_dataset(sigs, op, "ReNN", tikhonov_config=tik_cfg,
                          target_noise_delta=0.05, seed=17)
    rng = np.random.default_rng(17)
    for i, x in enumerate(sigs):
        y = op.apply(x) + 0.05 * rng.standard_normal(op.rows)
        assert np.array_equal(noisy.inputs[i], y)
        assert np.array_equal(noisy.targets[i], tik.reconstruct(y))

    with pytest.raises(ParameterError):
        build_dataset(sigs, op, "ReNN")
    with pytest.raises(ParameterError):
        build_dataset([], op, "NN")
    with pytest.raises(ShapeError):
        build_dataset([np.zeros(10)], op, "NN")


def test_training_determinism_and_zero_epochs():
    shape = Shape(8, 8)
    op = blur(8)
    sigs = [np.random.default_rng(20 + i).standard_normal(shape.n)
            for i in range(6)]
    data = build_dataset(sigs, op, TrainMode.NN)
    cfg = TrainConfig(epochs=5, learning_rate=1e-2, batch_size=2,
                      optimizer="adam", seed=3)
    m1 = LinearFourierFilter(shape)
    m2 = LinearFourierFilter(shape)
    _, _, curve1 = train(m1, data, cfg)
    _, _, curve2 = train(m2, data, cfg)
    assert np.array_equal(m1.get_params(), m2.get_params())
    assert curve1 == curve2
    assert len(curve1) == 5
    m3 = LinearFourierFilter(shape)
    before = m3.get_params().copy()
    _, _, curve3 = train(m3, data, TrainConfig(epochs=0, learning_rate=1e-2))
    assert np.array_equal(m3.get_params(), before)
    assert curve3 == []


def test_training_checkpoints():
    shape = Shape(8, 8)
    op = blur(8)
    sigs = [np.random.default_rng(30 + i).standard_normal(shape.n)
            for i in range(4)]
    data = build_dataset(sigs, op, TrainMode.NN)
    model = LinearFourierFilter(shape)
    cfg = TrainConfig(epochs=7, learning_rate=1e-2, batch_size=4, seed=1)
    _, ckpts, _ = train(model, data, cfg, checkpoint_every=3)
    assert [ep for ep, _ in ckpts] == [0, 3, 6, 7]
    assert np.max(np.abs(ckpts[0][1].gains)) == 0.0
    assert np.array_equal(ckpts[-1][1].get_params(), model.get_params())
    # snapshots are copies, not views of the live model
    assert ckpts[1][1].gains is not model.gains


def test_training_divergence():
    shape = Shape(8, 8)
    op = blur(8)
    sigs = [np.random.default_rng(40).standard_normal(shape.n)]
    data = build_dataset(sigs, op, TrainMode.NN)
    model = LinearFourierFilter(shape)
    cfg = TrainConfig(epochs=10, learning_rate=1e150, batch_size=1,
                      optimizer="sgd", seed=0)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(TrainingDivergedError) as err:
            train(model, data, cfg)
    assert err.value.epoch is not None and err.value.epoch >= 1


def test_noise_injection_changes_training():
    shape = Shape(8, 8)
    op = blur(8)
    sigs = [np.random.default_rng(50 + i).standard_normal(shape.n)
            for i in range(4)]
    data = build_dataset(sigs, op, TrainMode.NN)
    cfg_a = TrainConfig(epochs=3, learning_rate=1e-2, seed=4)
    cfg_b = TrainConfig(epochs=3, learning_rate=1e-2, seed=4,
                        noise_injection_delta=0.1)
    m_a = LinearFourierFilter(shape)
    m_b = LinearFourierFilter(shape)
    train(m_a, data, cfg_a)
    train(m_b, data, cfg_b)
    assert not np.array_equal(m_a.get_params(), m_b.get_params())


def test_full_batch_sgd_loss_nonincreasing():
    # quadratic loss in the filter gains: small constant steps cannot climb
    shape = Shape(8, 8)
    op = blur(8)
    sigs = [np.random.default_rng(60 + i).standard_normal(shape.n)
            for i in range(6)]
    data = build_dataset(sigs, op, TrainMode.NN)
    model = LinearFourierFilter(shape)
    cfg = TrainConfig(epochs=40, learning_rate=5e-3, batch_size=6,
                      optimizer="sgd", seed=0)
    _, _, curve = train(model, data, cfg)
    assert all(b <= a + 1e-12 for a, b in zip(curve, curve[1:]))


def test_checkpoint_roundtrip(tmp_path):
    shape = Shape(8, 8)
    rng = np.random.default_rng(70)
    filt = LinearFourierFilter(shape)
    filt.set_params(rng.standard_normal(2 * shape.n))
    net = ConvNetModel(shape, channels=(1, 3, 1), seed=71)
    for model, name in ((filt, "f.ckpt"), (net, "n.ckpt")):
        path = tmp_path / name
        save_model(model, path)
        back = load_model(path)
        assert type(back) is type(model)
        assert np.array_equal(back.get_params(), model.get_params())
        y = rng.standard_normal(shape.n)
        assert np.array_equal(back.forward(y), model.forward(y))
    raw = bytearray((tmp_path / "f.ckpt").read_bytes())
    raw[:4] = b"XXXX"
    (tmp_path / "bad.ckpt").write_bytes(bytes(raw))
    with pytest.raises(ParameterError):
        load_model(tmp_path / "bad.ckpt")


def test_reconstructor_wrappers():
    shape = Shape(8, 8)
    op = blur(8)
    rng = np.random.default_rng(80)
    model = LinearFourierFilter(shape)
    model.set_params(rng.standard_normal(2 * shape.n))
    model.project()
    psi = as_reconstructor(model)
    y = rng.standard_normal(shape.n)
    assert np.array_equal(psi.reconstruct(y), model.forward(y))
    phi = stabilizer(op, StabilizerSpec(
        k=2, tikhonov=TikhonovConfig(lam=1e-2)))
    wrapped = as_reconstructor(model, stabilizer=phi)
    assert np.array_equal(wrapped.reconstruct(y),
                          model.forward(phi.reconstruct(y)))


def test_config_validation_and_loss_curve(tmp_path):
    with pytest.raises(ParameterError):
        TrainConfig(epochs=-1)
    with pytest.raises(ParameterError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ParameterError):
        TrainConfig(batch_size=0)
    with pytest.raises(ParameterError):
        TrainConfig(optimizer="lbfgs")
    with pytest.raises(ParameterError):
        TrainConfig(noise_injection_delta=-0.1)
    path = tmp_path / "loss.csv"
    save_loss_curve(path, [0.5, 0.25])
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,mean_loss"
    assert lines[1].split(",") == ["1", "0.5"]
    with pytest.raises(ParameterError):
        ConvNetModel(Shape(8, 8), channels=(2, 4, 1))
