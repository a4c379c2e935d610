import struct
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from conxnet import model as M
from conxnet.data import COVID, NORMAL, DatasetSplit, LabeledImage
from conxnet.errors import CheckpointError, NumericalError, ShapeError
from conxnet.optim import bce_loss

SMALL = dict(input_size=(16, 16), block_filters=(2, 3, 4, 5), dense_hidden=4)


def small(seed=0, **kw):
    return M.ModelConfig(**{**SMALL, "seed": seed, **kw})


def toy_split(n=24, size=16, seed=0):
    rng = np.random.default_rng(seed)
    images = []
    for i in range(n):
        label = COVID if i % 2 else NORMAL
        px = rng.random((1, size, size)).astype(np.float32) * 0.5
        if label == COVID:
            px[:, 4:9, 4:9] += 0.5
        images.append(LabeledImage(px, label, f"img{i}"))
    return DatasetSplit(images[: n * 2 // 3], images[n * 2 // 3 :], seed, 0.7)


# -- build ------------------------------------------------------------------


def test_default_flatten_width():
    cfg = M.ModelConfig()
    assert cfg.flatten_width == 128 * 4 * 4 == 2048
    net = M.build(cfg)
    assert net["fc1"].params["weight"].shape == (2048, 64)
    assert net.eval().forward(np.zeros((1, 1, 64, 64), np.float32)).shape == (1, 1)


def test_layer_order():
    names = [n for n, _ in M.build(small()).layers]
    assert names[:4] == ["block1.conv", "block1.relu", "block1.bn", "block1.pool"]
    assert names[-5:] == ["flatten", "fc1", "fc1.relu", "fc2", "sigmoid"]


def test_same_seed_identical_params():
    a, b = M.build(small(seed=5)), M.build(small(seed=5))
    for k, v in a.state().items():
        np.testing.assert_array_equal(v, b.state()[k])
    c = M.build(small(seed=6))
    assert not np.array_equal(a.parameters()["block1.conv.weight"], c.parameters()["block1.conv.weight"])


def test_init_scheme():
    net = M.build(M.ModelConfig(seed=0))
    w = net.parameters()["block3.conv.weight"]
    assert abs(w.std() - np.sqrt(2.0 / (32 * 9))) < 0.05 * np.sqrt(2.0 / (32 * 9))
    for k, v in net.parameters().items():
        if k.endswith((".bias", ".beta")):
            assert not v.any()
        if k.endswith(".gamma"):
            assert np.all(v == 1)


@pytest.mark.parametrize("kw", [dict(input_size=(50, 50)), dict(block_filters=(2, 3, 4)),
                                dict(dense_hidden=0), dict(kernel=2)])
def test_config_errors(kw):
    with pytest.raises((ShapeError, ValueError)):
        small(**kw)


# -- forward ----------------------------------------------------------------


def test_outputs_strictly_inside_unit_interval(rng):
    net = M.build(small())
    for scale in (1.0, 1e3):
        y = net.train().forward(rng.normal(scale=scale, size=(4, 1, 16, 16)))
        assert y.shape == (4, 1) and np.all((y > 0) & (y < 1))


def test_eval_forward_deterministic(rng):
    net = M.build(small()).eval()
    x = rng.random((3, 1, 16, 16)).astype(np.float32)
    np.testing.assert_array_equal(net.forward(x), net.forward(x))


def test_identical_images_identical_outputs(rng):
    net = M.build(small())
    x = rng.random((4, 1, 16, 16)).astype(np.float32)
    x[2] = x[0]
    for mode in (net.train, net.eval):
        y = mode().forward(x)
        assert y[0, 0] == y[2, 0]


def test_eval_forward_thread_safe(rng):
    net = M.build(small()).eval()
    xs = [rng.random((2, 1, 16, 16)).astype(np.float32) for _ in range(8)]
    expected = [net.forward(x) for x in xs]
    with ThreadPoolExecutor(4) as ex:
        got = list(ex.map(net.forward, xs))
    for a, b in zip(got, expected):
        np.testing.assert_array_equal(a, b)


def test_forward_errors():
    net = M.build(small())
    with pytest.raises(ShapeError):
        net.forward(np.zeros((1, 1, 16, 16), np.float32))
    with pytest.raises(ShapeError):
        net.eval().forward(np.zeros((2, 1, 32, 32), np.float32))
    assert net.forward(np.zeros((1, 1, 16, 16), np.float32)).shape == (1, 1)


# -- training ---------------------------------------------------------------


def test_lr_zero_is_noop():
    net = M.build(small(lr=0.0, epochs=3, batch_size=4))
    before = {k: v.copy() for k, v in net.parameters().items()}
    M.train(net, toy_split())
    for k, v in net.parameters().items():
        np.testing.assert_array_equal(v, before[k])


def test_one_step_decreases_batch_loss():
    decreased = 0
    trials = 40
    for seed in range(trials):
        rng = np.random.default_rng(seed)
        net = M.build(small(seed=seed))
        x = rng.random((8, 1, 16, 16)).astype(np.float32)
        t = (rng.random((8, 1)) < 0.5).astype(np.float32)
        lv = bce_loss(net.forward(x), t)
        net.backward(lv.grad)
        M.Adam(lr=1e-4).step(net.parameters(), net.gradients())
        decreased += bce_loss(net.forward(x), t).value < lv.value
    assert decreased / trials >= 0.95


def test_training_learns_toy_task_and_logs(tmp_path):
    net = M.build(small(epochs=15, batch_size=8, lr=0.01))
    rows = []
    res = M.train(net, toy_split(n=60), log_path=tmp_path / "log.csv", on_epoch=rows.append)
    assert [r.epoch for r in res.log] == list(range(1, 16)) and rows == res.log
    assert res.final.loss < res.log[0].loss / 2 and res.final.test_accuracy >= 0.9
    assert not net.training and net.epoch == 15
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,test_accuracy" and len(lines) == 16
    assert float(lines[-1].split(",")[1]) == res.final.loss


def test_training_reproducible():
    logs = []
    for _ in range(2):
        net = M.build(small(epochs=3, batch_size=4))
        logs.append(M.train(net, toy_split()).log)
    assert logs[0] == logs[1]


def test_non_finite_loss_names_epoch_and_batch():
    sp = toy_split()
    sp.train[0].pixels[...] = np.nan
    net = M.build(small(epochs=2, batch_size=4))
    with pytest.raises(NumericalError, match=r"epoch 1, batch \d+"):
        M.train(net, sp)


def test_train_needs_both_sides():
    sp = toy_split()
    with pytest.raises(ValueError):
        M.train(M.build(small()), DatasetSplit(sp.train, [], 0, 0.7))


# -- checkpoints ------------------------------------------------------------


def _trained(tmp_path):
    net = M.build(small(epochs=2, batch_size=4))
    M.train(net, toy_split())
    path = tmp_path / "m.ckpt"
    M.save(net, path, extra={"note": 1})
    return net, path


def test_round_trip_bit_exact(tmp_path, rng):
    net, path = _trained(tmp_path)
    back = M.load(path)
    assert not back.training and back.epoch == 2 and back.meta == {"note": 1}
    assert back.config == net.config
    for k, v in net.state().items():
        np.testing.assert_array_equal(back.state()[k], v)
    x = rng.random((3, 1, 16, 16)).astype(np.float32)
    np.testing.assert_array_equal(back.forward(x), net.eval().forward(x))


def test_file_layout(tmp_path):
    net, path = _trained(tmp_path)
    buf = path.read_bytes()
    assert buf[:8] == b"CONXNET\x00"
    version, clen = struct.unpack_from("<II", buf, 8)
    assert version == 1
    pos = 16 + clen
    nlen = struct.unpack_from("<I", buf, pos)[0]
    assert buf[pos + 4 : pos + 4 + nlen] == b"block1.conv.weight"
    rank = struct.unpack_from("<I", buf, pos + 4 + nlen)[0]
    shape = struct.unpack_from(f"<{rank}I", buf, pos + 8 + nlen)
    assert shape == (2, 1, 3, 3)
    payload = np.frombuffer(buf, "<f4", count=18, offset=pos + 8 + nlen + 4 * rank)
    np.testing.assert_array_equal(payload, net.parameters()["block1.conv.weight"].reshape(-1))


def _corrupt(path, fn):
    buf = bytearray(path.read_bytes())
    fn(buf)
    path.write_bytes(bytes(buf))


def test_corrupt_magic(tmp_path):
    _, path = _trained(tmp_path)
    _corrupt(path, lambda b: b.__setitem__(0, ord("X")))
    with pytest.raises(CheckpointError, match="magic"):
        M.load(path)


def test_modified_shape_header(tmp_path):
    _, path = _trained(tmp_path)

    def bump(buf):
        pos = 16 + struct.unpack_from("<I", buf, 12)[0]
        nlen = struct.unpack_from("<I", buf, pos)[0]
        struct.pack_into("<I", buf, pos + 8 + nlen, 3)

    _corrupt(path, bump)
    with pytest.raises(CheckpointError, match="shape mismatch"):
        M.load(path)


def test_wrong_version(tmp_path):
    _, path = _trained(tmp_path)
    _corrupt(path, lambda b: struct.pack_into("<I", b, 8, 2))
    with pytest.raises(CheckpointError, match="version"):
        M.load(path)


def test_truncated(tmp_path):
    _, path = _trained(tmp_path)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(CheckpointError, match="truncated"):
        M.load(path)


def test_bad_config_json(tmp_path):
    _, path = _trained(tmp_path)
    _corrupt(path, lambda b: b.__setitem__(16, ord("!")))
    with pytest.raises(CheckpointError, match="config"):
        M.load(path)
