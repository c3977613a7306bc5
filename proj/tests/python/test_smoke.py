"""Smoke tests for the python bindings (run via ctest with PYTHONPATH set)."""

import math
import tempfile

import numpy as np

import shiftforge as sf


def test_heaviside():
    out = sf.heaviside_ste(np.array([-0.5, 0.0, 0.3], dtype=np.float32))
    assert out.tolist() == [0.0, 0.0, 1.0]


def test_ternary_and_staircase():
    w = np.array([-0.5, 0.1, 0.5], dtype=np.float32)
    assert sf.ternary_quantize(w, 0.3).tolist() == [-1.0, 0.0, 1.0]
    out = sf.staircase_quantize(w, thresholds=[-0.3, 0.3], values=[-1.0, 0.0, 1.0])
    assert out.tolist() == [-1.0, 0.0, 1.0]
    assert abs(sf.ternary_auto_delta(np.ones(3, dtype=np.float32)) - 0.7) < 1e-6


def test_s3_projection():
    sign = np.array([0.5, -0.5, 0.5, 0.5], dtype=np.float32)
    sparse = np.array([0.5, 0.5, -0.5, 0.5], dtype=np.float32)
    w1 = np.array([0.5, 0.5, 0.5, -0.5], dtype=np.float32)
    w2 = np.array([0.5, 0.5, 0.5, 0.5], dtype=np.float32)
    out = sf.s3_project(sign, sparse, [w1, w2])
    assert out.tolist() == [4.0, -4.0, 0.0, 2.0]
    ter = sf.s3_project(sign, sparse)
    assert ter.tolist() == [1.0, -1.0, 0.0, 1.0]


def test_penalty_and_schedules():
    assert sf.dense_weight_penalty(np.array([-0.5, 0.3], dtype=np.float32)) == 0.5
    assert abs(sf.alpha_at(1e-3, "linear", 50, 100) - 5e-4) < 1e-9
    assert abs(sf.lr_at(0.2, "cosine", 0, 10) - 0.2) < 1e-7
    assert abs(sf.lr_at(0.2, "cosine", 5, 10) - 0.1) < 1e-7


def test_pack_roundtrip():
    w = np.array([0, 1, -1, 2, -2, 4, -4, 0, 1], dtype=np.float32)
    payload = sf.pack(w)
    assert len(payload) == (3 * len(w) + 7) // 8
    back = sf.unpack(payload, [len(w)])
    assert back.tolist() == w.tolist()
    try:
        sf.pack(np.array([3.0], dtype=np.float32))
        raise AssertionError("expected ShiftforgeError")
    except sf.ShiftforgeError:
        pass


def test_shift_matmul_matches_numpy():
    rng = np.random.default_rng(1)
    x = rng.integers(-1000, 1000, size=(4, 6)).astype(np.int32)
    w = rng.choice([0, 1, -1, 2, -2, 4, -4], size=(6, 3)).astype(np.float32)
    out = sf.shift_matmul(x, w)
    ref = x.astype(np.int64) @ w.astype(np.int64)
    assert (out == ref).all()


def test_metrics():
    a = np.array([1.0, -1.0, 1.0], dtype=np.float32)
    b = np.array([-1.0, -1.0, 1.0], dtype=np.float32)
    assert abs(sf.wsvr(a, b) - 1 / 3) < 1e-12
    assert sf.wlvr(np.array([0, 1, -1, 0], dtype=np.float32), discrete=True) == 0.5
    assert abs(sf.spearman([1, 2, 3, 4, 5], [0.1, 0.3, 0.2, 0.4, 0.5]) - 0.9) < 1e-12


def test_synthetic_data_and_training():
    with tempfile.TemporaryDirectory() as td:
        sf.write_synthetic_mnist(td, 256, 64, 11)
        result = sf.train(
            {
                "model": "mlp_mnist",
                "mode": "s3_ternary",
                "dataset": "mnist",
                "data_dir": td,
                "epochs": "1",
                "batch_size": "64",
                "lr": "0.05",
                "threads": "1",
                "out_dir": td + "/run",
            }
        )
        assert math.isfinite(result["final_train_loss"])
        assert 0.0 <= result["final_top1"] <= 100.0


if __name__ == "__main__":
    fns = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for fn in fns:
        fn()
        print(f"ok {fn.__name__}")
    print(f"{len(fns)} python smoke tests passed")
