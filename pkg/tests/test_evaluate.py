import math

import numpy as np
import pytest

from fusionsteer.dataset import SplitArrays
from fusionsteer.evaluate import (REPORT_HEADER, ablate, ablation_observation, bench_inference, evaluate, mae,
                                  medae, rmse, variance_score, write_report, format_table)
from fusionsteer.models import ModelConfig, build_model
from fusionsteer.tensor import make_rng

TINY = ModelConfig("gated", 16, (2, 2), (4, 3), embed_dim=5, gate_hidden=4)


# scalar-loop oracles, no numpy
def loop_mae(r):
    return sum(abs(x) for x in r) / len(r)


def loop_rmse(r):
    return math.sqrt(sum(x * x for x in r) / len(r))


def loop_medae(r):
    a = sorted(abs(x) for x in r)
    n = len(a)
    return a[n // 2] if n % 2 else (a[n // 2 - 1] + a[n // 2]) / 2


def loop_var(v):
    m = sum(v) / len(v)
    return sum((x - m) ** 2 for x in v) / len(v)


def loop_vs(y, p):
    return 1 - loop_var([a - b for a, b in zip(y, p)]) / loop_var(y)


class Oracle:
    """Stub returning the true label stored in the depth image's first pixel."""

    def predict(self, rgb, depth):
        return depth[:, 0, 0, :1].astype(np.float64)


class Zero:
    def predict(self, rgb, depth):
        return np.zeros((len(rgb), 1))


def _labelled(n=23, seed=0):
    rng = make_rng(seed)
    omega = (rng.integers(-3, 4, (n, 1)) / 10).astype(np.float32)
    depth = rng.standard_normal((n, 1, 4, 4)).astype(np.float32)
    depth[:, 0, 0, 0] = omega[:, 0]
    return SplitArrays([f"s{i}" for i in range(n)], rng.standard_normal((n, 3, 4, 4)).astype(np.float32),
                       depth, omega)


def test_metric_cases():
    assert mae([0.1, -0.1]) == pytest.approx(0.1, abs=1e-15)
    assert rmse([0.1, -0.1]) == pytest.approx(0.1, abs=1e-15)
    assert medae([0.1, -0.1]) == pytest.approx(0.1, abs=1e-15)
    r = [0, 0, 0.3]
    assert mae(r) == pytest.approx(0.1, abs=1e-15)
    assert rmse(r) == pytest.approx(0.3 / math.sqrt(3), abs=1e-15)
    assert medae(r) == 0
    with pytest.raises(ValueError):
        mae([])


def test_vs_cases():
    y = [-0.3, 0.0, 0.1, 0.2]
    assert variance_score(y, y) == 1.0
    assert variance_score(y, [v + 0.05 for v in y]) == pytest.approx(1.0, abs=1e-12)
    assert variance_score([-0.1, 0.1], [0, 0]) == 0.0
    with pytest.raises(ValueError):
        variance_score([0.1, 0.1], [0, 0])
    with pytest.raises(ValueError):
        variance_score([0.1], [0])


def test_metrics_match_scalar_loop():
    rng = make_rng(123)
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        y = rng.standard_normal(n) * 0.2
        p = y + rng.standard_normal(n) * rng.uniform(0.001, 0.3)
        r = (y - p).tolist()
        assert abs(mae(r) - loop_mae(r)) < 1e-9
        assert abs(rmse(r) - loop_rmse(r)) < 1e-9
        assert abs(medae(r) - loop_medae(r)) < 1e-9
        assert abs(variance_score(y, p) - loop_vs(y.tolist(), p.tolist())) < 1e-9
        assert rmse(r) >= mae(r) >= 0
        assert variance_score(y, p) <= 1


def test_vs_offset_invariance():
    rng = make_rng(4)
    y, p = rng.standard_normal(50), rng.standard_normal(50)
    assert abs(variance_score(y, p) - variance_score(y, p + 0.37)) < 1e-12


def test_perfect_stub():
    rep, dump = evaluate(Oracle(), _labelled())
    assert (rep.mae, rep.rmse, rep.medae, rep.vs) == (0.0, 0.0, 0.0, 1.0)
    assert rep.n_samples == 23 and dump.ids[0] == "s0"


def test_constant_zero_model():
    d = _labelled(40, 1)
    rep, dump = evaluate(Zero(), d)
    y = d.omega[:, 0].astype(np.float64)
    # explained variance of a constant prediction is exactly zero
    assert rep.vs <= 0 and abs(rep.vs) < 1e-12
    assert abs(rep.mae - np.abs(y).mean()) < 1e-9
    assert np.array_equal(dump.residuals, y)


def test_evaluate_matches_dump_oracle():
    model = build_model(TINY, make_rng(0))
    rng = make_rng(2)
    d = SplitArrays([str(i) for i in range(17)], rng.standard_normal((17, 3, 16, 16)).astype(np.float32),
                    rng.standard_normal((17, 1, 16, 16)).astype(np.float32),
                    rng.standard_normal((17, 1)).astype(np.float32))
    rep, dump = evaluate(model, d)
    r = [t - p for t, p in zip(dump.omega_true, dump.omega_pred)]
    assert np.allclose(dump.residuals, r, rtol=0, atol=0)
    assert abs(rep.mae - loop_mae(r)) < 1e-9
    assert abs(rep.rmse - loop_rmse(r)) < 1e-9
    assert abs(rep.medae - loop_medae(r)) < 1e-9
    assert abs(rep.vs - loop_vs(dump.omega_true, dump.omega_pred)) < 1e-9



@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-9), (np.float32, 1e-6)])
def test_evaluate_order_independent(dtype, tol):
    # float32 BLAS kernels round differently depending on batch composition,
    # so the 1e-9 bound is checked in 64-bit and a float32-scale bound in 32-bit
    model = build_model(TINY, make_rng(0)).astype(dtype)
    rng = make_rng(2)
    d = SplitArrays([str(i) for i in range(17)], rng.standard_normal((17, 3, 16, 16)).astype(dtype),
                    rng.standard_normal((17, 1, 16, 16)).astype(dtype), rng.standard_normal((17, 1)))
    rep, _ = evaluate(model, d)
    perm = make_rng(9).permutation(17)
    shuffled = SplitArrays([d.ids[i] for i in perm], d.rgb[perm], d.depth[perm], d.omega[perm])
    rep2, _ = evaluate(model, shuffled)
    for a, b in [(rep.mae, rep2.mae), (rep.rmse, rep2.rmse), (rep.medae, rep2.medae), (rep.vs, rep2.vs)]:
        assert abs(a - b) < tol


def test_mask_invariance_to_masked_modality():
    model = build_model(TINY, make_rng(1))
    rng = make_rng(3)
    base = SplitArrays([str(i) for i in range(11)], rng.standard_normal((11, 3, 16, 16)).astype(np.float32),
                       rng.standard_normal((11, 1, 16, 16)).astype(np.float32),
                       rng.standard_normal((11, 1)).astype(np.float32))
    other_rgb = SplitArrays(base.ids, rng.standard_normal(base.rgb.shape).astype(np.float32), base.depth,
                            base.omega)
    other_depth = SplitArrays(base.ids, base.rgb, rng.standard_normal(base.depth.shape).astype(np.float32),
                              base.omega)
    assert evaluate(model, base, "rgb")[0].row() == evaluate(model, other_rgb, "rgb")[0].row()
    assert evaluate(model, base, "depth")[0].row() == evaluate(model, other_depth, "depth")[0].row()
    assert evaluate(model, base, "none")[0].row() != evaluate(model, other_rgb, "none")[0].row()


def test_ablate_report(tmp_path):
    model = build_model(TINY, make_rng(1))
    d = _labelled(12)
    d = SplitArrays(d.ids, make_rng(0).standard_normal((12, 3, 16, 16)).astype(np.float32),
                    make_rng(1).standard_normal((12, 1, 16, 16)).astype(np.float32), d.omega)
    reps = ablate(model, d, name="tiny")
    assert [r.mask for r in reps] == ["none", "rgb", "depth"]
    assert ablation_observation(reps).startswith("observation:")
    write_report(tmp_path / "r.csv", reps)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == ",".join(REPORT_HEADER) and len(lines) == 4
    assert lines[1].endswith(",,,")
    assert "x1e3" in format_table(reps)


def test_evaluate_errors():
    with pytest.raises(ValueError):
        evaluate(Zero(), _labelled(), mask="both")


def test_bench_properties():
    model = build_model(TINY, make_rng(0))
    t = bench_inference(model, batch=5, warmup=0, iters=1)
    assert t.ms_per_batch_std == 0.0 and t.iters == 1
    t = bench_inference(model, batch=5, warmup=2, iters=6)
    assert t.ms_per_inference_mean == t.ms_per_batch_mean / 5
    assert t.ms_per_batch_min <= t.ms_per_batch_mean
    assert t.flops_per_sample > 0
    with pytest.raises(ValueError):
        bench_inference(model, iters=0)
