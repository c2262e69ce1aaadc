"""Test-set metrics, modality ablation, residual export and inference timing."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import SplitArrays, iter_batches
from .models import MASKS, count_flops, mask_modality
from .tensor import make_rng, reduce

REPORT_HEADER = ["model", "mask", "n", "mae", "rmse", "medae", "vs",
                 "ms_per_batch_mean", "ms_per_batch_std", "ms_per_inference"]
RESIDUAL_HEADER = ["id", "omega_true", "omega_pred", "residual"]


def _residuals(res) -> np.ndarray:
    r = np.asarray(res, dtype=np.float64).ravel()
    if r.size == 0:
        raise ValueError("empty residual list")
    return r


def mae(res) -> float:
    return float(np.mean(np.abs(_residuals(res))))


def rmse(res) -> float:
    r = _residuals(res)
    return float(np.sqrt(np.mean(r * r)))


def medae(res) -> float:
    return float(np.median(np.abs(_residuals(res))))


def variance_score(y_true, y_pred) -> float:
    """Explained variance, ``1 - Var(y_true - y_pred) / Var(y_true)`` (population variances)."""
    y = np.asarray(y_true, dtype=np.float64).ravel()
    p = np.asarray(y_pred, dtype=np.float64).ravel()
    if y.shape != p.shape:
        raise ValueError("y_true and y_pred differ in length")
    if y.size < 2:
        raise ValueError("variance score needs at least two samples")
    var_y = reduce("var", y)
    if var_y == 0:
        raise ValueError("variance score undefined for constant y_true")
    return float(1.0 - reduce("var", y - p) / var_y)


@dataclass
class TimingStats:
    batch: int
    iters: int
    ms_per_batch_mean: float
    ms_per_batch_std: float
    ms_per_batch_min: float
    flops_per_sample: int

    @property
    def ms_per_inference_mean(self) -> float:
        return self.ms_per_batch_mean / self.batch

    @property
    def ms_per_inference_std(self) -> float:
        return self.ms_per_batch_std / self.batch

    @property
    def ms_per_inference_min(self) -> float:
        return self.ms_per_batch_min / self.batch


@dataclass
class MetricsReport:
    model: str
    mask: str
    n_samples: int
    mae: float
    rmse: float
    medae: float
    vs: float
    timing: TimingStats | None = None

    def row(self) -> list[str]:
        t = self.timing
        timing = ["", "", ""] if t is None else [
            repr(t.ms_per_batch_mean), repr(t.ms_per_batch_std), repr(t.ms_per_inference_mean)]
        return [self.model, self.mask, str(self.n_samples), repr(self.mae), repr(self.rmse),
                repr(self.medae), repr(self.vs)] + timing


@dataclass
class ResidualDump:
    ids: list[str] = field(default_factory=list)
    omega_true: list[float] = field(default_factory=list)
    omega_pred: list[float] = field(default_factory=list)

    @property
    def residuals(self) -> np.ndarray:
        return np.asarray(self.omega_true, dtype=np.float64) - np.asarray(self.omega_pred, dtype=np.float64)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESIDUAL_HEADER)
            for i, t, p, r in zip(self.ids, self.omega_true, self.omega_pred, self.residuals):
                w.writerow([i, repr(t), repr(p), repr(float(r))])


def write_report(path, reports: list[MetricsReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in reports:
            w.writerow(r.row())


def format_table(reports: list[MetricsReport]) -> str:
    """Human-readable table; error metrics scaled by 10^3."""
    lines = ["model          mask    n      MAE x1e3  RMSE x1e3  MedAE x1e3  VS      ms/inference",
             "# inference times exclude input normalization"]
    for r in reports:
        ms = f"{r.timing.ms_per_inference_mean:.3f}" if r.timing else "-"
        lines.append(f"{r.model:<14} {r.mask:<7} {r.n_samples:<6} {r.mae * 1e3:>9.2f} {r.rmse * 1e3:>10.2f} "
                     f"{r.medae * 1e3:>11.2f}  {r.vs:>6.3f}  {ms}")
    return "\n".join(lines)


def evaluate(model, data: SplitArrays, mask: str = "none", batch_size: int = 5,
             name: str | None = None, timed: bool = False) -> tuple[MetricsReport, ResidualDump]:
    """Run ``model.predict`` over ``data`` in order, with ``mask`` applied to the normalized input.

    ``model`` is anything with a ``predict(rgb, depth) -> [N, 1]`` method.
    """
    if mask not in MASKS:
        raise ValueError(f"unknown mask {mask!r}")
    if len(data) == 0:
        raise ValueError("split is empty")
    dump = ResidualDump(ids=list(data.ids))
    times = []
    for rgb, depth, omega in iter_batches(data, batch_size):
        rgb, depth = mask_modality(rgb, depth, mask)
        t0 = time.perf_counter()
        pred = np.asarray(model.predict(rgb, depth))
        times.append((time.perf_counter() - t0) * 1e3)
        dump.omega_true.extend(float(v) for v in omega[:, 0])
        dump.omega_pred.extend(float(v) for v in pred.reshape(-1))
    res = dump.residuals
    timing = None
    if timed:
        t = np.asarray(times)
        timing = TimingStats(batch_size, len(t), float(t.mean()), float(t.std()), float(t.min()),
                             count_flops(model) if hasattr(model, "config") else 0)
    label = name or (getattr(getattr(model, "config", None), "profile", None) or "model")
    report = MetricsReport(label, mask, len(res), mae(res), rmse(res), medae(res),
                           variance_score(dump.omega_true, dump.omega_pred), timing)
    return report, dump


def ablate(model, data: SplitArrays, batch_size: int = 5, name: str | None = None) -> list[MetricsReport]:
    """Evaluate with no mask, RGB zeroed (depth only) and depth zeroed (RGB only)."""
    return [evaluate(model, data, mask, batch_size, name)[0] for mask in MASKS]


def ablation_observation(reports: list[MetricsReport]) -> str:
    by_mask = {r.mask: r.vs for r in reports}
    single = max(by_mask["rgb"], by_mask["depth"])
    verdict = "holds" if by_mask["none"] >= single else "does not hold"
    return (f"observation: dual-modality VS {by_mask['none']:.3f} vs best single-modality VS {single:.3f} "
            f"(expectation dual >= single {verdict}; not asserted)")


def bench_inference(model, batch: int = 5, warmup: int = 10, iters: int = 100, seed: int = 0) -> TimingStats:
    """Wall-clock timing of batch forwards on fixed random normalized inputs."""
    if iters < 1 or warmup < 0 or batch < 1:
        raise ValueError("need iters >= 1, warmup >= 0, batch >= 1")
    s = model.config.image_size
    rng = make_rng(seed)
    rgb = rng.standard_normal((batch, 3, s, s)).astype(model.dtype)
    depth = rng.standard_normal((batch, 1, s, s)).astype(model.dtype)
    for _ in range(warmup):
        model.predict(rgb, depth)
    times = np.empty(iters)
    for i in range(iters):
        t0 = time.perf_counter()
        model.predict(rgb, depth)
        times[i] = (time.perf_counter() - t0) * 1e3
    std = float(times.std()) if iters > 1 else 0.0
    return TimingStats(batch, iters, float(times.mean()), std, float(times.min()), count_flops(model))
