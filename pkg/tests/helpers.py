"""Finite-difference oracle and naive reference implementations used by the tests."""
import numpy as np


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1e-6, np.abs(a) + np.abs(b))


def numeric_grad(f, x, h=1e-4, kinks=None, coords=None):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place).

    ``coords`` restricts the work to those flat indices; the rest come back NaN.

    With a ``kinks`` list, each coordinate is also differenced at ``h / 10``.
    The networks are piecewise polynomials of degree <= 2 in any single
    coordinate, for which central differences are exact, so a disagreement
    means a ReLU or max-pool switch lies within ``h``.  Such coordinates are
    appended to ``kinks`` and returned as NaN.
    """
    g = np.zeros_like(x, dtype=np.float64) if coords is None else np.full(x.shape, np.nan)
    flat, gflat = x.reshape(-1), g.reshape(-1)

    def central(i, step):
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        return (fp - fm) / (2 * step)

    for i in (range(flat.size) if coords is None else coords):
        gflat[i] = central(i, h)
        if kinks is not None:
            fine = central(i, h / 10)
            if abs(fine - gflat[i]) > 1e-7 * (abs(fine) + abs(gflat[i])) + 1e-9:
                kinks.append(i)
                gflat[i] = np.nan
    return g


def max_rel_err(analytic, numeric):
    """Max relative error over the coordinates where ``numeric`` is defined."""
    ok = ~np.isnan(numeric)
    return float(rel_err(np.asarray(analytic)[ok], numeric[ok]).max()) if ok.any() else 0.0


def naive_conv(x, w, b):
    n, c_in, h, wd = x.shape
    c_out = w.shape[0]
    out = np.zeros((n, c_out, h, wd))
    for s in range(n):
        for o in range(c_out):
            for i in range(h):
                for j in range(wd):
                    acc = float(b[o])
                    for c in range(c_in):
                        for u in range(3):
                            for v in range(3):
                                ii, jj = i + u - 1, j + v - 1
                                if 0 <= ii < h and 0 <= jj < wd:
                                    acc += float(w[o, c, u, v]) * float(x[s, c, ii, jj])
                    out[s, o, i, j] = acc
    return out


def naive_pool(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2))
    for s in range(n):
        for k in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    out[s, k, i, j] = max(x[s, k, 2 * i + a, 2 * j + b] for a in (0, 1) for b in (0, 1))
    return out


def reference_forward(model, rgb, depth):
    """Straight-line re-implementation of both architectures from the raw parameter dict."""
    p = {k: v.astype(np.float64) for k, v in model.parameters().items()}
    cfg = model.config
    relu = lambda z: np.maximum(z, 0.0)  # noqa: E731

    def branch(prefix, x):
        x = x.astype(np.float64)
        for i in range(len(cfg.conv_widths)):
            x = naive_pool(relu(naive_conv(x, p[f"{prefix}.conv{i}.weight"], p[f"{prefix}.conv{i}.bias"])))
        return x.reshape(x.shape[0], -1)

    def fc(name, v):
        return v @ p[f"{name}.weight"].T + p[f"{name}.bias"]

    fr, fd = branch("rgb", rgb), branch("depth", depth)
    if cfg.fusion_kind == "conemb":
        h = np.concatenate([fr, fd], axis=1)
        for i in range(len(cfg.fc_widths)):
            h = relu(fc(f"head.fc{i}", h))
        return fc("head.out", h)
    er, ed = relu(fc("embed_rgb", fr)), relu(fc("embed_depth", fd))
    w = fc("gate.out", relu(fc("gate.fc0", np.concatenate([er, ed], axis=1))))
    h = w[:, :1] * er + w[:, 1:2] * ed
    for i in range(len(cfg.fc_widths)):
        h = relu(fc(f"post.fc{i}", h))
    return fc("post.out", h)
