"""Central-difference gradient oracle."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numeric_grad(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5, index=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``x.data`` (perturbed in place)."""
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    idx = range(flat.size) if index is None else index
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = float(f().data)
        flat[i] = old - h
        fm = float(f().data)
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError("objective is not finite near the probe point")
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def finite_diff_check(
    f: Callable[[], Tensor],
    xs: Tensor | Sequence[Tensor],
    h: float = 1e-5,
    probes: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max over checked elements of |g_analytic - g_fd| / max(1, |g_fd|).

    ``f`` is a closure over the tensors in ``xs``. With ``probes`` set, only
    that many randomly chosen coordinates (across all of ``xs``) are checked.
    """
    if isinstance(xs, Tensor):
        xs = [xs]
    for x in xs:
        x.grad = None
    out = f()
    if not np.isfinite(out.data).all():
        raise FloatingPointError("objective is not finite")
    backward(out)
    analytic = [x.grad if x.grad is not None else np.zeros_like(x.data) for x in xs]

    picks: list[list[int] | None]
    if probes is None:
        picks = [None] * len(xs)
    else:
        rng = rng or np.random.default_rng(0)
        sizes = np.array([x.data.size for x in xs])
        owners = rng.choice(len(xs), size=probes, p=sizes / sizes.sum())
        picks = [[int(rng.integers(sizes[k])) for _ in range(int((owners == k).sum()))] for k in range(len(xs))]

    worst = 0.0
    for x, ga, pick in zip(xs, analytic, picks):
        if pick is not None and not pick:
            continue
        gn = numeric_grad(f, x, h, pick)
        sel = slice(None) if pick is None else pick
        a = ga.reshape(-1)[sel]
        n = gn.reshape(-1)[sel]
        err = np.abs(a - n) / np.maximum(1.0, np.abs(n))
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return worst
