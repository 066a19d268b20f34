"""Central finite-difference gradient checks for parameter dicts."""

from __future__ import annotations

from typing import Callable

import numpy as np


def numeric_grad(f: Callable[[dict], float], params: dict, eps: float = 1e-6,
                 max_coords: int | None = None, rng: np.random.Generator | None = None) -> dict:
    """Central differences of ``f`` w.r.t. each parameter.

    With ``max_coords`` only a random subset of coordinates per tensor is
    probed; the other entries of the returned arrays are NaN.
    """
    rng = rng or np.random.default_rng(0)
    out = {}
    for name, p in params.items():
        g = np.full(p.shape, np.nan)
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        gflat = g.reshape(-1)
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            fp = f(params)
            flat[i] = old - eps
            fm = f(params)
            flat[i] = old
            gflat[i] = (fp - fm) / (2 * eps)
        out[name] = g
    return out


def relative_errors(analytic: dict, numeric: dict) -> dict:
    """Per-tensor ``|a - n| / max(|a|, |n|)`` in the 2-norm over probed coordinates."""
    errs = {}
    for name, n in numeric.items():
        mask = ~np.isnan(n)
        a = np.asarray(analytic[name])[mask]
        n = n[mask]
        scale = max(np.linalg.norm(a), np.linalg.norm(n))
        errs[name] = 0.0 if scale == 0 else float(np.linalg.norm(a - n) / scale)
    return errs


def check(f, analytic: dict, params: dict, tol: float = 1e-4, **kw) -> tuple[bool, dict]:
    errs = relative_errors(analytic, numeric_grad(f, params, **kw))
    return all(e <= tol for e in errs.values()), errs
