"""Central finite-difference gradient checking.

The numeric side only ever calls the scalar loss function; it knows
nothing about how analytic gradients are produced, which keeps the two
routes independent.
"""

from __future__ import annotations

import numpy as np


def numeric_gradient(f, x: np.ndarray, step: float = 1e-5, coords=None) -> np.ndarray:
    """Central differences of scalar f with respect to array x.

    Perturbs x in place and restores it. If ``coords`` (list of flat
    indices) is given, only those entries are evaluated and the rest of
    the returned array is NaN; use ``coords`` to spot-check large tensors.
    """
    g = np.full(x.size, np.nan, dtype=np.float64)
    flat = x.reshape(-1)
    idx = range(x.size) if coords is None else coords
    for i in idx:
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        g[i] = (fp - fm) / (2.0 * step)
    return g.reshape(x.shape)


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-9) -> float:
    """Max relative error between gradient arrays, ignoring NaN entries.

    Entries where both gradients are below ``atol`` (the finite-difference
    noise floor for double precision, step 1e-5, O(1) losses) count as
    zero error; elsewhere the error is |a - n| / max(|a|, |n|).
    """
    mask = ~np.isnan(numeric)
    a = np.asarray(analytic, dtype=np.float64)[mask]
    n = np.asarray(numeric, dtype=np.float64)[mask]
    diff = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    err = np.where(diff <= atol, 0.0, diff / np.maximum(scale, atol))
    return float(err.max()) if err.size else 0.0


def check_param_grads(
    loss_fn,
    params: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    step: float = 1e-5,
    max_coords: int = 400,
    rng: np.random.Generator | None = None,
    rtol: float = 1e-4,
) -> dict[str, float]:
    """Compare analytic gradients against central differences per tensor.

    loss_fn() recomputes the scalar loss from the (mutated) params.
    Tensors with more than ``max_coords`` entries are spot-checked on a
    random coordinate subset. Returns {name: max relative error}.

    Coordinates that fail at ``step`` are re-probed at step/4: a ReLU or
    max-pool kink inside the probe interval makes the central difference
    itself invalid there, and the smaller step resolves it. A genuinely
    wrong analytic gradient stays wrong at every step and still fails.
    """
    errs = {}
    for name, arr in params.items():
        coords = None
        if arr.size > max_coords:
            r = rng or np.random.default_rng(0)
            coords = r.choice(arr.size, size=max_coords, replace=False)
        num = numeric_gradient(loss_fn, arr, step=step, coords=coords)
        an = np.asarray(analytic[name], dtype=np.float64)
        flat_a, flat_n = an.reshape(-1), num.reshape(-1)
        checked = np.flatnonzero(~np.isnan(flat_n))
        bad = [
            i for i in checked
            if abs(flat_a[i] - flat_n[i]) > 1e-9
            and abs(flat_a[i] - flat_n[i]) > rtol * max(abs(flat_a[i]), abs(flat_n[i]))
        ]
        if bad:
            refined = numeric_gradient(loss_fn, arr, step=step / 4.0, coords=bad)
            flat_n[bad] = refined.reshape(-1)[bad]
        errs[name] = max_rel_error(an, flat_n.reshape(num.shape))
    return errs
