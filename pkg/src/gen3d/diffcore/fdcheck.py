"""Central-difference verification of analytic gradients.

The loss callable must return a GradientRecord (value + analytic gradients)
and be deterministic: any sampling it depends on has to be frozen by the
caller.  Verification always runs in float64 regardless of training dtype.
"""

from __future__ import annotations

import numpy as np

from ..errors import EvaluationError


def finite_difference_check(loss, params, step, samples, rng_seed):
    """Max relative error between analytic and central-difference gradients.

    Probes `samples` randomly chosen coordinates (without replacement when
    possible).  Error metric per coordinate:
    |analytic - central| / max(1, |central|).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params64 = params.astype(np.float64)
    base = loss(params64)
    total = params64.total_len
    rng = np.random.default_rng(rng_seed)
    n = min(samples, total)
    coords = rng.choice(total, size=n, replace=total < samples)

    # flat coordinate -> (segment, offset)
    bounds = np.cumsum([v.size for v in params64.values])
    worst = 0.0
    for flat in np.sort(coords):
        seg = int(np.searchsorted(bounds, flat, side="right"))
        off = int(flat - (bounds[seg - 1] if seg else 0))
        where = f"{params64.names[seg]}[{off}]"
        lo = loss(params64.perturbed(seg, off, -step)).loss_value
        hi = loss(params64.perturbed(seg, off, +step)).loss_value
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise EvaluationError(f"non-finite loss probing {where}")
        central = (hi - lo) / (2.0 * step)
        analytic = float(base.grads[seg][off])
        err = abs(analytic - central) / max(1.0, abs(central))
        if err > worst:
            worst = err
    return worst
