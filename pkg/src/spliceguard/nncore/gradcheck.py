"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .autograd import no_grad


def finite_difference_check(closure, params, delta=1e-4, max_coords=None, rng=None) -> float:
    """Largest relative disagreement between autodiff and central differences.

    ``closure()`` must rebuild the forward pass and return a scalar ``Tensor``.
    With ``max_coords`` set, that many coordinates are sampled uniformly over
    all parameters instead of visiting every one.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    closure().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
    if not coords:
        return 0.0
    if max_coords is not None and max_coords < len(coords):
        rng = np.random.default_rng(0) if rng is None else rng
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[k] for k in sorted(picks)]

    worst = 0.0
    with no_grad():
        for i, j in coords:
            flat = params[i].data.reshape(-1)
            saved = flat[j]
            flat[j] = saved + delta
            up = float(closure().data)
            flat[j] = saved - delta
            down = float(closure().data)
            flat[j] = saved
            numeric = (up - down) / (2 * delta)
            exact = float(analytic[i].reshape(-1)[j])
            err = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
