"""Finite-difference verification of analytic gradients.

Central differences with step 1e-5 against the gradients produced by a
backward pass; an entry passes when
``|analytic - numeric| <= atol + rtol * max(|analytic|, |numeric|)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_STEP = 1e-5
DEFAULT_ATOL = 1e-7
DEFAULT_RTOL = 1e-4


@dataclass
class GradReport:
    """Outcome of one finite-difference sweep."""

    checked: int = 0
    failed: int = 0
    worst_abs: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def ok(self):
        return self.failed == 0


def check_gradients(loss_fn, params, step=DEFAULT_STEP,
                    atol=DEFAULT_ATOL, rtol=DEFAULT_RTOL,
                    max_entries_per_param=None, rng=None):
    """Compare backward-pass gradients of ``loss_fn`` against central differences.

    ``loss_fn`` takes no arguments, reads the current contents of ``params``
    (tensors with ``requires_grad``), and returns a scalar loss Tensor; it is
    re-invoked for every perturbed evaluation, so it must be deterministic.
    When ``max_entries_per_param`` is set, a random subset of entries is
    checked per parameter (seeded through ``rng``).
    """
    from . import tensor as T

    for p in params:
        p.grad = None
    loss = loss_fn()
    T.backward(loss)
    analytic = {id(p): (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for p in params}

    report = GradReport()
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries_per_param is not None and n > max_entries_per_param:
            picker = rng if rng is not None else np.random.default_rng(0)
            idx = picker.choice(n, size=max_entries_per_param, replace=False)
        else:
            idx = np.arange(n)
        ana_flat = analytic[id(p)].reshape(-1)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + step
            up = float(loss_fn().data)
            flat[i] = keep - step
            dn = float(loss_fn().data)
            flat[i] = keep
            numeric = (up - dn) / (2.0 * step)
            a = float(ana_flat[i])
            diff = abs(a - numeric)
            tol = atol + rtol * max(abs(a), abs(numeric))
            report.checked += 1
            report.worst_abs = max(report.worst_abs, diff)
            if diff > tol:
                report.failed += 1
                report.failures.append((p.name, int(i), a, numeric, diff))
    return report
