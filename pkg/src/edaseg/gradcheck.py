"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    errors: list[float]
    tol: float
    names: list[str] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol

    def __str__(self):
        names = self.names or [f"input{i}" for i in range(len(self.errors))]
        parts = ", ".join(f"{n}={e:.2e}" for n, e in zip(names, self.errors))
        return f"GradCheckReport({'pass' if self.passed else 'FAIL'}; {parts})"


def relative_error(analytic, numeric):
    a = np.abs(analytic)
    n = np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), 1e-8)


def grad_check(op, inputs, tol=1e-4, seed=0, names=None) -> GradCheckReport:
    """Compare ``op``'s analytic gradients against central differences.

    ``op(*inputs)`` must return ``(out, backward)`` where ``backward(dout)``
    returns one gradient per input (None for inputs it does not differentiate,
    which are then skipped). ``op`` must be deterministic, so any randomness
    inside it has to be re-seeded on every call. A fixed random upstream
    gradient turns the output into the scalar ``sum(out * dout)``; each input
    element is perturbed by ``h = 1e-4 * max(1, |x|)``.
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    out, backward = op(*inputs)
    rng = np.random.default_rng(seed)
    dout = rng.standard_normal(np.shape(out))
    analytic = backward(dout.copy() if np.ndim(out) else dout)

    def objective():
        y, _ = op(*inputs)
        # exact summation: terms untouched by the perturbation cancel exactly
        return math.fsum(np.ravel(np.asarray(y, dtype=np.float64) * dout))

    errors = []
    for x, a in zip(inputs, analytic):
        if a is None:
            errors.append(0.0)
            continue
        numeric = np.zeros_like(x)
        flat = x.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            h = 1e-4 * max(1.0, abs(orig))
            flat[i] = orig + h
            fp = objective()
            flat[i] = orig - h
            fm = objective()
            flat[i] = orig
            nflat[i] = (fp - fm) / (2 * h)
        err = relative_error(np.asarray(a, dtype=np.float64).reshape(x.shape), numeric)
        errors.append(float(err.max()) if err.size else 0.0)
    return GradCheckReport(errors, tol, list(names or []))
