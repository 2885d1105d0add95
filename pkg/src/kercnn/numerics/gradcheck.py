"""Central finite-difference verification of tape gradients."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, GradCheckError
from .tape import Tape


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    n_checked: int
    per_input: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def _scalar(out):
    out = np.asarray(getattr(out, "value", out), dtype=np.float64)
    if out.size != 1:
        raise GradCheckError(f"function must return a scalar, got shape {out.shape}")
    val = float(out.reshape(()))
    if not np.isfinite(val):
        raise GradCheckError(f"non-finite forward value {val!r}")
    return val


def grad_check(f, inputs, step=1e-6, tolerance=1e-4, max_coords=10_000, seed=0):
    """Compare tape gradients of scalar ``f`` against central differences.

    ``f`` receives a dict mapping each name in ``inputs`` to either a tape
    variable (analytic pass) or a float64 array (numeric pass).  Inputs with
    more than ``max_coords`` coordinates in total are checked on a random
    subsample.  The relative error of a coordinate is
    ``|a - n| / max(|a|, |n|, 1e-3 * s, r)`` where ``s`` is the largest
    gradient magnitude of that input and ``r`` is ``1e5`` times the rounding
    noise of the difference quotient (``eps * max(1, |f|) / step``).  Tiny
    coordinates are thus judged on the tensor's scale, and gradients that are
    exactly zero (e.g. a key bias under softmax) are not judged on noise.
    """
    if not 1e-6 <= step <= 1e-3:
        raise ConfigError(f"finite-difference step {step} outside [1e-6, 1e-3]")
    x = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}

    tape = Tape()
    bound = tape.bind(x)
    out = f(bound)
    f0 = _scalar(out)
    noise = np.finfo(np.float64).eps * max(1.0, abs(f0)) / step
    tape.backward(out)
    analytic = Tape.grads(bound)

    coords = [(k, i) for k in x for i in range(x[k].size)]
    rng = np.random.default_rng(seed)
    if len(coords) > max_coords:
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    numeric = {k: {} for k in x}
    for k, i in coords:
        flat = x[k].reshape(-1)
        orig = flat[i]
        flat[i] = orig + step
        hi = _scalar(f(x))
        flat[i] = orig - step
        lo = _scalar(f(x))
        flat[i] = orig
        numeric[k][i] = (hi - lo) / (2 * step)

    per_input = {}
    for k, found in numeric.items():
        if not found:
            continue
        idx = np.fromiter(found.keys(), dtype=np.int64)
        n = np.fromiter(found.values(), dtype=np.float64)
        a = analytic[k].reshape(-1)[idx].astype(np.float64)
        s = max(np.abs(a).max(), np.abs(n).max())
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), max(1e-3 * s, 1e5 * noise))
        per_input[k] = float((np.abs(a - n) / denom).max())
    worst = max(per_input.values(), default=0.0)
    return GradCheckReport(worst, tolerance, len(coords), per_input)
