"""Analytic low/high-fidelity pairs used as stand-ins for expensive solvers.

All functions take points of shape ``(n, dim)`` in the unit box and
return ``(n,)`` arrays.

``linear-coupled`` (dim 2)
    low(x)  = sin(2 pi x0) + 0.5 cos(pi x1) + x0 x1
    high(x) = 2 low(x) + 0.05 sin(3 x0 + x1)
``independent-levels`` (dim 2)
    low(x)  = cos(5 x0) sin(4 x1)
    high(x) = (x0 - 0.3)^2 + sin(3 x1 + 1)
``forrester-like`` (dim 1)
    high(x) = (6 x - 2)^2 sin(12 x - 4)
    low(x)  = 0.5 high(x) + 10 (x - 0.5) - 5
``ridge`` (dim 5 by default)
    t = w . (x - 0.5) with ``w`` a unit vector drawn from ``seed``
    high(x) = sin(3 t) + 0.5 t^2
    low(x)  = 0.8 high(x) + 0.2
"""

from dataclasses import dataclass, field

import numpy as np

BENCHMARKS = ("linear-coupled", "independent-levels", "forrester-like", "ridge")


@dataclass(frozen=True)
class SyntheticBenchmark:
    name: str
    dim: int
    low: callable = field(repr=False)
    high: callable = field(repr=False)
    costs: tuple = (1.0, 10.0)
    direction: np.ndarray = None

    @property
    def lower(self):
        return np.zeros(self.dim)

    @property
    def upper(self):
        return np.ones(self.dim)

    def level(self, fidelity):
        """The ``"low"`` or ``"high"`` function."""
        if fidelity not in ("low", "high"):
            raise ValueError(f"fidelity must be 'low' or 'high', got {fidelity!r}")
        return self.low if fidelity == "low" else self.high


def _lc_low(x):
    return np.sin(2 * np.pi * x[:, 0]) + 0.5 * np.cos(np.pi * x[:, 1]) + x[:, 0] * x[:, 1]


def _lc_high(x):
    return 2.0 * _lc_low(x) + 0.05 * np.sin(3 * x[:, 0] + x[:, 1])


def _ind_low(x):
    return np.cos(5 * x[:, 0]) * np.sin(4 * x[:, 1])


def _ind_high(x):
    return (x[:, 0] - 0.3) ** 2 + np.sin(3 * x[:, 1] + 1)


def _forrester_high(x):
    x = x[:, 0]
    return (6 * x - 2) ** 2 * np.sin(12 * x - 4)


def _forrester_low(x):
    return 0.5 * _forrester_high(x) + 10 * (x[:, 0] - 0.5) - 5


def _as_2d(fn, dim):
    def wrapped(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != dim:
            raise ValueError(f"benchmark expects {dim} inputs, got {x.shape[1]}")
        return fn(x)

    wrapped.__name__ = fn.__name__
    return wrapped


def make_benchmark(name, seed=0, dim=None):
    """Build a named synthetic benchmark (deterministic in ``seed``).

    Only ``ridge`` uses the seed (to draw the ridge direction) and accepts
    ``dim``.
    """
    if name == "linear-coupled":
        return SyntheticBenchmark(name, 2, _as_2d(_lc_low, 2), _as_2d(_lc_high, 2))
    if name == "independent-levels":
        return SyntheticBenchmark(name, 2, _as_2d(_ind_low, 2), _as_2d(_ind_high, 2))
    if name == "forrester-like":
        return SyntheticBenchmark(name, 1, _as_2d(_forrester_low, 1), _as_2d(_forrester_high, 1))
    if name == "ridge":
        dim = 5 if dim is None else int(dim)
        w = np.random.default_rng(seed).standard_normal(dim)
        w /= np.linalg.norm(w)

        def high(x):
            t = (x - 0.5) @ w
            return np.sin(3 * t) + 0.5 * t**2

        def low(x):
            return 0.8 * high(x) + 0.2

        return SyntheticBenchmark(name, dim, _as_2d(low, dim), _as_2d(high, dim), direction=w)
    raise ValueError(f"unknown benchmark {name!r}; choose from {', '.join(BENCHMARKS)}")
