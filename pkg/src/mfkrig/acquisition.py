"""Cost-aware sequential enrichment of a nested multi-fidelity database.

Each iteration refits one multi-fidelity model per output, scores every
(candidate, level) pair by cost-normalised IMSE reduction and evaluates
the winner at all levels up to the chosen one.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .empirical import ANGLE_INDEX, INPUT_NAMES, isherwood_from_inputs, unscale_input
from .errors import MfkrigError, SourceError
from .multifidelity import NESTING_TOL, FidelityDataset, MultiFidelityGP, _rows_in, check_nesting

logger = logging.getLogger(__name__)


@dataclass
class CandidatePool:
    """Scaled candidate points and the catalogue entry each came from.

    ``feasible`` marks points still available for selection; the loop
    clears it for every point it evaluates.
    """

    points: np.ndarray
    config_index: np.ndarray = None
    feasible: np.ndarray = None
    labels: tuple = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        n = self.points.shape[0]
        if n == 0:
            raise ValueError("candidate pool is empty")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("candidate points must be finite")
        if np.any(self.points < 0) or np.any(self.points > 1):
            raise ValueError("candidate points must lie in the unit box")
        if self.config_index is None:
            self.config_index = np.full(n, -1, dtype=int)
        self.config_index = np.asarray(self.config_index, dtype=int)
        if self.feasible is None:
            self.feasible = np.ones(n, dtype=bool)
        self.feasible = np.asarray(self.feasible, dtype=bool).copy()

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def copy(self):
        return CandidatePool(self.points.copy(), self.config_index.copy(), self.feasible.copy(), self.labels)


def generate_pool(catalogue, size, seed, lower, upper):
    """Sample candidates from a configuration catalogue.

    Every point takes the reduced geometric coordinates of a uniformly
    drawn catalogue entry, plus an angle uniform on ``[0, 180]``. Points
    are then scaled with ``lower``/``upper`` (one entry per catalogue
    coordinate followed by the angle).
    """
    if catalogue is None or len(catalogue) == 0:
        raise ValueError("configuration catalogue is empty")
    if size < 1:
        raise ValueError("pool size must be at least 1")
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    p = catalogue.values.shape[1] + 1
    if lower.shape != (p,) or upper.shape != (p,):
        raise ValueError(f"bounds must have {p} entries")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(catalogue), size=size)
    phi = rng.uniform(0.0, 180.0, size=size)
    raw = np.column_stack([catalogue.values[idx], phi])
    Z = (raw - lower) / (upper - lower)
    out = catalogue.out_of_range(lower[:-1], upper[:-1])
    if out:
        raise ValueError(f"catalogue entries outside the scaling ranges: {', '.join(out)}")
    return CandidatePool(Z, idx, labels=tuple(catalogue.labels))


def uniform_pool(dim, size, seed):
    """Candidates drawn uniformly from the unit box."""
    if size < 1:
        raise ValueError("pool size must be at least 1")
    return CandidatePool(np.random.default_rng(seed).random((size, dim)))


def imse_reduction(model, Z, level):
    """IMSE reduction proxy of adding ``Z`` at ``level`` (1-based).

    ``sum_k sigma2_{r_k}(z) * prod_{j=k}^{t-1} rho_j^2 * prod_m l_{k,m}``
    over ``k = 1..level``, where ``sigma2_{r_k}`` is the posterior
    variance of the level-``k`` residual GP.

    Returns an array of shape ``(n,)``.
    """
    s = model.n_levels
    if int(level) != level or not 1 <= level <= s:
        raise ValueError(f"level must be in [1, {s}], got {level!r}")
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    total = np.zeros(Z.shape[0])
    for k in range(1, level + 1):
        gp = model.levels_[k - 1]
        downstream = np.prod(model.rho_[k - 1 : level - 1] ** 2)
        volume = np.prod(gp.hyperparameters_.length_scales)
        total += gp.predict_var(Z) * downstream * volume
    return total


def _check_costs(costs, n_levels=None):
    costs = np.asarray(costs, dtype=float).ravel()
    if np.any(~(costs > 0)):
        raise ValueError("costs must be positive")
    if n_levels is not None and costs.size < n_levels:
        raise ValueError(f"need {n_levels} level costs, got {costs.size}")
    return costs


def score(models, Z, level, costs):
    """Acquisition score at ``level``.

    Returns ``(gamma, components)`` where ``components[:, i]`` is the
    IMSE reduction of output ``i`` divided by the cumulative cost of
    levels ``1..level`` and ``gamma`` is their Euclidean norm.
    """
    costs = _check_costs(costs, level)
    models = list(models) if isinstance(models, (list, tuple)) else [models]
    denom = costs[:level].sum()
    comps = np.column_stack([imse_reduction(m, Z, level) for m in models]) / denom
    return np.sqrt(np.sum(comps**2, axis=1)), comps


@dataclass
class AcquisitionDecision:
    """Chosen candidate and level with the scores behind the choice.

    ``imse[i, k-1]`` is the IMSE reduction of output ``i`` at level ``k``.
    """

    index: int
    point: np.ndarray
    level: int
    score: float
    scores: np.ndarray
    imse: np.ndarray

    def to_dict(self):
        return {
            "index": int(self.index),
            "point": [float(v) for v in self.point],
            "level": int(self.level),
            "score": float(self.score),
            "scores": [float(v) for v in self.scores],
            "imse": [[float(v) for v in row] for row in self.imse],
        }


def select_next(models, pool, costs, max_level=None):
    """Exhaustive argmax of the score over feasible candidates and levels.

    Ties go to the lower level, then to the lower pool index. Returns
    ``None`` when no feasible candidate is left.
    """
    models = list(models) if isinstance(models, (list, tuple)) else [models]
    s = models[0].n_levels if max_level is None else int(max_level)
    costs = _check_costs(costs, s)
    avail = np.flatnonzero(pool.feasible)
    if avail.size == 0:
        return None
    Z = pool.points[avail]
    imse = np.stack([[imse_reduction(m, Z, t) for t in range(1, s + 1)] for m in models])  # (out, s, n)
    cum = np.cumsum(costs[:s])
    comps = imse / cum[None, :, None]
    gamma = np.sqrt(np.sum(comps**2, axis=0))  # (s, n)
    best_t, best_j = 0, int(np.argmax(gamma[0]))
    for t in range(1, s):
        j = int(np.argmax(gamma[t]))
        if gamma[t, j] > gamma[best_t, best_j]:
            best_t, best_j = t, j
    return AcquisitionDecision(
        index=int(avail[best_j]),
        point=Z[best_j].copy(),
        level=best_t + 1,
        score=float(gamma[best_t, best_j]),
        scores=comps[:, best_t, best_j].copy(),
        imse=imse[:, :, best_j].copy(),
    )


def max_top_imse(models, pool):
    """Pool maximum of the top-level IMSE reduction (norm over outputs).

    Evaluated over every pool point, including ones already evaluated.
    """
    models = list(models) if isinstance(models, (list, tuple)) else [models]
    s = models[0].n_levels
    vals = np.stack([imse_reduction(m, pool.points, s) for m in models])
    return float(np.sqrt(np.sum(vals**2, axis=0)).max())


class TrainingLog:
    """Per-iteration records, serialised as one JSON object per line."""

    def __init__(self, path=None):
        self.records = []
        self.path = None if path is None else Path(path)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @staticmethod
    def dumps(record):
        return json.dumps(record, sort_keys=True, allow_nan=False)

    def append(self, record):
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(self.dumps(record) + "\n")

    def to_jsonl(self):
        return "".join(self.dumps(r) + "\n" for r in self.records)

    @classmethod
    def read(cls, path):
        log = cls()
        with open(path, encoding="utf-8") as fh:
            log.records = [json.loads(line) for line in fh if line.strip()]
        return log


# -- sources -----------------------------------------------------------------


class FunctionSource:
    """Wrap ``fn(Z) -> (n,) or (n, n_outputs)`` as a fidelity source.

    ``scale`` and ``offset`` apply ``scale * fn(Z) + offset`` so one
    analytic function can stand in for several levels.
    """

    def __init__(self, fn, scale=1.0, offset=0.0):
        self.fn = fn
        self.scale = scale
        self.offset = offset

    def __call__(self, Z):
        y = np.asarray(self.fn(np.atleast_2d(Z)), dtype=float)
        y = y.reshape(-1, 1) if y.ndim == 1 else y
        return self.scale * y + self.offset


class IsherwoodSource:
    """Empirical correlation on scaled reduced inputs.

    ``reduced_index`` lists the positions of the reduced coordinates in
    the full input vector; the remaining scaled inputs are held at
    ``fixed`` (default: the midpoint 0.5).
    """

    def __init__(self, table, reduced_index=(1, 5, 6, 7), fixed=None):
        if not table.has_ranges:
            raise ValueError("the Isherwood source needs a table with validity ranges")
        self.table = table
        self.reduced_index = tuple(int(k) for k in reduced_index)
        self.fixed = np.full(len(INPUT_NAMES), 0.5) if fixed is None else np.asarray(fixed, dtype=float)

    def full_inputs(self, Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        U = np.tile(self.fixed, (Z.shape[0], 1))
        U[:, list(self.reduced_index)] = Z
        X = unscale_input(U, self.table)
        # the container count is discrete
        X[:, 5] = np.round(X[:, 5])
        X[:, ANGLE_INDEX] = np.clip(X[:, ANGLE_INDEX], 0.0, 180.0)
        return X

    def __call__(self, Z):
        return isherwood_from_inputs(self.full_inputs(Z), self.table, warn=False)


class ReplaySource:
    """Look up precomputed results; unknown points raise :class:`SourceError`."""

    def __init__(self, inputs, targets, tol=1e-9):
        self.inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        t = np.asarray(targets, dtype=float)
        self.targets = t.reshape(-1, 1) if t.ndim == 1 else t
        self.tol = tol
        self.calls = 0

    @classmethod
    def from_dataset(cls, dataset, tol=1e-9):
        return cls(dataset.inputs, dataset.targets, tol)

    def __call__(self, Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        self.calls += 1
        out = np.empty((Z.shape[0], self.targets.shape[1]))
        for i, z in enumerate(Z):
            hit = np.flatnonzero(np.abs(self.inputs - z).max(axis=1) <= self.tol)
            if hit.size == 0:
                raise SourceError(f"point {z.tolist()} is not in the replay data")
            out[i] = self.targets[hit[0]]
        return out


# -- the loop -----------------------------------------------------------------


@dataclass
class SequentialResult:
    models: list
    log: TrainingLog
    datasets: list
    pool: CandidatePool
    stopped: str = ""
    history: list = field(default_factory=list, repr=False)


def _fit_models(datasets, model_params, previous=None):
    n_out = datasets[0].targets.shape[1]
    X = [d.inputs for d in datasets]
    models = []
    for i in range(n_out):
        if previous is None:
            m = MultiFidelityGP(**model_params)
        else:
            m = previous[i]
            m.set_params(warm_start=True)
        m.fit(X, [d.targets[:, i] for d in datasets])
        models.append(m)
    return models


def _evaluate(source, z, level, n_out):
    try:
        y = np.asarray(source(z[None, :]), dtype=float)
    except MfkrigError as exc:
        raise SourceError(f"level {level} source failed: {exc}") from exc
    except Exception as exc:  # any evaluator failure aborts the loop
        raise SourceError(f"level {level} source failed: {exc!r}") from exc
    y = y.reshape(1, -1)
    if y.shape[1] != n_out or not np.all(np.isfinite(y)):
        raise SourceError(f"level {level} source returned {y.tolist()}, expected {n_out} finite values")
    return y[0]


def run_sequential(
    datasets,
    pool,
    sources,
    costs=None,
    epsilon=0.1,
    max_iterations=500,
    model_params=None,
    log_path=None,
):
    """Sequential cost-aware enrichment.

    Parameters
    ----------
    datasets : list of FidelityDataset
        Nested initial data, lowest fidelity first.
    pool : CandidatePool
        Copied; the returned pool has evaluated points marked infeasible.
    sources : list of callables
        ``sources[k](Z)`` evaluates level ``k + 1`` and returns
        ``(n, n_outputs)``.
    costs : sequence of float, optional
        Cost per level; defaults to the dataset costs.
    epsilon : float
        Stop once the pool maximum of the top-level IMSE reduction falls
        below this value. ``inf`` returns the initial fit.
    max_iterations : int
    model_params : dict, optional
        Keyword arguments for :class:`MultiFidelityGP`.
    log_path : path, optional
        Records are appended here as they are produced.

    Returns
    -------
    SequentialResult

    Raises
    ------
    SourceError
        A source failed; ``exc.log`` holds the records written so far.
    """
    s = len(datasets)
    if s == 0:
        raise ValueError("at least one fidelity level is required")
    if len(sources) < s:
        raise ValueError(f"need {s} sources, got {len(sources)}")
    costs = _check_costs([d.cost for d in datasets] if costs is None else costs, s)[:s]
    if any(check_nesting(datasets)):
        raise ValueError("initial datasets are not nested")
    if pool.dim != datasets[0].inputs.shape[1]:
        raise ValueError("pool and datasets differ in dimension")
    n_out = datasets[0].targets.shape[1]
    datasets = [
        FidelityDataset(d.level, d.inputs.copy(), d.targets.copy(), d.cost, d.input_names, d.output_names)
        for d in datasets
    ]
    pool = pool.copy()
    params = dict(model_params or {})
    log = TrainingLog(log_path)

    models = _fit_models(datasets, params)
    metric = max_top_imse(models, pool)
    cumulative = 0.0
    for it in range(int(max_iterations)):
        if not metric >= epsilon:
            stopped = "tolerance"
            break
        decision = select_next(models, pool, costs)
        if decision is None:
            stopped = "pool_exhausted"
            break
        z = decision.point
        for k in range(decision.level):
            present = _rows_in(z[None, :], datasets[k].inputs, NESTING_TOL)[0]
            if present:
                continue
            try:
                y = _evaluate(sources[k], z, k + 1, n_out)
            except SourceError as exc:
                exc.log = log
                raise
            datasets[k].inputs = np.vstack([datasets[k].inputs, z])
            datasets[k].targets = np.vstack([datasets[k].targets, y])
        pool.feasible[decision.index] = False
        if any(check_nesting(datasets)):
            raise AssertionError("nesting lost during enrichment")
        cumulative += float(costs[: decision.level].sum())
        models = _fit_models(datasets, params, previous=models)
        metric = max_top_imse(models, pool)
        log.append(
            {
                "iteration": it + 1,
                "decision": decision.to_dict(),
                "max_top_imse": metric,
                "sizes": [len(d) for d in datasets],
                "cumulative_cost": cumulative,
            }
        )
        logger.info("iteration %d: level %d, max IMSE %.4g", it + 1, decision.level, metric)
    else:
        stopped = "max_iterations"
    return SequentialResult(models, log, datasets, pool, stopped)
