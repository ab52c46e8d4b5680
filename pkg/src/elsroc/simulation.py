"""Monte-Carlo comparison of selection criteria.

Each replication draws ``N`` studies of continuous test values, picks
each study's threshold by Youden's index, fits every candidate model and
records how far each fitted summary curve is from the true ROC curve.
Replication ``r`` draws from its own stream
``SeedSequence(seed, spawn_key=(scenario_code, N, r, 0))`` so it can be
reproduced alone and results do not depend on worker count.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, stats
from scipy.special import ndtr, ndtri

from . import __version__
from ._accel import BACKEND
from .criteria import ALL_KINDS, CriterionKind, score_fits
from .criteria import fit_grid
from .model_fit import default_grid
from .sroc import DEFAULT_GRID_SIZE, DegenerateCurveError, fpr_grid, summary_curve, trapezoid_area
from .study_data import Dataset, StudyTable

log = logging.getLogger(__name__)

RANDOM = "random"
BEST = "BEST"
ROW_ORDER = ("aic-noj", "aic", "caic-vb", "caic-gk", "el-fix", "el-blup", RANDOM)


# ---------------------------------------------------------------------------
# Distributions and scenarios
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Distribution:
    """``kind`` is one of logistic, normal, skewnormal, truncnormal.

    Parameters: logistic (location, scale); normal (mean, sd);
    skewnormal (location, scale, shape); truncnormal (mean, sd), truncated
    to [mean - sd, mean + sd].
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in ("logistic", "normal", "skewnormal", "truncnormal"):
            raise ValueError(f"unknown distribution {self.kind!r}")
        if self.params[1] <= 0:
            raise ValueError("scale must be positive")

    @property
    def frozen(self):
        p = self.params
        if self.kind == "logistic":
            return stats.logistic(loc=p[0], scale=p[1])
        if self.kind == "normal":
            return stats.norm(loc=p[0], scale=p[1])
        if self.kind == "skewnormal":
            return stats.skewnorm(p[2], loc=p[0], scale=p[1])
        return stats.truncnorm(-1.0, 1.0, loc=p[0], scale=p[1])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        p = self.params
        if self.kind == "logistic":
            return rng.logistic(p[0], p[1], size=n)
        if self.kind == "normal":
            return rng.normal(p[0], p[1], size=n)
        if self.kind == "skewnormal":
            delta = p[2] / math.sqrt(1.0 + p[2] ** 2)
            u0 = rng.standard_normal(n)
            u1 = rng.standard_normal(n)
            return p[0] + p[1] * (delta * np.abs(u0) + math.sqrt(1.0 - delta**2) * u1)
        lo, hi = ndtr(-1.0), ndtr(1.0)
        return p[0] + p[1] * ndtri(lo + (hi - lo) * rng.random(n))

    def cdf(self, x):
        return self.frozen.cdf(x)

    def sf(self, x):
        return self.frozen.sf(x)

    def ppf(self, q):
        return self.frozen.ppf(q)

    def isf(self, q):
        return self.frozen.isf(q)


def sample_distribution(spec: Distribution, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be at least 1")
    return spec.sample(n, rng)


@dataclass(frozen=True)
class Scenario:
    name: str
    code: int
    f0: Distribution
    f1: Distribution
    mean_m0: float = 160.0
    mean_m1: float = 40.0


SCENARIOS = {
    "LD": Scenario("LD", 0, Distribution("logistic", (0.0, 1.0)), Distribution("logistic", (1.8, 1.2))),
    "ND": Scenario("ND", 1, Distribution("normal", (0.0, 1.0)), Distribution("normal", (1.5, 1.2))),
    "SND": Scenario(
        "SND", 2, Distribution("skewnormal", (0.0, 1.0, 1.0)), Distribution("skewnormal", (0.25, 2.0, 5.0))
    ),
    "TND": Scenario("TND", 3, Distribution("truncnormal", (0.0, 1.0)), Distribution("truncnormal", (1.0, 1.25))),
}


def get_scenario(name) -> Scenario:
    if isinstance(name, Scenario):
        return name
    try:
        return SCENARIOS[str(name).upper()]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; valid: {', '.join(SCENARIOS)}") from None


# ---------------------------------------------------------------------------
# Study generation
# ---------------------------------------------------------------------------


def youden_threshold(x0, x1) -> float:
    """Cut maximising sens + spec - 1 with ``value > cut`` called positive.

    Candidates are midpoints between consecutive distinct pooled values
    plus -inf and +inf; ties go to the smallest cut.
    """
    x0 = np.sort(np.asarray(x0, dtype=float))
    x1 = np.sort(np.asarray(x1, dtype=float))
    if x0.size == 0 or x1.size == 0:
        raise ValueError("both samples must be non-empty")
    v = np.unique(np.concatenate([x0, x1]))
    cuts = np.concatenate([[-np.inf], 0.5 * (v[1:] + v[:-1]), [np.inf]])
    # J * n0 * n1 in integers so exact ties stay ties
    below1 = np.searchsorted(x1, cuts, side="right").astype(np.int64)
    below0 = np.searchsorted(x0, cuts, side="right").astype(np.int64)
    j = (x1.size - below1) * x0.size - (x0.size - below0) * x1.size
    return float(cuts[np.argmax(j)])


def _poisson_at_least(rng, mean, lo=2):
    while True:
        m = int(rng.poisson(mean))
        if m >= lo:
            return m


def generate_study(scenario, rng: np.random.Generator) -> StudyTable:
    sc = get_scenario(scenario)
    m0 = _poisson_at_least(rng, sc.mean_m0)
    m1 = _poisson_at_least(rng, sc.mean_m1)
    x0 = sc.f0.sample(m0, rng)
    x1 = sc.f1.sample(m1, rng)
    c = youden_threshold(x0, x1)
    tp = int(np.sum(x1 > c))
    fp = int(np.sum(x0 > c))
    return StudyTable(tp, m1 - tp, fp, m0 - fp)


# ---------------------------------------------------------------------------
# True ROC
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrueRoc:
    fpr: np.ndarray = field(repr=False)
    sens: np.ndarray = field(repr=False)
    area: float
    area_trapezoid: float


def true_roc_values(scenario, u) -> np.ndarray:
    sc = get_scenario(scenario)
    return sc.f1.sf(sc.f0.isf(np.asarray(u, dtype=float)))


@lru_cache(maxsize=None)
def true_auc(scenario) -> float:
    """``P(X1 > X0)`` by adaptive quadrature of the ROC curve."""
    sc = get_scenario(scenario)
    val, _ = integrate.quad(
        lambda u: float(sc.f1.sf(sc.f0.isf(u))), 0.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=500
    )
    return val


def true_roc(scenario, grid_size: int = 2001) -> TrueRoc:
    u = fpr_grid(grid_size)
    c = true_roc_values(scenario, u)
    return TrueRoc(u, c, true_auc(get_scenario(scenario).name), trapezoid_area(u, c))


@lru_cache(maxsize=16)
def _true_curve_cached(name, grid_size):
    c = true_roc_values(name, fpr_grid(grid_size))
    c.setflags(write=False)
    return c


# ---------------------------------------------------------------------------
# Replications
# ---------------------------------------------------------------------------


def replication_rng(seed: int, scenario_code: int, n_studies: int, rep: int, stream: int = 0):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(scenario_code, n_studies, rep, stream))
    return np.random.default_rng(ss)


def competition_rank(values: np.ndarray, valid: np.ndarray, worst: int) -> np.ndarray:
    """1 + number of valid entries strictly smaller; invalid entries get ``worst``."""
    ranks = np.full(values.shape, worst, dtype=int)
    v = values[valid]
    ranks[valid] = 1 + np.sum(v[None, :] < v[:, None], axis=1)
    return ranks


def _pick(values: np.ndarray, valid: np.ndarray) -> int:
    idx = np.flatnonzero(valid)
    v = values[idx]
    return int(idx[np.flatnonzero(v == v.min())[0]])


@dataclass(frozen=True, eq=False)
class ReplicationResult:
    rep: int
    auc_error: np.ndarray = field(repr=False)
    curve_error: np.ndarray = field(repr=False)
    valid: np.ndarray = field(repr=False)
    rank1: np.ndarray = field(repr=False)
    rank2: np.ndarray = field(repr=False)
    selected: dict
    all_infinite: tuple = ()

    @property
    def ok(self):
        return bool(self.valid.any())


def run_replication(
    scenario,
    n_studies: int,
    rep: int,
    seed: int,
    criteria: Sequence[str] = tuple(k.value for k in ALL_KINDS),
    method: str = "REML",
    grid_size: int = DEFAULT_GRID_SIZE,
) -> ReplicationResult:
    sc = get_scenario(scenario)
    rng = replication_rng(seed, sc.code, n_studies, rep, 0)
    tables = [generate_study(sc, rng) for _ in range(n_studies)]
    data = Dataset.from_tables(tables)
    grid = default_grid()
    fits = fit_grid(data, grid, method)

    m = len(grid)
    truth = _true_curve_cached(sc.name, grid_size)
    area = true_auc(sc.name)
    auc_err = np.full(m, np.nan)
    iae = np.full(m, np.nan)
    for j, f in enumerate(fits):
        if f is None:
            continue
        try:
            cur = summary_curve(f, grid_size)
        except DegenerateCurveError:
            fits[j] = None
            continue
        auc_err[j] = cur.auc - area
        iae[j] = trapezoid_area(cur.fpr_grid, np.abs(cur.sens_values - truth))
    valid = np.isfinite(iae)
    rank1 = competition_rank(np.abs(auc_err), valid, m)
    rank2 = competition_rank(iae, valid, m)

    selected = {}
    all_inf = []
    if valid.any():
        kinds = [c for c in criteria if c != RANDOM]
        scores = score_fits(fits, grid, kinds, data)
        for kind, row in scores.items():
            vals = np.array([s.value for s in row])
            if not np.isfinite(vals[valid]).any():
                all_inf.append(kind.value)
            selected[kind.value] = _pick(vals, valid)
        if RANDOM in criteria:
            r_rng = replication_rng(seed, sc.code, n_studies, rep, 1)
            selected[RANDOM] = int(r_rng.choice(np.flatnonzero(valid)))
        selected[BEST] = _pick(iae, valid)
    return ReplicationResult(rep, auc_err, iae, valid, rank1, rank2, selected, tuple(all_inf))


def _run_chunk(args):
    scenario, n_studies, reps, seed, criteria, method, grid_size = args
    return [run_replication(scenario, n_studies, r, seed, criteria, method, grid_size) for r in reps]


# ---------------------------------------------------------------------------
# Aggregation and report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReportRow:
    criterion: str
    rmse: float
    rmse_se: float | None
    rank1: float
    rank1_se: float | None
    miae: float
    miae_se: float | None
    rank2: float
    rank2_se: float | None


COLUMNS = ("criterion", "rmse", "rmse_se", "rank1", "rank1_se", "miae", "miae_se", "rank2", "rank2_se")


def _label(key):
    if key == BEST:
        return BEST
    if key == RANDOM:
        return "RANDOM"
    return CriterionKind.parse(key).label


def _se(x):
    if x.size < 2:
        return None
    return float(np.std(x, ddof=1) / math.sqrt(x.size))


def aggregate(results: Sequence[ReplicationResult], keys: Sequence[str]) -> list[ReportRow]:
    good = [r for r in results if r.ok]
    rows = []
    for key in keys:
        sel = np.array([r.selected[key] for r in good], dtype=int)
        e = np.array([r.auc_error[j] for r, j in zip(good, sel)])
        c = np.array([r.curve_error[j] for r, j in zip(good, sel)])
        r1 = np.array([r.rank1[j] for r, j in zip(good, sel)], dtype=float)
        r2 = np.array([r.rank2[j] for r, j in zip(good, sel)], dtype=float)
        rmse = float(math.sqrt(np.mean(e * e)))
        se_sq = _se(e * e)
        rmse_se = None if se_sq is None else (se_sq / (2.0 * rmse) if rmse > 0 else 0.0)
        rows.append(
            ReportRow(_label(key), rmse, rmse_se, float(r1.mean()), _se(r1), float(c.mean()), _se(c),
                      float(r2.mean()), _se(r2))
        )
    return rows


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    rows: list
    manifest: dict
    replications: list = field(repr=False, default_factory=list)

    def row(self, label) -> ReportRow:
        for r in self.rows:
            if r.criterion.lower() == str(label).lower():
                return r
        raise KeyError(label)

    def to_csv(self) -> str:
        def fmt(v):
            if v is None:
                return "NA"
            if isinstance(v, float):
                return repr(v)
            return str(v)

        lines = [f"# {k}={json.dumps(v, sort_keys=True)}" for k, v in self.manifest.items()]
        lines.append(",".join(COLUMNS))
        for r in self.rows:
            lines.append(",".join(fmt(getattr(r, c)) for c in COLUMNS))
        return "\n".join(lines) + "\n"

    def to_jsonl(self) -> str:
        out = [json.dumps({"manifest": self.manifest}, sort_keys=True)]
        for r in self.rows:
            out.append(json.dumps({c: getattr(r, c) for c in COLUMNS}))
        return "\n".join(out) + "\n"


def run_experiment(
    scenario,
    n_studies: int,
    reps: int,
    criteria: Sequence[str] | None = None,
    method: str = "REML",
    seed: int = 0,
    grid_size: int = DEFAULT_GRID_SIZE,
    workers: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> ExperimentReport:
    """Run ``reps`` replications and summarise each criterion plus BEST.

    ``criteria`` are criterion names (see :class:`CriterionKind`) and may
    include ``"random"`` for a uniform random selector.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    sc = get_scenario(scenario)
    if criteria is None:
        criteria = [k.value for k in ALL_KINDS]
    crit = []
    for c in criteria:
        c = str(c).strip().lower()
        crit.append(RANDOM if c == RANDOM else CriterionKind.parse(c).value)
    crit = tuple(k for k in ROW_ORDER if k in crit)
    method = method.upper()

    chunks = []
    step = max(1, reps // 10)
    for start in range(0, reps, step):
        chunks.append((sc.name, n_studies, range(start, min(reps, start + step)), seed, crit, method, grid_size))

    results = []
    if workers <= 1:
        for ch in chunks:
            results.extend(_run_chunk(ch))
            if progress:
                progress(len(results), reps)
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for part in ex.map(_run_chunk, chunks):
                results.extend(part)
                if progress:
                    progress(len(results), reps)

    rows = aggregate(results, list(crit) + [BEST])
    manifest = {
        "scenario": sc.name,
        "n_studies": n_studies,
        "reps": reps,
        "seed": seed,
        "method": method,
        "criteria": list(crit),
        "grid": [str(s) for s in default_grid()],
        "grid_size": grid_size,
        "failed_replications": sum(not r.ok for r in results),
        "all_infinite_selections": {
            k: sum(k in r.all_infinite for r in results) for k in crit if k != RANDOM
        },
        "software": f"elsroc {__version__}",
        "backend": BACKEND,
    }
    return ExperimentReport(rows, manifest, results)
