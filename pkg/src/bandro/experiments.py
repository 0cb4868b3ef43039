"""Holdout-validated, multi-trial out-of-sample experiments for both case studies."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .band_kde import build_kde_band
from .band_sr import build_sr_band, group_size
from .core import BandroError, InvalidParameterError, Rng, SampleSet, derive_stream
from .dro import SgdConfig, sgd_solve
from .oracle import robust_value_oracle
from .problems import Newsvendor, Portfolio, out_of_sample_cost, true_density

log = logging.getLogger(__name__)

SR_GRID = {"c": [0.5, 0.75, 1.0, 1.25, 1.5], "alpha": [0.75, 0.8, 0.85, 0.95]}
KDE_GRID = {"c": [0.02, 0.04, 0.06, 0.08, 0.1], "delta": [0.02, 0.04, 0.06, 0.08, 0.1]}
TRAIN_FRACTION = 0.7
MAX_FAILURE_RATE = 0.1

NEWSVENDOR_SGD = {"batch": 64, "eta": 5.0, "eta_lam": 50.0, "iters": 2000}
PORTFOLIO_SGD = {"batch": 64, "eta": 0.01, "eta_lam": 0.5, "iters": 1000, "sampler": "mixture"}


class ExperimentError(BandroError):
    """Raised when too many trials fail."""


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    ``problem`` and ``density`` are dictionaries with a ``name``/``family``
    key plus parameters. ``band`` is ``"sr"`` or ``"kde"``; ``grid`` maps the
    two hyperparameter names to their candidate values.
    """

    problem: dict = field(default_factory=lambda: {"name": "newsvendor", "c_s": 19.0,
                                                   "c_h": 1.0, "b": 250.0})
    density: dict = field(default_factory=lambda: {"family": "truncated_normal"})
    band: str = "sr"
    sizes: list = field(default_factory=lambda: [10, 20, 40, 80])
    trials: int = 100
    n_large: int = 100_000
    grid: dict | None = None
    sgd: dict | None = None
    seed: int = 0
    mc_samples: int = 100_000
    tab_nodes: int = 101
    kernel: str = "boxcar"
    jobs: int = 1

    def __post_init__(self):
        if self.band not in ("sr", "kde"):
            raise InvalidParameterError("band must be 'sr' or 'kde'")
        if self.grid is None:
            self.grid = dict(SR_GRID if self.band == "sr" else KDE_GRID)
        if self.sgd is None:
            name = self.problem.get("name")
            self.sgd = dict(NEWSVENDOR_SGD if name == "newsvendor" else PORTFOLIO_SGD)
        if len(self.grid) != 2 or not all(len(v) for v in self.grid.values()):
            raise InvalidParameterError("grid needs two non-empty hyperparameter lists")
        if not self.sizes or min(self.sizes) < 10:
            raise InvalidParameterError("sample sizes must be at least 10")
        if self.trials < 1 or self.n_large < 1:
            raise InvalidParameterError("trials and n_large must be positive")

    @property
    def param_names(self):
        return list(self.grid)

    def cells(self):
        a, b = self.param_names
        return [(p, q) for p in self.grid[a] for q in self.grid[b]]

    def desk(self) -> "ExperimentConfig":
        """Desk-scale copy: 20 trials and 20000 evaluation draws."""
        return dataclasses.replace(self, trials=20, n_large=20_000)

    def to_json(self) -> str:
        # key order matters: the first grid key is param1
        return json.dumps(dataclasses.asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        raw = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise InvalidParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())


@dataclass
class TrialReport:
    size: int
    trial: int
    params: tuple
    x: np.ndarray
    oos_cost: float
    wall_time: float
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trials: list
    aggregates: list  # (size, mean, p20, p80)

    def write(self, out_dir: str | Path) -> dict:
        """Write ``trials.csv``, ``aggregate.csv`` and ``hyperparameters.csv``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ok = [t for t in self.trials if t.ok]
        dim = ok[0].x.size if ok else 1
        xcols = ["x_hat"] if dim == 1 else [f"x_hat{i + 1}" for i in range(dim)]
        paths = {"trials": out / "trials.csv", "aggregate": out / "aggregate.csv",
                 "hyperparameters": out / "hyperparameters.csv"}
        with open(paths["trials"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["size", "trial", "param1", "param2", *xcols, "oos_cost"])
            for t in ok:
                w.writerow([t.size, t.trial, _fmt(t.params[0]), _fmt(t.params[1]),
                            *map(_fmt, t.x), _fmt(t.oos_cost)])
        with open(paths["aggregate"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["size", "mean", "p20", "p80"])
            for size, mean, p20, p80 in self.aggregates:
                w.writerow([size, _fmt(mean), _fmt(p20), _fmt(p80)])
        a, b = self.config.param_names
        with open(paths["hyperparameters"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["size", "trial", a, b, "status"])
            for t in self.trials:
                w.writerow([t.size, t.trial, _fmt(t.params[0]), _fmt(t.params[1]),
                            "ok" if t.ok else f"failed: {t.error}"])
        return paths


def _fmt(v) -> str:
    return repr(float(v)) if v is not None else ""


def aggregate(costs) -> tuple:
    """``(mean, p20, p80)``; independent of the order of ``costs``."""
    c = np.sort(np.asarray(costs, dtype=float))
    return math.fsum(c) / c.size, float(np.percentile(c, 20)), float(np.percentile(c, 80))


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def make_problem(params: dict):
    params = dict(params)
    name = params.pop("name")
    if name == "newsvendor":
        return Newsvendor(**params)
    if name == "portfolio":
        return Portfolio(**params)
    raise InvalidParameterError(f"unknown problem {name!r}")


def make_density(params: dict):
    params = dict(params)
    return true_density(params.pop("family"), **params)


def band_builder(cfg: ExperimentConfig, density):
    """``build(data, params, rng)`` for the configured band family."""
    if cfg.band == "sr":
        a, b = density.box.lower[0], density.box.upper[0]

        def build(data, params, rng):
            c, alpha = params
            K = group_size(data.N, c)
            band = build_sr_band(data, a, b, density.mode, density.cap, alpha, K=K,
                                 S=cfg.mc_samples, rng=rng)
            return band.tabulate(cfg.tab_nodes)
        return build

    def build(data, params, rng):
        c, delta = params
        h = c * (math.log(data.N) / data.N) ** (1.0 / (2 + data.m))
        return build_kde_band(data, cfg.kernel, h, delta)
    return build


def holdout_select(data: SampleSet, cells, builder, problem, sgd_cfg: SgdConfig, rng: Rng):
    """Pick the grid cell whose solution has the smallest mean cost on a 30% test split.

    Returns ``(params, x, scores)`` where ``scores`` maps each cell to its test
    cost (``nan`` for skipped cells).
    """
    if data.N < 10:
        raise InvalidParameterError("holdout validation needs N >= 10")
    perm = derive_stream(rng, "split").permutation(data.N)
    n_train = int(round(TRAIN_FRACTION * data.N))
    train, test = data.subset(perm[:n_train]), data.subset(perm[n_train:])
    scores = {}
    best = None
    for params in cells:
        cell_rng = derive_stream(rng, f"cell/{params}")
        try:
            band = builder(train, params, derive_stream(cell_rng, "band"))
            sol = sgd_solve(problem, band, sgd_cfg, derive_stream(cell_rng, "sgd"), data=train)
        except (BandroError, ValueError) as exc:
            log.info("cell %s skipped: %s", params, exc)
            scores[params] = math.nan
            continue
        score = out_of_sample_cost(problem, sol.x, test)
        scores[params] = score
        if best is None or score < best[0]:
            best = (score, params, sol.x)
    if best is None:
        raise BandroError("every hyperparameter cell failed")
    return best[1], best[2], scores


def run_trial(cfg: ExperimentConfig, size: int, trial: int) -> TrialReport:
    t0 = time.perf_counter()
    root = derive_stream(Rng(cfg.seed), f"size/{size}/trial/{trial}")
    problem = make_problem(cfg.problem)
    density = make_density(cfg.density)
    builder = band_builder(cfg, density)
    sgd_cfg = SgdConfig(**cfg.sgd)
    try:
        data = density.sample(derive_stream(root, "data"), size)
        params, _, _ = holdout_select(data, cfg.cells(), builder, problem, sgd_cfg,
                                      derive_stream(root, "holdout"))
        band = builder(data, params, derive_stream(root, "final-band"))
        sol = sgd_solve(problem, band, sgd_cfg, derive_stream(root, "final-sgd"), data=data)
        test = density.sample(derive_stream(root, "evaluation"), cfg.n_large)
        cost = out_of_sample_cost(problem, sol.x, test)
        return TrialReport(size, trial, params, sol.x, cost, time.perf_counter() - t0)
    except (BandroError, ValueError) as exc:
        log.warning("trial %d at N=%d failed: %s", trial, size, exc)
        return TrialReport(size, trial, (None, None), np.array([]), math.nan,
                           time.perf_counter() - t0, error=str(exc))


def _run_trial_args(args):
    return run_trial(*args)


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                   jobs: int | None = None) -> ExperimentResult:
    """All sizes and trials; per-trial streams make the result independent of ``jobs``."""
    jobs = cfg.jobs if jobs is None else jobs
    work = [(cfg, size, trial) for size in cfg.sizes for trial in range(cfg.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_trial_args, work))
    else:
        reports = [run_trial(*w) for w in work]
    reports.sort(key=lambda t: (cfg.sizes.index(t.size), t.trial))
    failed = sum(not t.ok for t in reports)
    if failed > MAX_FAILURE_RATE * len(reports):
        raise ExperimentError(f"{failed} of {len(reports)} trials failed")
    aggregates = []
    for size in cfg.sizes:
        costs = [t.oos_cost for t in reports if t.size == size and t.ok]
        if costs:
            aggregates.append((size, *aggregate(costs)))
    result = ExperimentResult(cfg, reports, aggregates)
    if out_dir is not None:
        result.write(out_dir)
    return result


def probabilistic_upper_bound_check(cfg: ExperimentConfig, R: int, params=(1.0, 0.2),
                                    G: int = 2000, return_values: bool = False):
    """Frequency over ``R`` trials that the robust value at the solution bounds its true cost.

    Each trial draws ``cfg.sizes[0]`` points, builds the band with fixed
    ``params``, solves, and compares the oracle worst-case value of the
    solution with its expected cost estimated from ``cfg.n_large`` fresh draws.
    """
    problem = make_problem(cfg.problem)
    density = make_density(cfg.density)
    if density.m != 1:
        raise InvalidParameterError("the check needs a univariate problem")
    builder = band_builder(cfg, density)
    sgd_cfg = SgdConfig(**cfg.sgd)
    hits, values = 0, []
    for r in range(R):
        root = derive_stream(Rng(cfg.seed), f"upper-bound/{r}")
        data = density.sample(derive_stream(root, "data"), cfg.sizes[0])
        band = builder(data, params, derive_stream(root, "band"))
        sol = sgd_solve(problem, band, sgd_cfg, derive_stream(root, "sgd"), data=data)
        v_robust = robust_value_oracle(problem, band, sol.x, G)
        v_true = out_of_sample_cost(problem, sol.x,
                                    density.sample(derive_stream(root, "evaluation"), cfg.n_large))
        hits += v_robust >= v_true
        values.append((v_robust, v_true))
    freq = hits / R
    return (freq, values) if return_values else freq
