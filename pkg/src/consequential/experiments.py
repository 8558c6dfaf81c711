"""Lambda sweeps over the synthetic feed and replay data.

Every repetition draws its randomness from streams keyed by the repetition
index only, so all lambda values in one experiment see the same original-model
rollouts, resampling offsets and evaluation noise (paired comparisons).
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import __version__
from .core import SeedSpec
from .data import FixtureConfig, load_trajectories, make_replay_fixture
from .env import (
    REPLAY_ORIGINAL,
    SYNTHETIC_ORIGINAL,
    ReplayCorpus,
    SyntheticConfig,
    SyntheticEnv,
    rollout,
)
from .optimal_sampler import log_normalizer_from_costs, tilt
from .plackett_luce import PolicyParams, trajectory_log_ratio
from .policy_gradient import TrainConfig, TrainTrace, train
from .welfare import (
    cost_spec,
    mean_utility,
    misinfo_fraction,
    trajectory_cost,
    utility_curve,
    utility_spec,
)

MODES = ("synth_optimal", "synth_train", "synth_compare", "replay_train")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainSettings:
    iterations: int = 400
    batch_size: int = 50
    learning_rate: float = 1.0
    schedule: str = "constant"
    init: str = "copy_original"
    baseline: bool = True
    max_grad_norm: float = 1e3
    direction: str = "descent"
    lambda_scaled_lr: bool = True
    param_scale: tuple[float, ...] | None = None
    repetitions: int = 3

    def config(self, lam: float, seed: int) -> TrainConfig:
        kw = {f.name: getattr(self, f.name) for f in fields(TrainConfig) if hasattr(self, f.name)}
        return TrainConfig(lam=lam, seed=seed, **kw)


@dataclass(frozen=True)
class OptimalSettings:
    samples: int = 200  # B
    kappa: int = 100
    method: str = "systematic"


@dataclass(frozen=True)
class ReplaySettings:
    dataset: str = ""
    fixture_submissions: int = 0
    test_fraction: float = 0.38
    window: int = 10
    min_comments: int = 11
    max_comments: int = 59
    eval_samples: int = 10


REPLAY_TRAIN_DEFAULTS = TrainSettings(iterations=20, batch_size=100, param_scale=(1.25e-4, 1.0, 1.0), repetitions=1)


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    lambdas: tuple[float, ...]
    repetitions: int = 200
    seed: int = 0
    out: str = "out"
    cost: str = "misinfo_top3"
    true_cost: str = "true_misinfo_top3"
    utility: str = "virality_top3"
    eval_rollouts: int = 200
    synthetic: SyntheticConfig = SyntheticConfig()
    train: TrainSettings = TrainSettings()
    optimal: OptimalSettings = OptimalSettings()
    replay: ReplaySettings = ReplaySettings()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        lambdas = tuple(float(v) for v in self.lambdas)
        if not lambdas:
            raise ConfigError("lambda grid is empty")
        if any(math.isnan(v) or v < 0 for v in lambdas):
            raise ConfigError("lambda values must be nonnegative")
        if self.mode in ("synth_optimal", "synth_compare") and any(v == 0 for v in lambdas):
            raise ConfigError("the optimal sampler needs lambda > 0 (use inf for the original model)")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        object.__setattr__(self, "lambdas", lambdas)
        try:
            cost_spec(self.cost)
            utility_spec(self.utility)
            if self.mode != "replay_train":
                cost_spec(self.true_cost)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None

    def digest(self) -> str:
        d = asdict(self)
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()


# -- config files ----------------------------------------------------------


def _parse_float(text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "infinity", "+inf"):
        return math.inf
    return float(t)


def parse_lambda_list(text: str) -> tuple[float, ...]:
    return tuple(_parse_float(v) for v in text.split(",") if v.strip())


def _coerce(value: str, current):
    if isinstance(current, bool):
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return _parse_float(value)
    if isinstance(current, tuple) or current is None:
        value = value.strip()
        return None if value in ("", "none") else tuple(_parse_float(v) for v in value.split(","))
    return value.strip()


def _update(obj, section, name):
    kw = {}
    known = {f.name: f for f in fields(obj)}
    for key, value in section.items():
        if key not in known:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        try:
            kw[key] = _coerce(value, getattr(obj, key))
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from None
    try:
        return replace(obj, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def load_config(path, **overrides) -> ExperimentConfig:
    """Read an INI experiment file.

    Sections: ``[experiment]`` (``mode``, ``lambda`` or ``inv_lambda``,
    ``repetitions``, ``seed``, ``out``, ``cost``, ``true_cost``,
    ``utility``, ``eval_rollouts``), ``[synthetic]``, ``[train]``,
    ``[optimal]`` and ``[replay]`` with the fields of the matching settings
    classes. ``overrides`` replace top-level fields after parsing.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep case: the synthetic horizon is ``T``
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    unknown = set(parser.sections()) - {"experiment", "synthetic", "train", "optimal", "replay"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    if not parser.has_section("experiment"):
        raise ConfigError("config needs an [experiment] section")
    exp = dict(parser["experiment"])
    mode = exp.pop("mode", overrides.pop("mode", None))
    if mode is None:
        raise ConfigError("[experiment] mode is required")
    try:
        if "lambda" in exp and "inv_lambda" in exp:
            raise ConfigError("give either lambda or inv_lambda, not both")
        if "lambda" in exp:
            lambdas = parse_lambda_list(exp.pop("lambda"))
        elif "inv_lambda" in exp:
            lambdas = tuple(math.inf if v == 0 else 1.0 / v for v in parse_lambda_list(exp.pop("inv_lambda")))
        else:
            lambdas = default_lambdas(mode)
    except ValueError as exc:
        raise ConfigError(f"bad lambda grid: {exc}") from None
    cfg = default_config(mode, lambdas)
    top = {}
    for key, value in exp.items():
        if key not in {"repetitions", "seed", "out", "cost", "true_cost", "utility", "eval_rollouts"}:
            raise ConfigError(f"[experiment] unknown key {key!r}")
        try:
            top[key] = _coerce(value, getattr(cfg, key))
        except ValueError as exc:
            raise ConfigError(f"[experiment] {key}: {exc}") from None
    sub = {}
    for name in ("synthetic", "train", "optimal", "replay"):
        if parser.has_section(name):
            sub[name] = _update(getattr(cfg, name), parser[name], name)
    try:
        cfg = replace(cfg, **top, **sub)
        return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def default_lambdas(mode: str) -> tuple[float, ...]:
    if mode == "replay_train":
        return tuple(float(v) for v in range(11))
    # 1/lambda in {0, 0.25, 0.5, 1, 1.5, 2}
    return (math.inf, 4.0, 2.0, 1.0, 2.0 / 3.0, 0.5)


def default_config(mode: str, lambdas=None, **kw) -> ExperimentConfig:
    lambdas = default_lambdas(mode) if lambdas is None else lambdas
    if mode == "replay_train":
        kw.setdefault("cost", "uncivility_top6")
        kw.setdefault("utility", "recency_top1")
        kw.setdefault("train", REPLAY_TRAIN_DEFAULTS)
    return ExperimentConfig(mode=mode, lambdas=tuple(lambdas), **kw)


# -- reports ---------------------------------------------------------------


@dataclass
class Table:
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])

    def where(self, **eq) -> "Table":
        idx = [self.columns.index(k) for k in eq]
        rows = [r for r in self.rows if all(_same(r[i], v) for i, v in zip(idx, eq.values()))]
        return Table(self.columns, rows)


def _same(a, b) -> bool:
    if isinstance(a, float) and isinstance(b, (int, float)):
        return a == b or (math.isnan(a) and math.isnan(b))
    return a == b


@dataclass(frozen=True)
class FigureSpec:
    table: str
    x: str
    y: str
    sem: str
    series: str | None = None
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""


@dataclass
class ExperimentReport:
    mode: str
    config: ExperimentConfig
    tables: dict[str, Table] = field(default_factory=dict)
    figures: dict[str, FigureSpec] = field(default_factory=dict)
    params: dict[str, PolicyParams] = field(default_factory=dict)
    traces: dict[str, TrainTrace] = field(default_factory=dict)
    per_rep: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def provenance(self) -> dict:
        return {
            "mode": self.mode,
            "config_sha256": self.config.digest(),
            "seed": str(self.config.seed),
            "version": __version__,
        }


def _mean_sem(values) -> tuple[float, float, int]:
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if v.size == 0:
        return math.nan, math.nan, 0
    sem = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), sem, int(v.size)


def _inv(lam: float) -> float:
    return 0.0 if math.isinf(lam) else (math.inf if lam == 0 else 1.0 / lam)


# -- synthetic: optimal sampler ---------------------------------------------


def _synthetic_metrics(batch, config: ExperimentConfig) -> dict:
    cs, ts, us = cost_spec(config.cost), cost_spec(config.true_cost), utility_spec(config.utility)
    K = cs.K
    viral, nonviral = config.synthetic.alpha_viral, config.synthetic.alpha_nonviral
    with np.errstate(invalid="ignore"):
        return {
            "cost": trajectory_cost(cs, batch),
            "true_cost": trajectory_cost(ts, batch),
            "utility": utility_curve(us, batch),
            "eta_viral": misinfo_fraction(batch, viral, K),
            "eta_nonviral": misinfo_fraction(batch, nonviral, K),
            "eta_true_viral": misinfo_fraction(batch, viral, K, true=True),
            "eta_true_nonviral": misinfo_fraction(batch, nonviral, K, true=True),
        }


def _nanmean(x, axis=0):
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore"):
        count = (~np.isnan(x)).sum(axis=axis)
        total = np.nansum(x, axis=axis)
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def _optimal_per_rep(config: ExperimentConfig, seeds: SeedSpec) -> dict[str, np.ndarray]:
    """Per-repetition, per-lambda means for the tilted sampler; arrays are (R, L[, ...])."""
    env = SyntheticEnv(config.synthetic, SYNTHETIC_ORIGINAL)
    cs = cost_spec(config.cost)
    opt = config.optimal
    R, L, T = config.repetitions, len(config.lambdas), config.synthetic.T
    keys = ("cost", "true_cost", "eta_viral", "eta_nonviral", "eta_true_viral", "eta_true_nonviral", "ess", "draws_per_ess", "log_normalizer")
    out = {k: np.empty((R, L)) for k in keys}
    out["utility"] = np.empty((R, L, T + 1))
    for r in range(R):
        kappa_batch = rollout(SYNTHETIC_ORIGINAL, env, T, seeds.generator("kappa", r), batch=opt.kappa)
        kappa_costs = trajectory_cost(cs, kappa_batch)
        raw = rollout(SYNTHETIC_ORIGINAL, env, T, seeds.generator("raw", r), batch=opt.samples)
        raw_costs = trajectory_cost(cs, raw)
        for i, lam in enumerate(config.lambdas):
            sample = tilt(raw, raw_costs, lam, seeds.generator("resample", r), raw_draws=opt.kappa + opt.samples, method=opt.method)
            m = _synthetic_metrics(sample.trajectories, config)
            for k in ("cost", "true_cost"):
                out[k][r, i] = m[k].mean()
            for k in ("eta_viral", "eta_nonviral", "eta_true_viral", "eta_true_nonviral"):
                out[k][r, i] = _nanmean(m[k])
            out["utility"][r, i] = m["utility"].mean(axis=0)
            out["ess"][r, i] = sample.ess
            out["draws_per_ess"][r, i] = sample.draws_per_effective_sample
            out["log_normalizer"][r, i] = log_normalizer_from_costs(kappa_costs, lam)
    return out


def _synthetic_tables(report: ExperimentReport, per_rep: dict, prefix: str = "", model: str | None = None):
    config = report.config
    lambdas = config.lambdas
    cost_rows, util_rows, group_rows = [], [], []
    for i, lam in enumerate(lambdas):
        c, c_sem, n = _mean_sem(per_rep["cost"][:, i])
        tc, tc_sem, _ = _mean_sem(per_rep["true_cost"][:, i])
        row = (lam, _inv(lam), n, c, c_sem, tc, tc_sem)
        if "kl" in per_rep:
            row += _mean_sem(per_rep["kl"][:, i])[:2]
        cost_rows.append(row)
        for t in range(per_rep["utility"].shape[-1]):
            u, u_sem, n = _mean_sem(per_rep["utility"][:, i, t])
            util_rows.append((lam, _inv(lam), t, n, u, u_sem))
        for group in ("viral", "nonviral"):
            e, e_sem, n = _mean_sem(per_rep[f"eta_{group}"][:, i])
            et, et_sem, _ = _mean_sem(per_rep[f"eta_true_{group}"][:, i])
            group_rows.append((lam, _inv(lam), group, n, e, e_sem, et, et_sem))
    cost_cols = ("lambda", "inv_lambda", "reps", "cost_mean", "cost_sem", "true_cost_mean", "true_cost_sem")
    if "kl" in per_rep:
        cost_cols += ("kl_mean", "kl_sem")
    report.tables[f"{prefix}cost_vs_lambda"] = Table(cost_cols, cost_rows)
    report.tables[f"{prefix}utility_vs_time"] = Table(("lambda", "inv_lambda", "t", "reps", "utility_mean", "utility_sem"), util_rows)
    report.tables[f"{prefix}misinfo_by_group"] = Table(
        ("lambda", "inv_lambda", "group", "reps", "eta_mean", "eta_sem", "eta_true_mean", "eta_true_sem"), group_rows
    )
    tag = f" ({model})" if model else ""
    report.figures[f"{prefix}utility_vs_time"] = FigureSpec(f"{prefix}utility_vs_time", "t", "utility_mean", "utility_sem", "inv_lambda", f"Immediate utility vs time{tag}", "t", "u(t)")
    report.figures[f"{prefix}cost_vs_lambda"] = FigureSpec(f"{prefix}cost_vs_lambda", "inv_lambda", "true_cost_mean", "true_cost_sem", None, f"True cost vs 1/lambda{tag}", "1/lambda", "c*(tau)")
    report.figures[f"{prefix}misinfo_by_group"] = FigureSpec(f"{prefix}misinfo_by_group", "inv_lambda", "eta_mean", "eta_sem", "group", f"Misinformation fraction in top K{tag}", "1/lambda", "eta")


def _per_rep_table(per_rep: dict, lambdas, keys) -> Table:
    rows = []
    R = per_rep[keys[0]].shape[0]
    for i, lam in enumerate(lambdas):
        for r in range(R):
            rows.append((lam, r) + tuple(float(per_rep[k][r, i]) for k in keys))
    return Table(("lambda", "rep") + tuple(keys), rows)


def _diagnostics_table(per_rep: dict, lambdas, samples: int, kappa: int) -> Table:
    rows = []
    for i, lam in enumerate(lambdas):
        ess = _mean_sem(per_rep["ess"][:, i])[0]
        c, c_sem, _ = _mean_sem(per_rep["cost"][:, i])
        rows.append((lam, ess, samples + kappa, c, c_sem))
    return Table(("lambda", "ess", "raw_draws", "resampled_cost_mean", "resampled_cost_sem"), rows)


def run_synth_optimal(config: ExperimentConfig) -> ExperimentReport:
    if config.mode != "synth_optimal":
        raise ConfigError(f"run_synth_optimal needs mode synth_optimal, got {config.mode}")
    seeds = SeedSpec(config.seed, ("synth_optimal",))
    per_rep = _optimal_per_rep(config, seeds)
    report = ExperimentReport(config.mode, config, per_rep=per_rep)
    _synthetic_tables(report, per_rep)
    report.tables["sampler_diagnostics"] = _diagnostics_table(per_rep, config.lambdas, config.optimal.samples, config.optimal.kappa)
    report.tables["per_repetition"] = _per_rep_table(per_rep, config.lambdas, ("cost", "true_cost", "eta_viral", "eta_nonviral", "ess"))
    return report


# -- synthetic: trained P-L ---------------------------------------------------


def _train_per_rep(config: ExperimentConfig, seeds: SeedSpec, report: ExperimentReport) -> dict[str, np.ndarray]:
    """Train ``train.repetitions`` models per lambda and evaluate each on paired rollouts.

    Arrays are indexed (evaluation rollout, lambda); rollouts of all trained
    models for one lambda are pooled.
    """
    env = SyntheticEnv(config.synthetic, SYNTHETIC_ORIGINAL)
    cs = cost_spec(config.cost)
    T, L = config.synthetic.T, len(config.lambdas)
    reps = config.train.repetitions
    n_eval = config.eval_rollouts
    keys = ("cost", "true_cost", "eta_viral", "eta_nonviral", "eta_true_viral", "eta_true_nonviral", "kl")
    out = {k: np.empty((reps * n_eval, L)) for k in keys}
    out["utility"] = np.empty((reps * n_eval, L, T + 1))
    for i, lam in enumerate(config.lambdas):
        for r in range(reps):
            if math.isinf(lam):
                params = SYNTHETIC_ORIGINAL
            else:
                params, trace = train(config.train.config(lam, _train_seed(config.seed, i, r)), SYNTHETIC_ORIGINAL, env, cs)
                report.params[f"lambda_{i:02d}_rep_{r:02d}"] = params
                report.traces[f"lambda_{i:02d}_rep_{r:02d}"] = trace
            batch = rollout(params, env, T, seeds.generator("eval", r), batch=n_eval)
            m = _synthetic_metrics(batch, config)
            sl = slice(r * n_eval, (r + 1) * n_eval)
            for k in keys[:-1]:
                out[k][sl, i] = m[k]
            out["utility"][sl, i] = m["utility"]
            out["kl"][sl, i] = trajectory_log_ratio(params, SYNTHETIC_ORIGINAL, batch)
    return out


def _train_seed(seed: int, lam_index: int, rep: int) -> int:
    ss = SeedSpec(seed, ("train", lam_index, rep)).seed_sequence()
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def run_synth_train(config: ExperimentConfig) -> ExperimentReport:
    if config.mode != "synth_train":
        raise ConfigError(f"run_synth_train needs mode synth_train, got {config.mode}")
    report = ExperimentReport(config.mode, config)
    per_rep = _train_per_rep(config, SeedSpec(config.seed, ("synth_train",)), report)
    report.per_rep = per_rep
    _synthetic_tables(report, per_rep)
    return report


def run_synth_compare(config: ExperimentConfig) -> ExperimentReport:
    if config.mode != "synth_compare":
        raise ConfigError(f"run_synth_compare needs mode synth_compare, got {config.mode}")
    report = ExperimentReport(config.mode, config)
    opt = _optimal_per_rep(config, SeedSpec(config.seed, ("synth_compare", "optimal")))
    pl = _train_per_rep(config, SeedSpec(config.seed, ("synth_compare", "pl")), report)
    report.per_rep = {**{f"optimal_{k}": v for k, v in opt.items()}, **{f"pl_{k}": v for k, v in pl.items()}}
    _synthetic_tables(report, opt, "optimal_", "optimal")
    _synthetic_tables(report, pl, "pl_", "P-L")
    rows = []
    for i, lam in enumerate(config.lambdas):
        oc, oc_sem, on = _mean_sem(opt["cost"][:, i])
        pc, pc_sem, pn = _mean_sem(pl["cost"][:, i])
        dpe, dpe_sem, _ = _mean_sem(opt["draws_per_ess"][:, i])
        rows.append((lam, _inv(lam), on, oc, oc_sem, pn, pc, pc_sem, pc - oc, math.hypot(oc_sem, pc_sem), dpe, dpe_sem))
    report.tables["compare_cost"] = Table(
        ("lambda", "inv_lambda", "optimal_reps", "optimal_cost_mean", "optimal_cost_sem", "pl_reps", "pl_cost_mean",
         "pl_cost_sem", "cost_gap", "cost_gap_sem", "draws_per_ess_mean", "draws_per_ess_sem"),
        rows,
    )
    report.tables["sampler_diagnostics"] = _diagnostics_table(opt, config.lambdas, config.optimal.samples, config.optimal.kappa)
    report.figures["compare_cost"] = FigureSpec("compare_cost", "inv_lambda", "cost_gap", "cost_gap_sem", None, "Cost gap (P-L minus optimal)", "1/lambda", "gap")
    report.figures["draws_per_ess"] = FigureSpec("compare_cost", "inv_lambda", "draws_per_ess_mean", "draws_per_ess_sem", None, "Raw draws per effective sample", "1/lambda", "draws / ESS")
    return report


# -- replay ------------------------------------------------------------------


def load_replay_dataset(config: ExperimentConfig):
    rs = config.replay
    if rs.dataset:
        return load_trajectories(rs.dataset, rs.min_comments, rs.max_comments)
    if rs.fixture_submissions > 0:
        fx = FixtureConfig(submissions=rs.fixture_submissions, min_comments=rs.min_comments, max_comments=rs.max_comments)
        return make_replay_fixture(fx, SeedSpec(config.seed, ("fixture",)).generator())
    raise ConfigError("replay_train needs [replay] dataset or fixture_submissions")


def run_replay_train(config: ExperimentConfig, dataset=None) -> ExperimentReport:
    if config.mode != "replay_train":
        raise ConfigError(f"run_replay_train needs mode replay_train, got {config.mode}")
    rs = config.replay
    dataset = load_replay_dataset(config) if dataset is None else dataset
    seeds = SeedSpec(config.seed, ("replay_train",))
    train_ds, test_ds = dataset.split(rs.test_fraction, seeds.generator("split"))
    if len(train_ds) == 0 or len(test_ds) == 0:
        raise ConfigError(f"empty split: {len(train_ds)} train / {len(test_ds)} test submissions")
    train_corpus = ReplayCorpus(train_ds, REPLAY_ORIGINAL, rs.window)
    test_corpus = ReplayCorpus(test_ds, REPLAY_ORIGINAL, rs.window)
    cs, us = cost_spec(config.cost), utility_spec(config.utility)

    lambdas = config.lambdas
    if not any(math.isinf(v) for v in lambdas):
        lambdas = (math.inf,) + lambdas  # the original model is always reported
    S, L = len(test_corpus.envs), len(lambdas)
    per = {k: np.empty((S, L)) for k in ("cost", "utility", "kl")}
    report = ExperimentReport(config.mode, config)
    for i, lam in enumerate(lambdas):
        if math.isinf(lam):
            params = REPLAY_ORIGINAL
        else:
            params, trace = train(config.train.config(lam, _train_seed(config.seed, i, 0)), REPLAY_ORIGINAL, train_corpus, cs)
            report.params[f"lambda_{i:02d}"] = params
            report.traces[f"lambda_{i:02d}"] = trace
        for s, env in enumerate(test_corpus.envs):
            batch = rollout(params, env, None, seeds.generator("eval", s), batch=rs.eval_samples)
            per["cost"][s, i] = trajectory_cost(cs, batch).mean()
            per["utility"][s, i] = mean_utility(us, batch).mean()
            per["kl"][s, i] = np.mean(trajectory_log_ratio(params, REPLAY_ORIGINAL, batch))
    report.per_rep = per
    base = next(i for i, v in enumerate(lambdas) if math.isinf(v))
    base_cost = per["cost"][:, base].mean()
    rows, kl_rows = [], []
    for i, lam in enumerate(lambdas):
        u, u_sem, n = _mean_sem(per["utility"][:, i])
        c, c_sem, _ = _mean_sem(per["cost"][:, i])
        k, k_sem, _ = _mean_sem(per["kl"][:, i])
        rows.append((lam, _inv(lam), n, u, u_sem, c, c_sem, k, k_sem, 1.0 - c / base_cost if base_cost else 0.0))
        kl_rows.append((lam, k, k_sem, u, u_sem))
    report.tables["replay_cost_utility"] = Table(
        ("lambda", "inv_lambda", "submissions", "utility_mean", "utility_sem", "cost_mean", "cost_sem", "kl_mean", "kl_sem", "cost_reduction"),
        rows,
    )
    report.tables["kl_vs_utility"] = Table(("lambda", "kl_mean", "kl_sem", "utility_mean", "utility_sem"), kl_rows)
    report.figures["replay_cost"] = FigureSpec("replay_cost_utility", "lambda", "cost_mean", "cost_sem", None, "Cost to welfare vs lambda", "lambda", "c(tau)")
    report.figures["replay_utility"] = FigureSpec("replay_cost_utility", "lambda", "utility_mean", "utility_sem", None, "Average immediate utility vs lambda", "lambda", "u(tau)")
    report.figures["kl_vs_utility"] = FigureSpec("kl_vs_utility", "kl_mean", "utility_mean", "utility_sem", None, "Utility vs KL", "KL", "u(tau)")
    return report


RUNNERS = {
    "synth_optimal": run_synth_optimal,
    "synth_train": run_synth_train,
    "synth_compare": run_synth_compare,
    "replay_train": run_replay_train,
}


def run(config: ExperimentConfig) -> ExperimentReport:
    return RUNNERS[config.mode](config)
