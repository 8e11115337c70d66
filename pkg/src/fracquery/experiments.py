"""Named experiments, configuration loading and CSV output.

A configuration is a TOML file::

    experiment = "segment-stats"
    seed = 7
    trials = 1000
    oracle = "0110"
    output_path = "segment_stats.csv"

    [params]        # compression overrides: m, k, k_prime, q, eps, eps_prime
    [driving]       # optional driving Hamiltonian table (see oracle.load_driving)
    [options]       # experiment-specific knobs, listed by ``print-schema``

Unknown keys anywhere are errors.  Every experiment returns per-trial rows,
summary rows and a list of checks; the run passes when every check passes.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .cleanup import flag_zero_distance, literal_preparation, prepare_classwise, prepare_compressed_init
from .compressed import (
    choose_params,
    compute_error_metrics,
    measurement_ensembles,
    run_full_compressed,
    run_segment_compressed,
    segment_ensembles,
)
from .encoding import (
    CompressionParams,
    binomial_tail,
    decode_c,
    encode_b,
    encode_c,
    exact_q,
    exponential_state,
    ideal_succinct_vector,
    kron_all,
    legal_sector,
    overlap_phi,
    pinned_beta,
    prepare_phi,
    smallest_q,
    split_slots,
)
from .oracle import (
    DrivingSpec,
    OracleString,
    constant_random_driving,
    diagonal_driving,
    driving_from_mapping,
    exact_total_evolution,
)
from .resources import COST_MODEL
from .statevector import PureState, RegisterLayout, fidelity_pure, make_rng, trace_distance
from .uncompressed import (
    SegmentParams,
    correction_walk,
    run_full_uncompressed,
    run_segment_uncompressed,
    success_operator,
    uncompressed_attempt_fn,
)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

CSV_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Malformed or unsupported configuration."""


def fit_slope(xs, ys) -> tuple[float, float, float]:
    """Least-squares line through ``(log x, log y)``; returns ``(slope, intercept, r^2)``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 3 or xs.size != ys.size:
        raise ValueError("need at least 3 matching points")
    if np.any(np.diff(xs) <= 0):
        raise ValueError("xs must be strictly increasing")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("log-log fit needs positive values")
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class ExperimentResult:
    name: str
    rows: list = field(default_factory=list)
    summary: list = field(default_factory=list)
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str, passed, detail: str) -> None:
        self.checks.append(Check(name, bool(passed), detail))


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    trials: int | None = None
    oracle: str | None = None
    output_path: str | None = None
    params: dict = field(default_factory=dict)
    driving: dict | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: unknown name {self.experiment!r}; choose from {sorted(EXPERIMENTS)}")
        if self.trials is not None and int(self.trials) < 1:
            raise ConfigError("trials: must be >= 1")
        bad = set(self.params) - PARAM_KEYS
        if bad:
            raise ConfigError(f"params: unknown keys {sorted(bad)}")
        spec = EXPERIMENTS[self.experiment]
        bad = set(self.options) - set(spec.options)
        if bad:
            raise ConfigError(f"options: unknown keys {sorted(bad)} for {self.experiment}")

    def option(self, key: str):
        return self.options.get(key, EXPERIMENTS[self.experiment].options[key])

    def trial_count(self) -> int:
        return int(self.trials if self.trials is not None else EXPERIMENTS[self.experiment].trials)

    def trial_seeds(self, n: int | None = None, stream: int = 0) -> list:
        n = self.trial_count() if n is None else n
        return np.random.SeedSequence([int(self.seed), stream]).spawn(n)

    def oracle_string(self, default: str) -> OracleString:
        return OracleString(self.oracle or default)

    def driving_spec(self, default: Callable[[], DrivingSpec]) -> DrivingSpec:
        if self.driving is None:
            return default()
        try:
            return driving_from_mapping(self.driving)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"driving: {exc}") from exc


TOP_KEYS = {"experiment", "seed", "trials", "oracle", "output_path", "params", "driving", "options"}
PARAM_KEYS = {"m", "k", "k_prime", "q", "eps", "eps_prime"}


def config_from_mapping(data: dict) -> ExperimentConfig:
    bad = set(data) - TOP_KEYS
    if bad:
        raise ConfigError(f"unknown top-level keys {sorted(bad)}")
    if "experiment" not in data:
        raise ConfigError("experiment: missing")
    for key in ("params", "options"):
        if key in data and not isinstance(data[key], dict):
            raise ConfigError(f"{key}: must be a table")
    return ExperimentConfig(
        experiment=str(data["experiment"]),
        seed=int(data.get("seed", 0)),
        trials=data.get("trials"),
        oracle=data.get("oracle"),
        output_path=data.get("output_path"),
        params=dict(data.get("params", {})),
        driving=data.get("driving"),
        options=dict(data.get("options", {})),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_mapping(data)


def _sigma(values) -> float:
    values = np.asarray(values, dtype=float)
    return float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0


def _target_layout(dim: int) -> RegisterLayout:
    return RegisterLayout.of(("target", dim, "target"))


def _uniform_target(dim: int) -> PureState:
    return PureState.from_amps(_target_layout(dim), np.ones(dim) / math.sqrt(dim))


def _compression_params(cfg: ExperimentConfig, m: int, eps: float, k_prime_eps: float | None = None) -> CompressionParams:
    """Defaults: ``k`` and ``k_prime`` from exact tails at ``eps``, ``q`` at its bound."""
    p = dict(cfg.params)
    m = int(p.get("m", m))
    eps = float(p.get("eps", eps))
    eps_prime = float(p.get("eps_prime", k_prime_eps if k_prime_eps is not None else eps))
    beta = pinned_beta(m)
    alpha = math.sqrt(1 - beta * beta)
    k = int(p.get("k", _smallest_tail_k(m, beta**2, eps)))
    k_prime = int(p.get("k_prime", _smallest_tail_k(m, 2 * alpha**2 * beta**2, eps_prime)))
    return CompressionParams.build(m, k, k_prime, eps, eps_prime, q=p.get("q"))


def _smallest_tail_k(m: int, p: float, eps: float) -> int:
    k = 1
    while binomial_tail(m, p, k) > eps:
        k += 1
    return k


# -- experiments ------------------------------------------------------------------------------


def exp_encoding(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult("encoding")
    started = time.perf_counter()
    failures_total = 0
    for m in cfg.option("ms"):
        for k in range(1, int(cfg.option("max_k")) + 1):
            failures = checked = split_failures = 0
            seen = set()
            for w in range(0, min(k, m) + 1):
                for pos in itertools.combinations(range(m), w):
                    bits = tuple(1 if i in pos else 0 for i in range(m))
                    enc = encode_c(bits, k)
                    checked += 1
                    failures += decode_c(enc, m) != bits or enc in seen
                    seen.add(enc)
                    if m >= 2:
                        left, right = split_slots(enc, m, k)
                        split_failures += (decode_c(left, m // 2) + decode_c(right, m // 2)) != bits
            failures_total += failures + split_failures
            res.rows.append({"m": m, "k": k, "strings": checked, "round_trip_failures": failures,
                             "split_failures": split_failures})
    elapsed = time.perf_counter() - started
    res.summary.append({"strings": sum(r["strings"] for r in res.rows), "failures": failures_total})
    res.check("round-trip and split failures", failures_total == 0, f"failures={failures_total}")
    res.check("runtime < 1 s", elapsed < 1.0, f"elapsed={elapsed:.3f}s")
    return res


def exp_b_encoding(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult("b-encoding")
    started = time.perf_counter()
    m, q, k = int(cfg.option("m")), int(cfg.option("q")), int(cfg.option("k"))
    beta = pinned_beta(m)
    alpha = math.sqrt(1 - beta * beta)
    phi = exponential_state(q, alpha, beta)
    product = kron_all([phi] * (k + 1))
    vectors = []
    worst = 0.0
    for w in range(0, k + 1):
        for pos in itertools.combinations(range(m), w):
            bits = tuple(1 if i in pos else 0 for i in range(m))
            v = encode_b(bits, q, k, alpha, beta)
            vectors.append(v)
            inner = float(v @ product)
            expected = alpha ** (m - w) * beta**w
            worst = max(worst, abs(inner - expected))
            res.rows.append({"x": "".join(map(str, bits)), "weight": w, "inner": inner,
                             "expected": expected, "abs_error": abs(inner - expected)})
    mat = np.array(vectors)
    gram_err = float(np.max(np.abs(mat @ mat.T - np.eye(len(vectors)))))
    elapsed = time.perf_counter() - started
    res.summary.append({"strings": len(vectors), "max_inner_error": worst, "gram_error": gram_err})
    res.check("inner products within 1e-12", worst <= 1e-12, f"max error {worst:.3e}")
    res.check("Gram matrix identity within 1e-10", gram_err <= 1e-10, f"max error {gram_err:.3e}")
    res.check("runtime < 10 s", elapsed < 10.0, f"elapsed={elapsed:.3f}s")
    return res


def exp_overlap(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult("overlap")
    started = time.perf_counter()
    beta_m = int(cfg.option("beta_m"))
    beta = pinned_beta(beta_m)
    alpha = math.sqrt(1 - beta * beta)
    worst = 0.0
    points = 0
    for a in range(1, int(cfg.option("max_log_q")) + 1):
        q = 2**a
        full = prepare_phi(q, alpha, beta).amps.real
        for b in range(0, a + 1):
            t = q - 2**b
            short = prepare_phi(2**b, alpha, beta).amps.real
            direct = float(short @ full[: short.size])
            closed = overlap_phi(q, t, alpha, beta)
            worst = max(worst, abs(direct - closed))
            points += 1
            res.rows.append({"q": q, "t": t, "closed_form": closed, "direct": direct})
    bound_ok = True
    for m in cfg.option("bound_ms"):
        b_m = pinned_beta(m)
        a_m = math.sqrt(1 - b_m * b_m)
        for eps in cfg.option("bound_eps"):
            q = smallest_q(m, b_m, eps)
            ov = min(overlap_phi(q, t, a_m, b_m) for t in range(m + 1))
            bound_ok &= ov >= 1 - eps
            res.summary.append({"m": m, "eps": eps, "q": q, "worst_overlap": ov})
    elapsed = time.perf_counter() - started
    res.check("closed form matches direct within 1e-12", worst <= 1e-12 and points >= 50,
              f"points={points} max error {worst:.3e}")
    res.check("q at its bound gives overlap >= 1 - eps", bound_ok, "all (m, eps) pairs")
    res.check("runtime < 1 s", elapsed < 1.0, f"elapsed={elapsed:.3f}s")
    return res


def exp_cleanup(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult("cleanup")
    started = time.perf_counter()
    m = int(cfg.option("m"))
    beta = pinned_beta(m)
    alpha = math.sqrt(1 - beta * beta)
    ok = True
    for eps in cfg.option("eps"):
        k = _smallest_tail_k(m, beta**2, eps)
        params = CompressionParams.build(m, k, k, eps)
        prep, tally = prepare_compressed_init(params)
        dist = flag_zero_distance(prep, ideal_succinct_vector(m, k, alpha, beta))
        ok &= dist <= 10 * eps
        res.rows.append({"eps": eps, "k": k, "q": params.q, "distance": dist, "ratio": dist / eps,
                         "flag_one_probability": prep.flag_one_probability(), "modeled_gates": tally.modeled_gates})
    # literal register-level route against the class-wise one at a small q
    q_small = int(cfg.option("literal_q"))
    worst = 0.0
    for k in range(1, int(cfg.option("literal_max_k")) + 1):
        lit = literal_preparation(m, k, q_small, alpha, beta)
        worst = max(worst, float(np.max(np.abs(lit - prepare_classwise(m, k, q_small, alpha, beta).dense()))))
    res.summary.append({"literal_q": q_small, "literal_vs_classwise": worst})
    elapsed = time.perf_counter() - started
    res.check("flag-zero distance <= 10 eps", ok, "; ".join(f"eps={r['eps']:g}: {r['distance']:.3e}" for r in res.rows))
    res.check("literal and class-wise routes agree within 1e-10", worst <= 1e-10, f"max diff {worst:.3e}")
    res.check("runtime < 30 s", elapsed < 30.0, f"elapsed={elapsed:.3f}s")
    return res


def exp_equivalence(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult("equivalence")
    started = time.perf_counter()
    m, dim = int(cfg.option("m")), int(cfg.option("target_dim"))
    k = int(cfg.params.get("k", m))
    beta = pinned_beta(m)
    alpha = math.sqrt(1 - beta * beta)
    q = int(cfg.params.get("q", exact_q(m, beta)))
    worst_p = worst_d = 0.0
    for i, seed in enumerate(cfg.trial_seeds()):
        rng = make_rng(seed)
        joint = rng.normal(size=(2**m, dim)) + 1j * rng.normal(size=(2**m, dim))
        joint /= np.linalg.norm(joint)
        ens_u, ens_c = measurement_ensembles(joint, m, k, q, alpha, beta)
        if set(ens_u.densities) != set(ens_c.densities):
            raise AssertionError("outcome sets differ")
        gap = dist = 0.0
        for label, rho_u in ens_u.densities.items():
            pu, pc = ens_u.probability(label), ens_c.probability(label)
            gap = max(gap, abs(pu - pc))
            dist = max(dist, trace_distance(rho_u / pu, ens_c.densities[label] / pc))
        worst_p, worst_d = max(worst_p, gap), max(worst_d, dist)
        res.rows.append({"trial": i, "outcomes": len(ens_u.densities), "max_probability_gap": gap,
                         "max_trace_distance": dist, "dropped_mass": ens_c.dropped})
    elapsed = time.perf_counter() - started
    res.summary.append({"m": m, "k": k, "q": q, "trials": len(res.rows), "max_probability_gap": worst_p,
                        "max_trace_distance": worst_d})
    res.check(">= 20 random joint states", len(res.rows) >= 20, f"trials={len(res.rows)}")
    res.check("probability gap <= 1e-9", worst_p <= 1e-9, f"max {worst_p:.3e}")
    res.check("target trace distance <= 1e-9", worst_d <= 1e-9, f"max {worst_d:.3e}")
    res.check("runtime < 5 min", elapsed < 300, f"elapsed={elapsed:.1f}s")
    return res


def _default_random_driving(dim: int, seed: int = 11) -> Callable[[], DrivingSpec]:
    return lambda: constant_random_driving(dim, 1.0, seed=seed, total_time=4.0)


def exp_segment_stats(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult("segment-stats")
    started = time.perf_counter()
    oracle = cfg.oracle_string("0110")
    driving = cfg.driving_spec(_default_random_driving(oracle.L))
    target = _uniform_target(oracle.L)
    trials = cfg.trial_count()

    m_u = int(cfg.option("m_uncompressed"))
    seg = SegmentParams.pinned_for(m_u)
    uc = [run_segment_uncompressed(target, seg, driving, oracle, s) for s in cfg.trial_seeds(trials, 0)]
    cparams = _compression_params(cfg, int(cfg.option("m_compressed")), float(cfg.option("eps")))
    cc = [run_segment_compressed(target, cparams, driving, oracle, s) for s in cfg.trial_seeds(trials, 1)]

    for label, runs, m, beta in (("uncompressed", uc, m_u, seg.beta), ("compressed", cc, cparams.m, cparams.beta)):
        succ = np.array([r.success for r in runs], dtype=float)
        ones = np.array([len(r.ones) for r in runs], dtype=float)
        for i, r in enumerate(runs):
            res.rows.append({"protocol": label, "trial": i, "success": int(r.success), "ones": len(r.ones),
                             "queries": r.resources.queries})
        p_hat = succ.mean()
        sigma_p = math.sqrt(p_hat * (1 - p_hat) / succ.size)
        sigma_ones = _sigma(ones)
        bound_ones = 4 * beta**2 * m
        res.summary.append({"protocol": label, "m": m, "success_rate": p_hat, "sigma": sigma_p,
                            "mean_ones": ones.mean(), "ones_bound": bound_ones})
        res.check(f"{label} success >= 0.75 - 3 sigma", p_hat >= 0.75 - 3 * sigma_p,
                  f"rate={p_hat:.4f} sigma={sigma_p:.4f} (m={m})")
        res.check(f"{label} mean ones <= 4 beta^2 m + 3 sigma", ones.mean() <= bound_ones + 3 * sigma_ones,
                  f"mean={ones.mean():.4f} bound={bound_ones:.4f} sigma={sigma_ones:.4f}")
    elapsed = time.perf_counter() - started
    res.check("runtime < 5 min", elapsed < 300, f"elapsed={elapsed:.1f}s")
    return res


CONSTANT_C = 4


def exp_error_scaling(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult("error-scaling")
    started = time.perf_counter()
    oracle = cfg.oracle_string("01")
    driving = cfg.driving_spec(_default_random_driving(oracle.L))
    m = int(cfg.params.get("m", cfg.option("m")))
    k_prime = int(cfg.params.get("k_prime", cfg.option("k_prime")))
    k = int(cfg.params.get("k", m))
    beta = pinned_beta(m)
    q = int(cfg.params.get("q", exact_q(m, beta)))
    params = CompressionParams.build(m, k, k_prime, 1e-3, q=q)
    target = np.ones(oracle.L) / math.sqrt(oracle.L)
    eps_list = sorted(float(e) for e in cfg.option("eps"))
    d_avs = []
    for eps in eps_list:
        ens_u, ens_c, _, _, raw_c = segment_ensembles(target, params, driving, oracle, leak=eps)
        met = compute_error_metrics(ens_u, ens_c)
        d_avs.append(met.d_av)
        res.rows.append({"eps": eps, "d_av": met.d_av, "delta_p": met.delta_p, "d_bar": met.d_bar,
                         "ratio": met.d_av / eps, "dropped_mass": raw_c.dropped})
    slope, intercept, r2 = fit_slope(eps_list, d_avs)
    limit = 2 * CONSTANT_C * k_prime * math.log2(m)
    ratios = [r["ratio"] for r in res.rows]
    res.summary.append({"slope": slope, "intercept": intercept, "r2": r2, "max_ratio": max(ratios), "ratio_limit": limit})
    res.check("D_av monotone in eps", all(a < b for a, b in zip(d_avs, d_avs[1:])), f"d_av={d_avs}")
    res.check("log-log slope in [0.8, 1.2]", 0.8 <= slope <= 1.2, f"slope={slope:.4f}")
    res.check(f"D_av/eps <= 2 c k' log2 m (c={CONSTANT_C})", max(ratios) <= limit,
              f"max ratio {max(ratios):.4f} limit {limit:g}")
    for r in res.rows:
        ok = r["delta_p"] <= r["d_av"] + 1e-10 and r["d_bar"] <= r["d_av"] + 1e-10
        res.check(f"delta_p, d_bar <= d_av at eps={r['eps']:g}", ok, f"{r['delta_p']:.3e}, {r['d_bar']:.3e} vs {r['d_av']:.3e}")
    elapsed = time.perf_counter() - started
    res.check("runtime < 10 min", elapsed < 600, f"elapsed={elapsed:.1f}s")
    return res


def exp_end_to_end(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult("end-to-end")
    started = time.perf_counter()
    oracle = cfg.oracle_string("0110")
    total_time = float(cfg.option("total_time"))
    eps_tot = float(cfg.option("eps_tot"))
    values = [float(v) for v in cfg.option("diagonal")]
    driving = cfg.driving_spec(lambda: diagonal_driving(values, total_time=total_time))
    target = _uniform_target(oracle.L)
    exact = exact_total_evolution(target, driving, oracle, total_time)
    choice = choose_params(total_time, driving.norm_bound, eps_tot)
    fids, kept, max_q = [], 0, 0
    for i, seed in enumerate(cfg.trial_seeds()):
        run = run_full_compressed(target, driving, oracle, total_time, eps_tot, seed, params=choice.params)
        clean = run.ok and run.budget_events == 0
        f = fidelity_pure(run.state.amps, exact.amps)
        max_q = max(max_q, run.max_queries_per_attempt)
        res.rows.append({"series": "compressed", "trial": i, "fidelity": f, "post_selected": int(clean),
                         "queries": run.resources.queries, "attempts": sum(run.segment_attempts),
                         "budget_events": run.budget_events})
        if clean:
            fids.append(f)
            kept += 1
    mean_f = float(np.mean(fids)) if fids else 0.0
    p = choice.params
    res.summary.append({"series": "compressed", "m": p.m, "k": p.k, "k_prime": p.k_prime, "q": p.q,
                        "kept": kept, "mean_fidelity": mean_f, "min_fidelity": min(fids) if fids else 0.0})
    res.check("post-selected mean fidelity >= 1 - eps_tot", mean_f >= 1 - eps_tot,
              f"mean={mean_f:.6f} over {kept} kept trials")
    res.check("queries per attempt <= k'", max_q <= p.k_prime, f"max={max_q} k'={p.k_prime}")

    # interleaving error of the uncompressed runner with a non-commuting drive
    drive_nc = constant_random_driving(oracle.L, 1.0, seed=int(cfg.option("slope_drive_seed")), total_time=total_time)
    exact_nc = exact_total_evolution(target, drive_nc, oracle, total_time)
    ms = [int(m) for m in cfg.option("slope_ms")]
    errs = []
    for m in ms:
        vals = []
        for j, seed in enumerate(cfg.trial_seeds(int(cfg.option("slope_trials")), stream=m)):
            run = run_full_uncompressed(target, drive_nc, oracle, total_time, eps_tot, seed, m=m)
            f = fidelity_pure(run.state.amps, exact_nc.amps)
            vals.append(math.sqrt(max(0.0, 1 - f)))
        errs.append(float(np.mean(vals)))
        res.rows.append({"series": "interleaving", "m": m, "error": errs[-1]})
    slope, intercept, r2 = fit_slope(ms, errs)
    res.summary.append({"series": "interleaving", "slope": slope, "intercept": intercept, "r2": r2})
    res.check("interleaving slope in [-1.3, -0.7]", -1.3 <= slope <= -0.7, f"slope={slope:.4f}")
    elapsed = time.perf_counter() - started
    res.check("runtime < 10 min", elapsed < 600, f"elapsed={elapsed:.1f}s")
    return res


def exp_resource_scaling(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult("resource-scaling")
    started = time.perf_counter()
    oracle = cfg.oracle_string("0110")
    driving = cfg.driving_spec(_default_random_driving(oracle.L))
    target = _uniform_target(oracle.L)
    cparams = _compression_params(cfg, int(cfg.option("m_attempts")), float(cfg.option("eps")))
    violations = 0
    for i, seed in enumerate(cfg.trial_seeds()):
        r = run_segment_compressed(target, cparams, driving, oracle, seed)
        violations += r.resources.queries > cparams.k_prime
    res.summary.append({"series": "query-cap", "attempts": cfg.trial_count(), "k_prime": cparams.k_prime,
                        "violations": violations})
    res.check("queries per attempt <= k' (zero violations)", violations == 0, f"violations={violations}")

    k = int(cfg.option("k"))
    eps = float(cfg.option("eps"))
    ms = [int(m) for m in cfg.option("ms")]
    gates, qubits = [], []
    for m in ms:
        beta = pinned_beta(m)
        params = CompressionParams.build(m, k, k, eps, q=smallest_q(m, beta, eps))
        _, tally = prepare_compressed_init(params)
        gates.append(tally.modeled_gates)
        qubits.append(tally.registers_high_water)
        res.rows.append({"m": m, "log2_m": math.log2(m), "q": params.q, "modeled_gates": tally.modeled_gates,
                         "qubits": tally.registers_high_water})
    slope, intercept, r2 = fit_slope([math.log2(m) for m in ms], gates)
    res.summary.append({"series": "preparation", "slope_vs_log_m": slope, "intercept": intercept, "r2": r2})
    res.check("preparation gate slope vs log m <= 1.3", slope <= 1.3, f"slope={slope:.4f}")
    elapsed = time.perf_counter() - started
    res.check("runtime < 1 min", elapsed < 60, f"elapsed={elapsed:.1f}s")
    return res


def forced_beta(m: int, success: float) -> float:
    """``beta`` with ``(alpha^4 + beta^4)^m = success``."""
    prod = (1 - success ** (1.0 / m)) / 2  # alpha^2 beta^2
    return math.sqrt((1 - math.sqrt(1 - 4 * prod)) / 2)


def exp_correction_walk(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult("correction-walk")
    started = time.perf_counter()
    oracle = cfg.oracle_string("0110")
    driving = cfg.driving_spec(_default_random_driving(oracle.L))
    target = _uniform_target(oracle.L)
    m = int(cfg.option("m"))
    p_success = 1 - float(cfg.option("failure_probability"))
    seg = SegmentParams.with_beta(m, forced_beta(m, p_success))
    attempt = uncompressed_attempt_fn(seg, driving, oracle)
    ideal = success_operator(seg, driving, oracle) @ target.amps
    totals, worst_f = [], 1.0
    for i, seed in enumerate(cfg.trial_seeds()):
        rng = make_rng(seed)
        first = attempt(target, 1, None, rng)
        state, extra, _, ok = correction_walk(first.post_state, attempt, first, seg, rng)
        total = 1 + extra
        f = fidelity_pure(state.amps, ideal)
        worst_f = min(worst_f, f)
        totals.append(total)
        res.rows.append({"trial": i, "attempts": total, "completed": int(ok), "fidelity": f})
    mean = float(np.mean(totals))
    sigma = _sigma(totals)
    expected = 1.0 / (2 * p_success - 1)
    res.summary.append({"m": m, "success_probability": seg.success_probability, "mean_attempts": mean,
                        "sigma": sigma, "hitting_time": expected})
    res.check("mean attempts <= 2 + 3 sigma", mean <= 2 + 3 * sigma, f"mean={mean:.4f} sigma={sigma:.4f}")
    res.check("corrected state fidelity >= 1 - 1e-9", worst_f >= 1 - 1e-9, f"min={worst_f:.12f}")
    elapsed = time.perf_counter() - started
    res.check("runtime < 1 min", elapsed < 60, f"elapsed={elapsed:.1f}s")
    return res


@dataclass(frozen=True)
class ExperimentSpec:
    fn: Callable[[ExperimentConfig], ExperimentResult]
    trials: int
    options: dict
    criterion: str


EXPERIMENTS: dict[str, ExperimentSpec] = {
    "encoding": ExperimentSpec(exp_encoding, 1, {"ms": [4, 8, 16], "max_k": 3},
                               "exhaustive encode/decode round trip"),
    "b-encoding": ExperimentSpec(exp_b_encoding, 1, {"m": 8, "q": 16, "k": 3},
                               "B-encoding inner products and orthonormality"),
    "overlap": ExperimentSpec(exp_overlap, 1, {"beta_m": 8, "max_log_q": 10, "bound_ms": [4, 8, 16],
                                               "bound_eps": [1e-2, 1e-3, 1e-4]},
                              "exponential-state overlap closed form"),
    "cleanup": ExperimentSpec(exp_cleanup, 1, {"m": 8, "eps": [1e-3, 1e-4], "literal_q": 16, "literal_max_k": 3},
                              "flag-zero output of the compressed preparation"),
    "equivalence": ExperimentSpec(exp_equivalence, 20, {"m": 8, "target_dim": 2},
                                  "error-free compressed vs reference measurement"),
    "segment-stats": ExperimentSpec(exp_segment_stats, 1000, {"m_uncompressed": 16, "m_compressed": 8, "eps": 1e-3},
                                    "segment success rate and located ones"),
    "error-scaling": ExperimentSpec(exp_error_scaling, 1, {"m": 8, "k_prime": 3, "eps": [1e-4, 1e-3, 1e-2]},
                                    "D_av against injected imprecision"),
    "end-to-end": ExperimentSpec(exp_end_to_end, 200, {"total_time": 1.0, "eps_tot": 0.1,
                                                       "diagonal": [0.3, -0.5, 0.9, 0.1],
                                                       "slope_ms": [4, 8, 16, 32], "slope_trials": 3,
                                                       "slope_drive_seed": 5},
                                 "end-to-end fidelity and interleaving-error slope"),
    "resource-scaling": ExperimentSpec(exp_resource_scaling, 200, {"m_attempts": 8, "eps": 1e-3, "k": 2,
                                                                   "ms": [8, 16, 32, 64]},
                                       "query cap and preparation gate slope"),
    "correction-walk": ExperimentSpec(exp_correction_walk, 1000, {"m": 4, "failure_probability": 0.25},
                                      "undo/redo walk attempts at forced failure 1/4"),
}


def schema_text() -> str:
    lines = ["# top-level keys: " + ", ".join(sorted(TOP_KEYS)),
             "# [params] keys: " + ", ".join(sorted(PARAM_KEYS)),
             "# [driving] keys: dim, entries, pieces, norm_bound, total_time, gate_cost, time_grid, name",
             ""]
    for name, spec in EXPERIMENTS.items():
        lines.append(f"[{name}]  # {spec.criterion}; default trials {spec.trials}")
        for key, val in spec.options.items():
            lines.append(f"  options.{key} = {val!r}")
    return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return EXPERIMENTS[cfg.experiment].fn(cfg)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def render_csv(cfg: ExperimentConfig, result: ExperimentResult, include_timing: bool = False) -> str:
    """CSV text: ``#`` metadata, one header, trial rows then summary rows.

    Runtime checks are left out of the metadata unless ``include_timing`` so
    that repeated runs produce identical bytes."""
    buf = io.StringIO()
    buf.write(f"# fracquery {__version__} csv-schema {CSV_SCHEMA_VERSION}\n")
    buf.write(f"# experiment {result.name} seed {cfg.seed} trials {cfg.trial_count()}\n")
    buf.write("# cost-model " + " ".join(f"{k}={v}" for k, v in COST_MODEL.items()) + "\n")
    for c in result.checks:
        if c.name.startswith("runtime") and not include_timing:
            continue
        buf.write(f"# check {'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}\n")
    columns = ["row"]
    for r in result.rows + result.summary:
        for key in r:
            if key not in columns:
                columns.append(key)
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for kind, rows in (("trial", result.rows), ("summary", result.summary)):
        for r in rows:
            writer.writerow({"row": kind, **{k: _fmt(v) for k, v in r.items()}})
    return buf.getvalue()
