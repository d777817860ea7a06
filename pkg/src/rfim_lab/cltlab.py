"""Gaussian-limit experiment laboratory.

Bound-term calculators, the exact Kolmogorov-Smirnov statistic, and the
experiment driver that ties ensembles, mean-field solutions, and Glauber
chains into one reproducible report.

Conventions used throughout:

* q is a unit vector, lam its nominal eigenvalue, eps = A q - lam q;
* upsilon_n = sum q_i^2 psi_i''(c_i), the direction-weighted conditional
  variance at the bare field (always in (0, 1] since psi'' <= 1);
* the quenched prediction for T = sum q_i (sigma_i - u_i) is
  N(0, upsilon_n / (1 - lam * upsilon_n));
* the annealed prediction for the uncentered statistic adds the field
  fluctuation term E[psi'(c_1)^2] / (1 - lam*upsilon)^2 computed with the
  population upsilon = E[psi''(c_1)].

Every replicate chain owns a counter-based RNG stream derived from
(master_seed, stream tag, replicate index), so reports are reproducible
bit for bit at any parallelism level: the chain-major reduction order is
fixed and thread scheduling only changes wall time.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr

from .config import ExperimentConfig
from .coupling import (
    CouplingMatrix,
    EigenPair,
    NormReport,
    four_norm_lower,
    two_norm,
)
from .ensembles import (
    FieldSpec,
    default_lambda,
    draw_field,
    eigen_recipe,
    field_expectation,
    generate,
)
from .errors import CertificateError, ConvergenceError, DomainError
from .measures import as_toolkit
from .meanfield import solve_fixed_point
from .model import ModelInstance, make_model
from .sampler import (
    advance_steps,
    default_burn_in_sweeps,
    init_state,
    stream_rng,
)
from .sampler.diagnostics import cross_chain_ratio, integrated_autocorrelation_time

# RNG stream tags; fixed constants, part of the reproducibility contract.
STREAM_MATRIX = 1
STREAM_FIELD = 2
STREAM_RECIPE = 3
STREAM_CHAIN = 4
STREAM_PILOT = 5
STREAM_PROBE = 6

PILOT_CHAINS = 2
PILOT_SWEEPS = 256

CSV_COLUMNS = (
    "n", "ensemble", "theta", "seed", "lambda", "ups_n",
    "R1", "R2", "R3", "R4", "alpha_n", "eps_norm", "q_inf",
    "pred_var", "emp_var", "ks_q", "ks_a", "M", "burn_in",
)


# -- bound terms -----------------------------------------------------------------


def _variances_at(measures, c):
    c = np.asarray(c, dtype=np.float64)
    if isinstance(measures, ModelInstance):
        return measures.site_tilted_variance(c)
    if isinstance(measures, (list, tuple)):
        if len(measures) != c.size:
            raise ValueError("one measure per site required")
        return np.array(
            [as_toolkit(m).tilted_variance(ci) for m, ci in zip(measures, c)]
        )
    return np.asarray(as_toolkit(measures).tilted_variance(c))


def upsilon_n(q, c, measures) -> float:
    """Direction-weighted conditional variance sum q_i^2 psi_i''(c_i).

    ``measures`` may be a model, a single measure/toolkit shared by all
    sites, or a per-site sequence.
    """
    q = np.asarray(q, dtype=np.float64)
    return float(np.sum(q * q * _variances_at(measures, c)))


def error_terms(model: ModelInstance, pair: EigenPair, q=None, c=None) -> dict:
    """The four remainder terms and the field-interaction vector nu.

    nu_i = (A Psi'(c))_i;  with w = q * (Psi''(c) - upsilon_n):
    R1 = ||A w||^2, R2 = ||nu||^2, R3 = sum nu^4, R4 = |w . nu|.
    Everything is one or two matrix-vector products.
    """
    q = pair.q if q is None else np.asarray(q, dtype=np.float64)
    c = model.field_vector if c is None else np.asarray(c, dtype=np.float64)
    psi1 = model.site_tilted_mean(c)
    psi2 = model.site_tilted_variance(c)
    ups = float(np.sum(q * q * psi2))
    nu = model.coupling.matvec(psi1)
    w = q * (psi2 - ups)
    aw = model.coupling.matvec(w)
    return {
        "upsilon_n": ups,
        "nu": nu,
        "R1n": float(np.sum(aw * aw)),
        "R2n": float(np.sum(nu * nu)),
        "R3n": float(np.sum(nu ** 4)),
        "R4n": float(abs(np.dot(w, nu))),
    }


def berry_esseen_budget(
    R1n, R2n, R3n, alpha_n, n, q_inf, eps_norm, R4n=None, eps_dot_means=None
) -> dict:
    """Unnormalized Berry-Esseen rate proxies (absolute constants in the
    bounds are unknown, so only orders of magnitude are meaningful).

    ``err_budget`` applies to the statistic centered at the mean-field
    optimizer; ``err_budget_centered`` to the explicit centering
    Psi'(c)/(1 - lam*upsilon_n) and needs R4 and |eps . Psi'(c)| as well.
    """
    base = (
        math.sqrt(R1n)
        + math.sqrt(alpha_n * R2n)
        + math.sqrt(R3n)
        + math.sqrt(n) * alpha_n
        + q_inf
        + eps_norm
    )
    centered = None
    if R4n is not None and eps_dot_means is not None:
        centered = (
            math.sqrt(R2n) * (math.sqrt(R1n) + math.sqrt(alpha_n) + eps_norm)
            + math.sqrt(R1n)
            + math.sqrt(R3n)
            + math.sqrt(n) * alpha_n
            + q_inf
            + R4n
            + abs(eps_dot_means)
            + eps_norm
        )
    return {"err_budget": base, "err_budget_centered": centered}


def linear_statistic(sigma, q, centering=None) -> float:
    """sum q_i (sigma_i - centering_i); centering None means zero."""
    sigma = np.asarray(sigma, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if centering is None:
        return float(np.dot(q, sigma))
    return float(np.dot(q, sigma - np.asarray(centering, dtype=np.float64)))


def ks_distance(samples, variance) -> float:
    """Exact sup-distance between the empirical CDF and N(0, variance).

    The sup over the real line is attained at a jump of the empirical
    CDF, so it is the max over sample points of the gap against both the
    left and right limits.
    """
    if not (np.isfinite(variance) and variance > 0.0):
        raise DomainError(f"variance must be finite and positive, got {variance!r}")
    s = np.sort(np.asarray(samples, dtype=np.float64))
    m = s.size
    if m == 0:
        raise DomainError("need at least one sample")
    gauss = ndtr(s / math.sqrt(variance))
    steps = np.arange(1, m + 1) / m
    return float(max(np.max(steps - gauss), np.max(gauss - (steps - 1.0 / m))))


def ks_standard_error(m: int) -> float:
    """Scale of KS fluctuations for m independent samples from the target
    (the Kolmogorov law has standard deviation about 0.26/sqrt(m)); used
    for plot error bars, not for test decisions."""
    return 0.26 / math.sqrt(m)


def contraction_diagnostic(model: ModelInstance, solution, sigmas) -> dict:
    """MC estimates of E sum_i (m_i - s_i)^2 and the fourth-power sum,
    where m = A sigma are the sampled local fields and s = A u, paired
    with their theoretical scales n*alpha_n and n*alpha_n^2."""
    s = model.coupling.matvec(solution.u)
    sq, fourth = [], []
    for sigma in sigmas:
        d = model.coupling.matvec(np.asarray(sigma, dtype=np.float64)) - s
        sq.append(float(np.sum(d * d)))
        fourth.append(float(np.sum(d ** 4)))
    alpha = model.coupling.alpha_n()
    return _contraction_block(np.asarray(sq), np.asarray(fourth), model.n, alpha)


def _contraction_block(sq, fourth, n, alpha):
    m = sq.size
    return {
        "mean_sq": float(sq.mean()),
        "mean_sq_se": float(sq.std(ddof=1) / math.sqrt(m)) if m > 1 else None,
        "mean_fourth": float(fourth.mean()),
        "mean_fourth_se": float(fourth.std(ddof=1) / math.sqrt(m)) if m > 1 else None,
        "n_alpha": float(n * alpha),
        "n_alpha_sq": float(n * alpha * alpha),
        "chains": int(m),
    }


# -- chain execution -------------------------------------------------------------


def sample_statistics(
    model: Optional[ModelInstance],
    n_chains: int,
    burn_in_sweeps: int,
    seed: int,
    stats_fn: Callable,
    jobs: Optional[int] = None,
    samples_per_chain: int = 1,
    thinning: int = 1,
    model_factory: Optional[Callable] = None,
) -> np.ndarray:
    """Run independent chains and collect per-sample statistics.

    Each chain k consumes its own stream (seed, STREAM_CHAIN, k): init
    draw, burn-in, and recording are all on that stream. ``stats_fn(model,
    state)`` returns a tuple of floats per retained sample. When
    ``model_factory(k, rng)`` is given it builds the replicate's model
    from the same stream (annealed redraws). Output rows are in
    chain-major order, independent of ``jobs``.
    """

    def one(k):
        rng = stream_rng(seed, STREAM_CHAIN, k)
        mdl = model if model_factory is None else model_factory(k, rng)
        state = init_state(mdl, rng)
        advance_steps(state, burn_in_sweeps * mdl.n, rng)
        rows = []
        for s in range(samples_per_chain):
            if s:
                advance_steps(state, thinning * mdl.n, rng)
            rows.append(tuple(stats_fn(mdl, state)))
        return rows

    jobs = _resolve_jobs(jobs)
    if jobs <= 1 or n_chains <= 1:
        per_chain = [one(k) for k in range(n_chains)]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_chain = list(pool.map(one, range(n_chains)))
    flat = [row for rows in per_chain for row in rows]
    return np.asarray(flat, dtype=np.float64)


def _resolve_jobs(jobs):
    if jobs is None:
        return os.cpu_count() or 1
    return max(1, int(jobs))


def mixing_pilot(model: ModelInstance, probe, burn_in_sweeps: int, seed: int) -> dict:
    """Short multi-chain probe of the scalar series probe . sigma,
    recorded once per sweep after burn-in. Returns the integrated
    autocorrelation time (in sweeps) and the cross-chain spread ratio."""
    probe = np.asarray(probe, dtype=np.float64)
    n = model.n
    series = np.empty((PILOT_CHAINS, PILOT_SWEEPS))
    for k in range(PILOT_CHAINS):
        rng = stream_rng(seed, STREAM_PILOT, k)
        state = init_state(model, rng)
        advance_steps(state, burn_in_sweeps * n, rng)
        for t in range(PILOT_SWEEPS):
            advance_steps(state, n, rng)
            series[k, t] = float(np.dot(probe, state.sigma))
    taus = [integrated_autocorrelation_time(series[k]) for k in range(PILOT_CHAINS)]
    return {
        "tau_int_sweeps": float(np.mean(taus)),
        "cross_chain_ratio": _finite_or_none(cross_chain_ratio(series)),
        "pilot_chains": PILOT_CHAINS,
        "pilot_sweeps": PILOT_SWEEPS,
    }


def _finite_or_none(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _flat_deviation_norm(coupling: CouplingMatrix, theta: float, seed: int) -> float:
    """Power-iteration estimate of ||A - (theta/n) 11^T||, the distance
    of a regular-graph coupling from the complete-graph profile."""
    n = coupling.n
    shift = theta / n

    def op(x):
        return coupling.matvec(x) - shift * x.sum()

    rng = stream_rng(seed, STREAM_PROBE)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(60):
        y = op(x)
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            return 0.0
        est = nrm
        x = y / nrm
    return float(est)


# -- the report ------------------------------------------------------------------


@dataclass
class CltReport:
    mode: str
    n: int
    ensemble_kind: str
    theta: float
    master_seed: int
    lam: float
    upsilon_n: float
    alpha_n: float
    eps_norm: float
    q_inf: float
    nu: Optional[np.ndarray]
    R1n: Optional[float]
    R2n: Optional[float]
    R3n: Optional[float]
    R4n: Optional[float]
    err_budget: Optional[float]
    err_budget_centered: Optional[float]
    predicted_var: Optional[float]
    predicted_var_annealed: Optional[float]
    empirical: dict
    sample_size: int
    burn_in_sweeps: int
    pair: Optional[EigenPair] = None
    diagnostics: dict = dc_field(default_factory=dict)
    lln: Optional[dict] = None
    contraction: Optional[dict] = None
    norms: Optional[dict] = None
    annotations: list = dc_field(default_factory=list)
    config: dict = dc_field(default_factory=dict)

    def to_json_dict(self) -> dict:
        d = {
            "schema": "rfim-lab/report/1",
            "mode": self.mode,
            "n": self.n,
            "ensemble": self.ensemble_kind,
            "theta": self.theta,
            "master_seed": self.master_seed,
            "lambda": self.lam,
            "upsilon_n": self.upsilon_n,
            "alpha_n": self.alpha_n,
            "eps_norm": self.eps_norm,
            "q_inf": self.q_inf,
            "nu": self.nu,
            "R1n": self.R1n,
            "R2n": self.R2n,
            "R3n": self.R3n,
            "R4n": self.R4n,
            "err_budget": self.err_budget,
            "err_budget_centered": self.err_budget_centered,
            "predicted_var": self.predicted_var,
            "predicted_var_annealed": self.predicted_var_annealed,
            "empirical": self.empirical,
            "sample_size": self.sample_size,
            "burn_in_sweeps": self.burn_in_sweeps,
            "q": None if self.pair is None else self.pair.q,
            "diagnostics": self.diagnostics,
            "lln": self.lln,
            "contraction": self.contraction,
            "norms": self.norms,
            "annotations": list(self.annotations),
            "config": self.config,
        }
        return _jsonify(d)

    def csv_row(self) -> dict:
        emp = self.empirical or {}
        vals = {
            "n": self.n,
            "ensemble": self.ensemble_kind,
            "theta": self.theta,
            "seed": self.master_seed,
            "lambda": self.lam,
            "ups_n": self.upsilon_n,
            "R1": self.R1n,
            "R2": self.R2n,
            "R3": self.R3n,
            "R4": self.R4n,
            "alpha_n": self.alpha_n,
            "eps_norm": self.eps_norm,
            "q_inf": self.q_inf,
            "pred_var": self.predicted_var,
            "emp_var": emp.get("var"),
            "ks_q": emp.get("ks_quenched"),
            "ks_a": emp.get("ks_annealed"),
            "M": self.sample_size,
            "burn_in": self.burn_in_sweeps,
        }
        return {key: _csv_format(vals[key]) for key in CSV_COLUMNS}


def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _csv_format(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


# -- the experiment driver -------------------------------------------------------


def run_clt_experiment(
    config: ExperimentConfig,
    jobs: Optional[int] = None,
    force_heuristic: bool = False,
) -> CltReport:
    """Execute one experiment as described by the config; see the module
    docstring for the statistical conventions of each mode.

    Raises CertificateError when the spectral-norm certificate refutes
    the declared rho (suppressed by ``force_heuristic``, which downgrades
    it to an annotation); mixing-diagnostic concerns only annotate.
    """
    cfg = config
    seed = cfg.master_seed
    n = cfg.ensemble.n
    annotations: list = []

    coupling, extras = generate(cfg.ensemble, stream_rng(seed, STREAM_MATRIX))
    toolkit = as_toolkit(cfg.measure)
    alpha = coupling.alpha_n()
    inf_norm = coupling.inf_norm()

    two_est = None
    try:
        two_est = two_norm(coupling)
    except ConvergenceError as exc:
        two_est = exc.best
        annotations.append(
            "spectral norm estimate did not converge; continuing with best iterate"
        )
    if two_est is not None and two_est > cfg.rho + 1e-12 and cfg.mode != "norms":
        msg = (
            f"certified spectral norm lower bound {two_est:.6g} exceeds "
            f"declared rho {cfg.rho:.6g}"
        )
        if not force_heuristic:
            raise CertificateError(msg)
        annotations.append("forced past failed certificate: " + msg)

    recipe_kind = cfg.q_recipe.get("kind", "flat")
    lam = cfg.q_recipe.get("lam")
    if lam is None:
        lam = default_lambda(cfg.ensemble, recipe_kind, extras)
    lam = float(lam)
    pair = eigen_recipe(
        recipe_kind, coupling, lam, rng=stream_rng(seed, STREAM_RECIPE), extras=extras
    )
    if abs(lam) > cfg.rho + 1e-12:
        annotations.append(
            f"nominal eigenvalue {lam:.6g} exceeds rho {cfg.rho:.6g}; "
            "Gaussian predictions are outside the certified regime"
        )

    diagnostics: dict = {"two_norm_estimate": _finite_or_none(two_est) if two_est is not None else None}
    if cfg.ensemble.kind in ("d_regular", "random_regular") and recipe_kind == "contrast":
        d = int(cfg.ensemble.params.get("d", 0))
        dev = _flat_deviation_norm(coupling, cfg.ensemble.theta, seed)
        diagnostics["flat_deviation_norm"] = dev
        if cfg.ensemble.kind == "d_regular":
            annotations.append(
                "circulant regular graphs are not expanders; contrast limits "
                "are unreliable on this kind (measured deviation recorded)"
            )
        if d < 2.0 * math.sqrt(n):
            annotations.append(
                f"degree {d} is below 2*sqrt(n); contrast asymptotics need denser graphs"
            )

    c0 = draw_field(cfg.field, n, stream_rng(seed, STREAM_FIELD))
    model = make_model(coupling, c0, cfg.measure, rho=cfg.rho)

    terms = error_terms(model, pair)
    ups_emp = terms["upsilon_n"]
    eps_dot = float(np.dot(pair.eps, model.site_tilted_mean(c0)))
    budgets = berry_esseen_budget(
        terms["R1n"], terms["R2n"], terms["R3n"], alpha, n,
        pair.q_inf, pair.eps_norm, R4n=terms["R4n"], eps_dot_means=eps_dot,
    )

    ups_pop = field_expectation(cfg.field, toolkit.tilted_variance)
    mean_pop = field_expectation(cfg.field, toolkit.tilted_mean)
    msq_pop = field_expectation(
        cfg.field, lambda x: np.asarray(toolkit.tilted_mean(x)) ** 2
    )

    ups_for_prediction = ups_pop if cfg.mode == "annealed" else ups_emp
    predicted_var = _predict_var(
        ups_for_prediction, lam, cfg.upsilon_floor, annotations,
        "population upsilon" if cfg.mode == "annealed" else "upsilon_n",
    )
    predicted_var_annealed = None
    pop_base = _predict_var(ups_pop, lam, cfg.upsilon_floor, annotations, "population upsilon") \
        if cfg.mode != "annealed" else predicted_var
    if pop_base is not None:
        denom = 1.0 - lam * ups_pop
        predicted_var_annealed = pop_base + msq_pop / (denom * denom)

    burn = cfg.burn_in if cfg.burn_in is not None else default_burn_in_sweeps(n, cfg.rho)
    jobs = _resolve_jobs(jobs)

    empirical: dict = {
        "mean": None, "var": None, "var_se": None,
        "ks_quenched": None, "ks_annealed": None, "ks_se": None,
    }
    sample_size = 0
    lln_block = None
    contraction_block = None
    norms_block = None

    if cfg.mode == "norms":
        four_lo = four_norm_lower(coupling, two_norm_est=two_est)
        nrep = NormReport(
            two_norm=float(two_est) if two_est is not None else float("nan"),
            four_lower=four_lo, inf_norm=inf_norm, alpha_n=alpha,
        )
        norms_block = {
            "two_norm": _finite_or_none(nrep.two_norm),
            "four_norm_lower": nrep.four_lower,
            "four_norm_upper": inf_norm,
            "inf_norm": inf_norm,
            "alpha_n": alpha,
            "regime": nrep.regime_status(cfg.rho),
        }
        burn = 0
    else:
        if cfg.samples_per_chain > 1:
            annotations.append(
                "multi-sample thinning mode: within-chain samples are "
                "autocorrelated; KS treats them as independent"
            )
        if cfg.mode in ("quenched", "lln", "contraction"):
            solution = solve_fixed_point(model, rho=cfg.rho, check_certificate=False)
            u = solution.u
            if cfg.mode == "contraction":
                s_vec = coupling.matvec(u)

                def stats_fn(mdl, state):
                    d = state.local_fields() - s_vec
                    return (float(np.sum(d * d)), float(np.sum(d ** 4)))

            else:
                q_vec = pair.q

                def stats_fn(mdl, state):
                    return (float(np.dot(q_vec, state.sigma - u)),)

            arr = sample_statistics(
                model, cfg.replicates, burn, seed, stats_fn, jobs=jobs,
                samples_per_chain=cfg.samples_per_chain, thinning=cfg.thinning,
            )
            sample_size = arr.shape[0]
            if cfg.mode == "contraction":
                contraction_block = _contraction_block(arr[:, 0], arr[:, 1], n, alpha)
                diagnostics["mean_field_iterations"] = solution.iterations
            else:
                t = arr[:, 0]
                empirical.update(_empirical_block(t))
                lln_block = _lln_block(t, n, alpha)
                if cfg.mode == "quenched" and predicted_var is not None:
                    empirical["ks_quenched"] = ks_distance(t, predicted_var)
                    empirical["ks_se"] = ks_standard_error(t.size)
                diagnostics["mean_field_iterations"] = solution.iterations
                diagnostics["mean_field_residual"] = solution.residual_inf
        else:  # annealed
            if abs(mean_pop) > 1e-10:
                annotations.append(
                    f"field mean of tilted means is {mean_pop:.3g}, not 0; the "
                    "uncentered annealed limit assumes E[psi'(c_1)] = 0"
                )
            q_vec = pair.q
            centering = cfg.annealed_centering
            denom_pop = 1.0 - lam * ups_pop
            fld = cfg.field
            measure = cfg.measure
            rho = cfg.rho

            def model_factory(k, rng):
                c_k = draw_field(fld, n, rng)
                return make_model(coupling, c_k, measure, rho=rho)

            def stats_fn(mdl, state):
                t_raw = float(np.dot(q_vec, state.sigma))
                if centering == "population":
                    shift = float(
                        np.dot(q_vec, mdl.site_tilted_mean(mdl.field_vector))
                    ) / denom_pop
                    return (t_raw - shift,)
                return (t_raw,)

            arr = sample_statistics(
                None, cfg.replicates, burn, seed, stats_fn, jobs=jobs,
                samples_per_chain=cfg.samples_per_chain, thinning=cfg.thinning,
                model_factory=model_factory,
            )
            sample_size = arr.shape[0]
            t = arr[:, 0]
            empirical.update(_empirical_block(t))
            lln_block = _lln_block(t, n, alpha)
            ks_target = predicted_var if centering == "population" else predicted_var_annealed
            if ks_target is not None:
                empirical["ks_annealed"] = ks_distance(t, ks_target)
                empirical["ks_se"] = ks_standard_error(t.size)

        if cfg.mode in ("quenched", "annealed"):
            pilot = mixing_pilot(model, pair.q, burn, seed)
            diagnostics.update(pilot)
            tau = pilot["tau_int_sweeps"]
            if tau > max(5.0, 0.2 * burn):
                annotations.append(
                    f"integrated autocorrelation time {tau:.1f} sweeps is large "
                    f"relative to burn-in {burn}; samples may be underburned"
                )
            ratio = pilot["cross_chain_ratio"]
            if ratio is not None and ratio > 1.2:
                annotations.append(
                    f"cross-chain spread ratio {ratio:.3f} exceeds 1.2; "
                    "chains may not have equilibrated"
                )

    return CltReport(
        mode=cfg.mode,
        n=n,
        ensemble_kind=cfg.ensemble.kind,
        theta=cfg.ensemble.theta,
        master_seed=seed,
        lam=lam,
        upsilon_n=ups_for_prediction,
        alpha_n=alpha,
        eps_norm=pair.eps_norm,
        q_inf=pair.q_inf,
        nu=terms["nu"],
        R1n=terms["R1n"],
        R2n=terms["R2n"],
        R3n=terms["R3n"],
        R4n=terms["R4n"],
        err_budget=budgets["err_budget"],
        err_budget_centered=budgets["err_budget_centered"],
        predicted_var=predicted_var,
        predicted_var_annealed=predicted_var_annealed,
        empirical=empirical,
        sample_size=sample_size,
        burn_in_sweeps=burn,
        pair=pair,
        diagnostics=diagnostics,
        lln=lln_block,
        contraction=contraction_block,
        norms=norms_block,
        annotations=annotations,
        config=cfg.to_dict(),
    )


def _predict_var(ups, lam, floor, annotations, label):
    if ups is None:
        return None
    if ups < floor:
        annotations.append(
            f"{label} {ups:.6g} is below the floor {floor:.3g}; prediction refused"
        )
        return None
    denom = 1.0 - lam * ups
    if denom <= 0.0:
        annotations.append(
            f"{label}: 1 - lambda*upsilon = {denom:.3g} is not positive; "
            "prediction refused"
        )
        return None
    return float(ups / denom)


def _empirical_block(t: np.ndarray) -> dict:
    m = t.size
    var = float(t.var(ddof=1)) if m > 1 else None
    return {
        "mean": float(t.mean()),
        "var": var,
        "var_se": float(var * math.sqrt(2.0 / (m - 1))) if var is not None and m > 2 else None,
    }


def _lln_block(t: np.ndarray, n: int, alpha: float) -> dict:
    sq = t * t
    m = t.size
    return {
        "second_moment": float(sq.mean()),
        "second_moment_se": float(sq.std(ddof=1) / math.sqrt(m)) if m > 1 else None,
        "bound": float(max(1.0, n * alpha * alpha)),
    }


# -- persistence -----------------------------------------------------------------


def report_json_text(report: CltReport) -> str:
    import json

    return json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n"


def write_report(report: CltReport, path) -> None:
    text = report_json_text(report)
    with open(path, "w") as fh:
        fh.write(text)


def append_csv_row(path, row: dict) -> None:
    """Append one row to the aggregate CSV, writing the pinned header when
    the file is new or empty."""
    import csv

    need_header = True
    try:
        need_header = os.path.getsize(path) == 0
    except OSError:
        pass
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(CSV_COLUMNS), lineterminator="\n")
        if need_header:
            writer.writeheader()
        writer.writerow(row)
