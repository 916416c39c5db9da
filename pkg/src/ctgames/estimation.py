"""Maximum likelihood from continuous-time events and discretely sampled panels."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaincc

from .errors import ConvergenceError, DataError, EstimationError, InversionDomainError
from .jumpprocess import EventSample, PanelSample, expm_action, spawn_rng
from .statespace import state_label

log = logging.getLogger("ctgames.estimation")

#: Relative accuracy assumed for objective evaluations when choosing difference steps.
EPS_D = 1e-8
#: Gradient step is ``GRAD_STEP_SCALE * EPS_D^(1/3) * max(|z|, 1)``.  Objective noise is far
#: below EPS_D, so a smaller constant trades little roundoff for much less truncation error.
GRAD_STEP_SCALE = 0.1
#: Objective value returned when the likelihood cannot be evaluated.
PENALTY = 1e10


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass
class ParameterVector:
    """Named structural parameters with per-parameter transforms.

    ``transforms[n]`` is ``"log"`` for positive rates and ``"identity"``
    otherwise; the optimizer works with ``z = log(theta)`` for the former.
    ``bounds`` are box constraints in structural scale (``None`` for open).
    """

    names: tuple
    values: np.ndarray
    transforms: tuple
    bounds: tuple = None

    def __post_init__(self):
        self.names = tuple(self.names)
        self.values = np.asarray(self.values, dtype=float).ravel()
        self.transforms = tuple(self.transforms)
        if not (len(self.names) == len(self.values) == len(self.transforms)):
            raise ValueError("names, values and transforms must have equal length")
        for n, tr, v in zip(self.names, self.transforms, self.values):
            if tr not in ("log", "identity"):
                raise ValueError(f"unknown transform {tr!r} for {n}")
            if tr == "log" and not v > 0:
                raise ValueError(f"parameter {n} must be positive, got {v}")
        if self.bounds is None:
            self.bounds = tuple(default_bounds(tr) for tr in self.transforms)

    @classmethod
    def for_family(cls, family, values=None, names=None) -> "ParameterVector":
        names = tuple(names or family.param_names)
        d = dict(family.truth)
        if values is not None:
            d.update(values if isinstance(values, dict) else dict(zip(names, values)))
        return cls(names, [d[n] for n in names],
                   tuple("log" if n in family.rate_params else "identity" for n in names))

    def to_z(self, values=None) -> np.ndarray:
        v = self.values if values is None else np.asarray(values, dtype=float)
        return np.array([np.log(x) if tr == "log" else x for x, tr in zip(v, self.transforms)])

    def from_z(self, z) -> np.ndarray:
        return np.array([np.exp(x) if tr == "log" else x for x, tr in zip(z, self.transforms)])

    def jacobian(self, z=None) -> np.ndarray:
        """``d theta / d z`` (diagonal)."""
        z = self.to_z() if z is None else z
        return np.array([np.exp(x) if tr == "log" else 1.0 for x, tr in zip(z, self.transforms)])

    def z_bounds(self) -> list:
        out = []
        for (lo, hi), tr in zip(self.bounds, self.transforms):
            if tr == "log":
                out.append((None if lo is None else np.log(lo), None if hi is None else np.log(hi)))
            else:
                out.append((lo, hi))
        return out

    def replace(self, values) -> "ParameterVector":
        return ParameterVector(self.names, values, self.transforms, self.bounds)

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.values.tolist()))


def default_bounds(transform: str):
    """Box used when none is supplied: rates in ``[1e-4, 1e3]``, others in ``[-100, 100]``."""
    return (1e-4, 1e3) if transform == "log" else (-100.0, 100.0)


# ---------------------------------------------------------------------------
# Likelihoods
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class CTStatistics:
    """Sufficient statistics of continuous-time data.

    The likelihood of labelled competing risks is
    ``sum_e count_e ln rate_e - sum_k exposure_k total_rate_k``.
    """

    K: int
    keys: np.ndarray   # (n_unique, 4): state, mover, action, target
    counts: np.ndarray
    exposure: np.ndarray
    n_events: int
    n_markets: int


def ct_statistics(data: EventSample, K: int) -> CTStatistics:
    """Validate event data and reduce it to counts and state exposures.

    Raises
    ------
    DataError
        On out-of-range states, nonpositive holding times, events whose
        origin does not match the current state, or a horizon shorter
        than the last event.
    """
    exposure = np.zeros(K)
    rows = []
    for m, (k0, T, events) in enumerate(data.markets):
        k, t = int(k0), 0.0
        if not 0 <= k < K:
            raise DataError(f"market {m + 1}: initial state {state_label(k)} outside 1..{K}")
        for n, e in enumerate(events):
            if not e.tau > 0:
                raise DataError(f"market {m + 1}, event {n + 1}: holding time must be positive, got {e.tau}")
            if e.k != k:
                raise DataError(f"market {m + 1}, event {n + 1}: origin state {state_label(e.k)} "
                                f"does not match current state {state_label(k)}")
            if not 0 <= e.k_prime < K:
                raise DataError(f"market {m + 1}, event {n + 1}: state {state_label(e.k_prime)} outside 1..{K}")
            exposure[k] += e.tau
            t += e.tau
            rows.append((k, e.i, e.a, e.k_prime))
            k = e.k_prime
        rest = T - t
        if rest < -1e-9 * max(1.0, T):
            raise DataError(f"market {m + 1}: horizon {T} precedes the last event at {t}")
        exposure[k] += max(rest, 0.0)
    if rows:
        keys, counts = np.unique(np.asarray(rows, dtype=np.int64), axis=0, return_counts=True)
    else:
        keys, counts = np.zeros((0, 4), dtype=np.int64), np.zeros(0, dtype=np.int64)
    return CTStatistics(K, keys, counts.astype(float), exposure, len(rows), len(data.markets))


def _table_keys(table):
    state = np.repeat(np.arange(table.K), np.diff(table.indptr))
    return np.column_stack([state, table.mover, table.action, table.target])


def ct_loglik_from_table(table, stats: CTStatistics) -> float:
    """Competing-risks log-likelihood of the statistics under an event table."""
    if table.K != stats.K:
        raise DataError(f"data have K={stats.K}, model has K={table.K}")
    ll = -float(np.dot(stats.exposure, table.total_rates()))
    if len(stats.keys) == 0:
        return ll
    tk = _table_keys(table)
    order = np.lexsort(tk.T[::-1])
    tk_sorted = tk[order]
    # row-wise lookup of data keys among the table keys
    dt = np.dtype([("s", np.int64), ("i", np.int64), ("a", np.int64), ("t", np.int64)])
    a = np.ascontiguousarray(tk_sorted).view(dt).ravel()
    b = np.ascontiguousarray(stats.keys).view(dt).ravel()
    pos = np.searchsorted(a, b)
    pos_c = np.minimum(pos, len(a) - 1)
    found = (pos < len(a)) & (a[pos_c] == b)
    if not found.all():
        s, i, act, tgt = stats.keys[np.argmin(found)]
        log.warning("event (state %d, mover %d, action %d, to %d) has zero rate under the model",
                    s + 1, i, act, tgt + 1)
        return -np.inf
    rates = table.rate[order][pos]
    return ll + float(np.dot(stats.counts, np.log(rates)))


def _event_table(family, theta):
    sol = family.solve(theta)
    return sol, family.event_table(sol.game, sol.sigma)


def loglik_ct(family, theta, data, stats: CTStatistics | None = None) -> float:
    """Log-likelihood of continuous-time event data.

    Each event contributes its exponential holding-time density times the
    share of the observed (mover, action, target) among all events possible
    in that state; the final spell in each market contributes the survival
    probability up to the horizon.  Events that leave the state unchanged
    (e.g. replacing a new engine) are part of the competing risks.

    Parameters
    ----------
    family : ModelFamily
    theta : dict, sequence or ParameterVector
    data : EventSample
    stats : CTStatistics, optional
        Precomputed statistics (reused across evaluations).

    Returns
    -------
    float
        ``-inf`` (with a logged diagnostic) if an observed event has zero rate.
    """
    if isinstance(theta, ParameterVector):
        theta = theta.as_dict()
    if stats is None:
        stats = ct_statistics(data, family.n_states)
    _, table = _event_table(family, theta)
    return ct_loglik_from_table(table, stats)


@dataclass(eq=False)
class DTStatistics:
    K: int
    delta: float
    origins: np.ndarray
    counts: object  # csr rows restricted to origins
    n_transitions: int


def dt_statistics(data: PanelSample, K: int) -> DTStatistics:
    C = data.transition_counts(K)
    origins = np.flatnonzero(np.diff(C.indptr))
    return DTStatistics(K, data.delta, origins, C[origins], int(C.sum()))


def dt_loglik_from_Q(Q, stats: DTStatistics) -> float:
    if Q.K != stats.K:
        raise DataError(f"data have K={stats.K}, model has K={Q.K}")
    if len(stats.origins) == 0:
        return 0.0
    X = np.zeros((len(stats.origins), Q.K))
    X[np.arange(len(stats.origins)), stats.origins] = 1.0
    P = expm_action(Q, stats.delta, X)
    C = stats.counts.tocoo()
    p = P[C.row, C.col]
    if np.any(p <= 0):
        n = int(np.argmin(p))
        log.warning("transition %d -> %d has zero probability at delta=%g (possible misspecification)",
                    stats.origins[C.row[n]] + 1, C.col[n] + 1, stats.delta)
        return -np.inf
    return float(np.dot(C.data, np.log(p)))


def loglik_dt(family, theta, data: PanelSample, delta: float | None = None,
              stats: DTStatistics | None = None) -> float:
    """Log-likelihood ``sum ln P(k_{n-1}, k_n; delta)`` of a panel.

    Only the rows of ``exp(delta Q)`` for observed origin states are
    computed, in one uniformization pass shared by all markets.
    """
    if isinstance(theta, ParameterVector):
        theta = theta.as_dict()
    if delta is not None and abs(delta - data.delta) > 1e-12 * max(1.0, delta):
        raise ValueError(f"delta {delta} disagrees with the panel's sampling interval {data.delta}")
    if stats is None:
        stats = dt_statistics(data, family.n_states)
    sol = family.solve(theta)
    return dt_loglik_from_Q(sol.Q, stats)


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------

@dataclass
class StartRecord:
    start: dict
    converged: bool
    loglik: float
    estimate: dict = None
    iterations: int = 0
    evaluations: int = 0
    message: str = ""


@dataclass
class FitResult:
    """Outcome of a multi-start maximization.

    ``loglik`` is the maximum over converged starts; ``se`` and
    ``hessian`` are filled by :func:`standard_errors`.
    """

    theta_hat: ParameterVector
    loglik: float
    starts: list
    solver_stats: dict = field(default_factory=dict)
    se: np.ndarray = None
    hessian: np.ndarray = None
    se_flag: str = ""
    objective: str = "ct"
    n_obs: int = 0
    fixed: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return any(s.converged for s in self.starts)

    def to_dict(self) -> dict:
        out = {
            "objective": self.objective,
            "theta_hat": self.theta_hat.as_dict(),
            "fixed": dict(self.fixed),
            "loglik": self.loglik,
            "n_obs": self.n_obs,
            "se": None if self.se is None else dict(zip(self.theta_hat.names, map(float, self.se))),
            "se_flag": self.se_flag,
            "starts": [s.__dict__ for s in self.starts],
            "solver_stats": self.solver_stats,
        }
        return out


class Objective:
    """Negative mean log-likelihood in transformed coordinates.

    Parameters
    ----------
    family : ModelFamily
    kind : {"ct", "dt"}
    data : EventSample or PanelSample
    params : ParameterVector
        Free parameters; their values are not used.
    fixed : dict
        Parameters held fixed at structural values.
    """

    def __init__(self, family, kind: str, data, params: ParameterVector, fixed=None):
        self.family = family
        self.kind = kind
        self.params = params
        self.fixed = dict(fixed or {})
        if kind == "ct":
            if not isinstance(data, EventSample):
                raise DataError("continuous-time estimation needs event data")
            self.stats = ct_statistics(data, family.n_states)
            self.n_obs = max(self.stats.n_events, 1)
        elif kind == "dt":
            if not isinstance(data, PanelSample):
                raise DataError("discrete-time estimation needs panel data")
            self.stats = dt_statistics(data, family.n_states)
            self.n_obs = max(self.stats.n_transitions, 1)
        else:
            raise ValueError(f"unknown objective {kind!r}")
        if kind == "ct" and self.stats.n_events == 0 and self.stats.exposure.sum() == 0:
            raise DataError("data contain no events and no exposure")
        if kind == "dt" and self.stats.n_transitions == 0:
            raise DataError("panel contains no transitions")
        self.n_eval = 0
        self.n_fail = 0

    def theta(self, z) -> dict:
        th = dict(self.fixed)
        th.update(zip(self.params.names, self.params.from_z(z)))
        return th

    def loglik(self, z) -> float:
        self.n_eval += 1
        th = self.theta(z)
        try:
            if self.kind == "ct":
                _, table = _event_table(self.family, th)
                return ct_loglik_from_table(table, self.stats)
            sol = self.family.solve(th)
            return dt_loglik_from_Q(sol.Q, self.stats)
        except (ConvergenceError, InversionDomainError, ValueError, FloatingPointError) as exc:
            self.n_fail += 1
            log.debug("likelihood evaluation failed at %s: %s", th, exc)
            return -np.inf

    def __call__(self, z) -> float:
        ll = self.loglik(z)
        return -ll / self.n_obs if np.isfinite(ll) else PENALTY

    def gradient(self, z, f0=None) -> np.ndarray:
        """Central differences with step ``GRAD_STEP_SCALE EPS_D^(1/3) max(|z_i|, 1)``; one-sided at bounds."""
        z = np.asarray(z, dtype=float)
        g = np.zeros_like(z)
        bnds = self.params.z_bounds()
        for i in range(len(z)):
            h = GRAD_STEP_SCALE * EPS_D ** (1 / 3) * max(abs(z[i]), 1.0)
            lo, hi = bnds[i]
            up, dn = z.copy(), z.copy()
            up[i] += h
            dn[i] -= h
            if hi is not None and up[i] > hi:
                f0 = self(z) if f0 is None else f0
                g[i] = (f0 - self(dn)) / h
            elif lo is not None and dn[i] < lo:
                f0 = self(z) if f0 is None else f0
                g[i] = (self(up) - f0) / h
            else:
                g[i] = (self(up) - self(dn)) / (2 * h)
        return g

    def value_and_grad(self, z):
        f = self(z)
        return f, self.gradient(z, f)


def draw_starts(params: ParameterVector, n: int, rng, center=None, include_center=True) -> list:
    """Random starts: log-uniform on ``[0.1 c, 10 c]`` for rates, ``c +/- 5`` otherwise.

    With ``include_center`` the first start is the center itself.
    """
    c = params.values if center is None else np.asarray(center, dtype=float)
    starts = [c.copy()] if include_center and n > 0 else []
    while len(starts) < n:
        s = np.empty_like(c)
        for j, tr in enumerate(params.transforms):
            if tr == "log":
                s[j] = c[j] * np.exp(rng.uniform(np.log(0.1), np.log(10.0)))
            else:
                s[j] = c[j] + rng.uniform(-5.0, 5.0)
        lo_hi = params.bounds
        s = np.array([np.clip(v, lo if lo is not None else -np.inf, hi if hi is not None else np.inf)
                      for v, (lo, hi) in zip(s, lo_hi)])
        starts.append(s)
    return starts


def _family(family, options=None):
    if isinstance(family, str):
        from .models import make_family

        return make_family(family, **(options or {}))
    return family


def fit(objective: str, family, data, n_starts: int = 3, seed: int = 0, optimizer_cfg=None,
        center=None, fixed=None, free=None, include_center: bool = True, bounds=None) -> FitResult:
    """Maximize the likelihood from several starts with L-BFGS-B.

    Parameters
    ----------
    objective : {"ct", "dt"}
    family : ModelFamily or str
    data : EventSample or PanelSample
    n_starts : int
    seed : int
        Seeds the start draws.
    optimizer_cfg : dict, optional
        ``maxiter`` (default 200), ``ftol`` (1e-12), ``gtol`` (1e-7).
    center : dict, optional
        Center of the start distribution (default: the family's truth).
    fixed : dict, optional
        Parameters held at fixed structural values.
    free : sequence of str, optional
        Parameters to estimate (default: all not fixed).
    bounds : dict, optional
        ``name -> (lo, hi)`` in structural scale.

    Raises
    ------
    EstimationError
        If no start converges; per-start diagnostics are attached.
    """
    family = _family(family)
    fixed = dict(fixed or {})
    names = tuple(free) if free is not None else tuple(n for n in family.param_names if n not in fixed)
    unknown = (set(names) | set(fixed)) - set(family.param_names)
    if unknown:
        raise ValueError(f"unknown parameters: {sorted(unknown)}")
    if n_starts < 1:
        raise ValueError("need at least one start")
    base = dict(family.truth)
    base.update(center or {})
    params = ParameterVector(names, [base[n] for n in names],
                             tuple("log" if n in family.rate_params else "identity" for n in names))
    if bounds:
        params.bounds = tuple(tuple(bounds.get(n, b)) for n, b in zip(names, params.bounds))
    cfg = {"maxiter": 200, "ftol": 1e-12, "gtol": 1e-7}
    cfg.update(optimizer_cfg or {})
    obj = Objective(family, objective, data, params, fixed)
    rng = spawn_rng(seed, 0)
    starts = draw_starts(params, n_starts, rng, include_center=include_center)
    records = []
    best = None
    t0 = time.perf_counter()
    total_iter = 0
    for s in starts:
        z0 = params.to_z(s)
        try:
            res = minimize(obj.value_and_grad, z0, jac=True, method="L-BFGS-B", bounds=params.z_bounds(),
                           options={"maxiter": cfg["maxiter"], "ftol": cfg["ftol"], "gtol": cfg["gtol"]})
        except Exception as exc:  # keep other starts alive
            records.append(StartRecord(dict(zip(names, s.tolist())), False, -np.inf, message=str(exc)))
            continue
        ll = -res.fun * obj.n_obs if res.fun < PENALTY else -np.inf
        # "abnormal" line-search terminations at a flat optimum still count when the gradient is small
        ok = bool(np.isfinite(ll) and (res.success or np.max(np.abs(res.jac)) < 1e-4))
        est = params.from_z(res.x)
        total_iter += int(res.nit)
        records.append(StartRecord(dict(zip(names, s.tolist())), ok, float(ll), dict(zip(names, est.tolist())),
                                   int(res.nit), int(res.nfev), str(res.message)))
        if ok and (best is None or ll > best[0]):
            best = (ll, est)
    stats = {"iterations": total_iter, "evaluations": obj.n_eval, "failed_evaluations": obj.n_fail,
             "elapsed": time.perf_counter() - t0}
    if best is None:
        err = EstimationError(f"all {len(starts)} starts failed", records)
        raise err
    return FitResult(params.replace(best[1]), float(best[0]), records, stats, objective=objective,
                     n_obs=obj.n_obs, fixed=fixed)


def standard_errors(result: FitResult, objective: str, data, family, step: float | None = None) -> np.ndarray:
    """Standard errors from the inverse of the negative finite-difference Hessian.

    The Hessian is taken in transformed coordinates and mapped to the
    structural scale by the delta method.  Sets ``result.se``,
    ``result.hessian`` (structural scale) and ``result.se_flag``; a
    non-positive-definite or singular Hessian leaves NaN standard errors
    with the flag set.
    """
    family = _family(family)
    params = result.theta_hat
    obj = Objective(family, objective, data, params, result.fixed)
    z = params.to_z()
    p = len(z)
    h = np.array([(step if step is not None else EPS_D ** 0.25) * max(abs(v), 1.0) for v in z])

    def f(x):
        return obj.loglik(x)

    f0 = f(z)
    H = np.zeros((p, p))
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = h[i]
        H[i, i] = (f(z + ei) - 2 * f0 + f(z - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(p)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (f(z + ei + ej) - f(z + ei - ej) - f(z - ei + ej) + f(z - ei - ej)) / (4 * h[i] * h[j])
    D = params.jacobian(z)
    result.hessian = H / np.outer(D, D)
    se = np.full(p, np.nan)
    flag = ""
    if not np.all(np.isfinite(H)):
        flag = "hessian not finite"
    else:
        try:
            evals = np.linalg.eigvalsh(-H)
            if evals.min() <= 0:
                flag = "hessian not negative definite"
            else:
                cov_z = np.linalg.inv(-H)
                se = D * np.sqrt(np.diag(cov_z))
        except np.linalg.LinAlgError:
            flag = "hessian singular"
    result.se = se
    result.se_flag = flag
    return se


def chi2_sf(x: float, df: int) -> float:
    """Upper tail of the chi-square distribution via the regularized incomplete gamma."""
    if df < 1:
        raise ValueError("degrees of freedom must be at least 1")
    return float(gammaincc(df / 2.0, max(float(x), 0.0) / 2.0))


def lr_test(fit_restricted, fit_unrestricted, df: int, tol: float = 1e-6):
    """Likelihood-ratio statistic ``2 (LL_u - LL_r)`` and its chi-square p-value.

    Fits may be :class:`FitResult` objects or plain log-likelihood values.

    Raises
    ------
    EstimationError
        If the unrestricted log-likelihood is below the restricted one by
        more than ``tol`` (the specifications are not nested or a fit failed).
    """
    ll_r = fit_restricted.loglik if isinstance(fit_restricted, FitResult) else float(fit_restricted)
    ll_u = fit_unrestricted.loglik if isinstance(fit_unrestricted, FitResult) else float(fit_unrestricted)
    if ll_u < ll_r - tol:
        raise EstimationError(f"unrestricted log-likelihood {ll_u} is below restricted {ll_r}", [])
    stat = 2.0 * (ll_u - ll_r)
    return stat, chi2_sf(stat, df)


def lr_from_statistic(stat: float, df: int) -> float:
    """p-value of a reported LR statistic."""
    return chi2_sf(stat, df)


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

@dataclass
class MCDesign:
    """Monte Carlo design.

    ``schemes`` lists ``"ct"`` and/or sampling intervals (floats).
    ``T`` is the horizon per market; with ``max_events`` each market
    instead stops at that many events.
    """

    family: object
    truth: dict
    M: int
    T: float
    schemes: tuple = ("ct",)
    replications: int = 1
    root_seed: int = 0
    n_starts: int = 1
    max_events: int | None = None
    center: dict | None = None
    optimizer_cfg: dict | None = None
    workers: int = 1


@dataclass
class MCSummary:
    """Per-scheme mean and standard deviation of estimates across replications."""

    schemes: list
    names: list
    estimates: dict          # scheme -> array (reps, p), NaN rows for failures
    failures: dict           # scheme -> count
    rows: list               # (scheme, parameter, mean, sd, n_ok)
    elapsed: float = 0.0
    data_sizes: list = field(default_factory=list)

    def table(self) -> dict:
        return {(r[0], r[1]): (r[2], r[3]) for r in self.rows}

    def to_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scheme", "parameter", "mean", "sd", "n_ok"])
            for r in self.rows:
                w.writerow([r[0], r[1], f"{r[2]:.6g}", f"{r[3]:.6g}", r[4]])


def scheme_label(s) -> str:
    return "ct" if s == "ct" else f"dt{float(s):g}"


def _mc_replication(args):
    design, rep = args
    family = _family(design.family)
    truth = family.theta_dict(design.truth)
    sol = family.solve(truth, use_cache=False)
    data = family.simulate(truth, design.M, design.T, design.root_seed, key=(rep,),
                           max_events=design.max_events, solution=sol)
    out = {}
    for si, scheme in enumerate(design.schemes):
        try:
            if scheme == "ct":
                if data.n_events == 0:
                    raise DataError("replication produced no events")
                res = fit("ct", family, data, n_starts=design.n_starts, seed=design.root_seed * 7919 + rep * 31 + si,
                          optimizer_cfg=design.optimizer_cfg, center=design.center or truth)
            else:
                panel = data.to_panel(float(scheme))
                res = fit("dt", family, panel, n_starts=design.n_starts, seed=design.root_seed * 7919 + rep * 31 + si,
                          optimizer_cfg=design.optimizer_cfg, center=design.center or truth)
            out[scheme_label(scheme)] = (res.theta_hat.values, res.loglik)
        except (EstimationError, DataError) as exc:
            log.warning("replication %d, scheme %s failed: %s", rep + 1, scheme_label(scheme), exc)
            out[scheme_label(scheme)] = None
    return rep, out, data.n_events


def mc_run(design: MCDesign) -> MCSummary:
    """Simulate, estimate and summarize a Monte Carlo design.

    Replication ``r`` draws its data from seed stream ``(root_seed, r)``
    so results do not depend on the number of workers.  Failed
    replications are counted, not fatal.  For the renewal family the
    derived ratio ``mu/beta`` is summarized as well.
    """
    if design.replications < 1:
        raise ValueError("replications must be at least 1")
    if design.M < 1:
        raise ValueError("need at least one market")
    if not design.T > 0 and design.max_events is None:
        raise DataError("horizon T must be positive (a degenerate run has no events or transitions)")
    family = _family(design.family)
    names = list(family.param_names)
    labels = [scheme_label(s) for s in design.schemes]
    t0 = time.perf_counter()
    tasks = [(design, r) for r in range(design.replications)]
    if design.workers > 1:
        with ProcessPoolExecutor(design.workers) as ex:
            results = list(ex.map(_mc_replication, tasks))
    else:
        results = [_mc_replication(t) for t in tasks]
    results.sort(key=lambda x: x[0])
    est = {lab: np.full((design.replications, len(names)), np.nan) for lab in labels}
    sizes = []
    for rep, out, n_ev in results:
        sizes.append(n_ev)
        for lab in labels:
            if out.get(lab) is not None:
                est[lab][rep] = out[lab][0]
    failures = {lab: int(np.isnan(est[lab][:, 0]).sum()) for lab in labels}
    rows = []
    derived = getattr(family, "derived_names", ())
    for lab in labels:
        ok = ~np.isnan(est[lab][:, 0])
        X = est[lab][ok]
        cols = [X[:, j] for j in range(len(names))]
        cnames = list(names)
        for dname in derived:
            cols.append(np.array([family.derived(dict(zip(names, x)))[dname] for x in X]))
            cnames.append(dname)
        for n, c in zip(cnames, cols):
            mean = float(np.mean(c)) if len(c) else np.nan
            sd = float(np.std(c, ddof=1)) if len(c) > 1 else np.nan
            rows.append((lab, n, mean, sd, int(ok.sum())))
    return MCSummary(labels, names, est, failures, rows, time.perf_counter() - t0, sizes)
