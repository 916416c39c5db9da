"""Oligopoly quality ladder with entry, exit, investment and logit demand.

Firms occupy quality rungs ``1..omega_bar``; rung ``omega_bar + 1`` marks an
inactive slot.  Values are computed from one firm's perspective on the
anonymous space of :class:`~ctgames.statespace.AnonymousLadderSpace`; the
observable jump process lives on market configurations (counts of the ``N``
slots over all rungs).

Observable events are labelled by the rung of the mover: ``1..omega_bar``
for incumbents, ``omega_bar + 1`` for the potential entrant and 0 for the
industry-wide depreciation shock.  Incumbent actions are 0 continue,
1 invest, 2 exit; entrant actions are 0 stay out, 1 enter.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..equilibrium import TERMINAL, RoleProblem, best_response_ccp
from ..errors import PricingError
from ..jumpprocess import EventTable
from ..statespace import DEFAULT_MAX_STATES, build_ladder_space
from .base import ModelFamily

PARAM_NAMES = ("lambda_L", "lambda_H", "gamma", "kappa", "eta", "mu")
TRUTH = {"lambda_L": 1.0, "lambda_H": 1.2, "gamma": 0.4, "kappa": 0.8, "eta": 4.0, "mu": 0.9}
#: Market sizes by number of firms.
MARKET_SIZE = {2: 0.40, 4: 0.60, 6: 0.75, 8: 0.85, 10: 0.95, 12: 1.05, 14: 1.15, 16: 1.20,
               18: 1.25, 20: 1.30, 22: 1.35, 24: 1.40, 26: 1.45, 28: 1.50, 30: 1.55}


@dataclass(frozen=True)
class LadderConstants:
    """Calibrated constants that are not estimated."""

    omega_bar: int = 7
    omega_star: float = 5.0
    omega_entry: int = 4
    omega_high: int = 4
    market_size: float = 0.40
    cost: float = 5.0
    scrap: float = 0.0
    rho: float = 0.05


def quality_index(omega, omega_star):
    """Mean utility of quality ``omega`` with a concave kink above ``omega_star``."""
    omega = np.asarray(omega, dtype=float)
    with np.errstate(invalid="ignore"):
        above = omega - np.log(2.0 - np.exp(omega_star - omega))
    return np.where(omega <= omega_star, omega, above)


def bertrand_prices(g, active, cost, tol=1e-12, max_iter=100, start=None):
    """Solve the logit Bertrand first-order conditions for many markets at once.

    Parameters
    ----------
    g : ndarray (M, n)
        Mean utilities of each firm slot.
    active : ndarray of bool (M, n)
        Active slots; inactive slots get price ``cost`` and share 0.
    cost : float
        Common marginal cost.
    start : ndarray (M, n), optional
        Initial prices (default ``cost + 1``).

    Returns
    -------
    prices, shares, residual : ndarrays
        ``residual`` is the per-market sup-norm of the first-order conditions.
    """
    g = np.asarray(g, dtype=float)
    active = np.asarray(active, dtype=bool)
    M, n = g.shape
    p = np.where(active, cost + 1.0, cost) if start is None else np.where(active, start, cost)
    eye = np.eye(n)[None, :, :]

    def shares(p):
        v = np.where(active, g - p, -np.inf)
        top = np.maximum(v.max(axis=1, keepdims=True), 0.0)
        e = np.where(active, np.exp(v - top), 0.0)
        return e / (np.exp(-top) + e.sum(axis=1, keepdims=True))

    for it in range(max_iter):
        s = shares(p)
        markup = p - cost
        F = np.where(active, -markup * (1 - s) + 1.0, 0.0)
        res = np.abs(F).max(axis=1) if n else np.zeros(M)
        if np.all(res < tol):
            return p, s, res
        Jm = markup[:, :, None] * s[:, :, None] * s[:, None, :]
        diag = -(1 - s) - markup * s * (1 - s)
        Jm = Jm * (1 - eye) + eye * diag[:, :, None]
        mask = active[:, :, None] & active[:, None, :]
        Jm = np.where(mask, Jm, eye)
        step = np.linalg.solve(Jm, -F[:, :, None])[:, :, 0]
        damp = 0.8 if it < 5 else 1.0
        p = p + damp * np.where(active, step, 0.0)
    s = shares(p)
    F = np.where(active, -(p - cost) * (1 - s) + 1.0, 0.0)
    res = np.abs(F).max(axis=1)
    if np.any(res >= tol):
        raise PricingError(f"pricing Newton iteration did not converge (residual {res.max():.3e})",
                           residual=float(res.max()))
    return p, s, res


def ladder_profits(N: int, omega_bar: int = 7, omega_star: float = 5.0, M_bar: float = 0.4,
                   c: float = 0.0, return_residual: bool = False):
    """Per-rung Bertrand-Nash profits for every market configuration.

    Returns
    -------
    profits : ndarray (n_market_configs, omega_bar)
        ``profits[m, w - 1]`` is the flow profit of a firm on rung ``w`` in
        market configuration ``m`` (zero when no firm is on that rung).
    residual : ndarray, optional
        FOC sup-norm per configuration.
    """
    if not M_bar > 0:
        raise ValueError(f"market size must be positive, got {M_bar}")
    if not c >= 0:
        raise ValueError(f"marginal cost must be nonnegative, got {c}")
    space = build_ladder_space(N, omega_bar, max_states=max(DEFAULT_MAX_STATES, 1))
    cfg = space.market_configs
    # expand each configuration into N slots of rungs 1..omega_bar+1
    rungs = np.repeat(np.arange(1, omega_bar + 2)[None, :], len(cfg), axis=0)
    slots = np.stack([np.repeat(rungs[m], cfg[m]) for m in range(len(cfg))])
    active = slots <= omega_bar
    g = np.where(active, quality_index(np.minimum(slots, omega_bar), omega_star), 0.0)
    p, s, res = bertrand_prices(g, active, c)
    pi_slot = M_bar * s * (p - c)
    profits = np.zeros((len(cfg), omega_bar))
    for w in range(1, omega_bar + 1):
        on = slots == w
        has = on.any(axis=1)
        first = np.argmax(on, axis=1)
        profits[has, w - 1] = pi_slot[has, first[has]]
    return (profits, res) if return_residual else profits


class LadderGame:
    """Symmetric quality-ladder game at one parameter point.

    Roles are the representative incumbent (values and CCPs over the
    firm-perspective states) and the potential entrant, whose entry
    probability ``sigma_ent[1, k]`` is stored at the incumbent state ``k``
    the entrant would occupy after entering.
    """

    def __init__(self, theta: dict, N: int, const: LadderConstants, tables=None):
        self.theta = dict(theta)
        for n in ("lambda_L", "lambda_H", "gamma"):
            if not self.theta[n] > 0:
                raise ValueError(f"rate parameter {n} must be positive, got {self.theta[n]}")
        self.N = N
        self.const = const
        self.tables = tables if tables is not None else LadderTables(N, const)
        t = self.tables
        lam_rung = np.where(np.arange(1, const.omega_bar + 1) >= const.omega_high,
                            self.theta["lambda_H"], self.theta["lambda_L"])
        self.lam_rung = lam_rung
        self.lam_own = lam_rung[t.own - 1]
        self.u = t.profit_own - self.theta["mu"]
        K = t.K
        self.psi = np.zeros((3, K))
        self.psi[1] = -self.theta["kappa"]
        self.psi[2] = const.scrap
        self.target = np.vstack([np.arange(K), t.own_invest, np.full(K, TERMINAL)])
        self.terminal = np.zeros((3, K))
        self.n_roles = 2

    @property
    def K(self) -> int:
        return self.tables.K

    def initial_values(self):
        return [np.zeros(self.K)]

    def entry_ccp(self, V):
        p = 1.0 / (1.0 + np.exp(-(V - self.theta["eta"])))
        return np.vstack([1 - p, p])

    def best_response(self, V):
        V = V[0]
        W = V[self.target.clip(min=0)]
        W[2] = self.terminal[2]
        return [best_response_ccp(self.psi, W), self.entry_ccp(V)]

    def passive(self, sigma) -> sp.csr_matrix:
        t = self.tables
        s_inc, s_ent = sigma
        vals = [np.full(t.K, self.theta["gamma"])]
        for r in range(t.omega_bar):
            src = t.rival_src[r]
            rate = t.rival_count[r] * self.lam_rung[r]
            for j in range(3):
                vals.append(rate * s_inc[j, src])
        p_enter = s_ent[1, t.entrant_src]
        lamL = self.theta["lambda_L"] * t.has_slot
        vals += [lamL * (1 - p_enter), lamL * p_enter]
        data = np.bincount(t.slot, weights=np.concatenate(vals), minlength=t.nnz)
        return sp.csr_matrix((data, t.indices, t.indptr), shape=(t.K, t.K))

    def role_problem(self, sigma) -> RoleProblem:
        return RoleProblem(u=self.u, rho=self.const.rho, lam=self.lam_own, psi=self.psi,
                           target=self.target, terminal=self.terminal, passive=self.passive(sigma))

    def bellman(self, sigma, V):
        return [self.role_problem(sigma).bellman(V[0])]

    def value_linear(self, sigma, x0=None):
        return [self.role_problem(sigma).value_linear(sigma[0], None if x0 is None else x0[0])]

    def hazards(self, sigma):
        return (self.lam_own[None, :] * sigma[0])[None]

    def event_table(self, sigma, observe_continuation=True) -> EventTable:
        """Labelled events on market configurations."""
        t = self.tables
        s_inc, s_ent = sigma
        M = t.n_market
        ms = np.arange(M)
        st, rt, tg, mv, ac = [ms], [np.full(M, self.theta["gamma"])], [t.mkt_dep], [np.zeros(M, int)], [np.zeros(M, int)]
        first = 0 if observe_continuation else 1
        for r in range(t.omega_bar):
            on = t.mkt_count[r] > 0
            src = t.mkt_src[r][on]
            for j in range(first, 3):
                st.append(ms[on])
                rt.append(t.mkt_count[r][on] * self.lam_rung[r] * s_inc[j, src])
                tg.append(t.mkt_target[r][j][on])
                mv.append(np.full(on.sum(), r + 1))
                ac.append(np.full(on.sum(), j))
        on = t.mkt_has_slot
        p = s_ent[1, t.mkt_entrant_src[on]]
        for j, prob in ((0, 1 - p), (1, p)):
            if j < first:
                continue
            st.append(ms[on])
            rt.append(self.theta["lambda_L"] * prob)
            tg.append(ms[on] if j == 0 else t.mkt_enter[on])
            mv.append(np.full(on.sum(), t.omega_bar + 1))
            ac.append(np.full(on.sum(), j))
        return EventTable.from_lists(M, *(np.concatenate(x) for x in (st, rt, tg, mv, ac)))

    def assemble(self, sigma):
        events = self.event_table(sigma)
        return events.intensity(), events, self.hazards(sigma)


class LadderTables:
    """Precomputed transition addresses for the ladder at fixed ``(N, constants)``."""

    def __init__(self, N: int, const: LadderConstants, max_states: int = DEFAULT_MAX_STATES):
        start = time.perf_counter()
        wb = const.omega_bar
        space = build_ladder_space(N, wb, max_states=max_states)
        self.space = space
        self.omega_bar = wb
        K = space.K
        self.K = K
        own, riv = space.decode(np.arange(K))
        self.own = own
        ks = np.arange(K)
        self.n_market = space.n_market_configs

        def encode(o, r):
            return space.encode(o, r)

        # own investment
        self.own_invest = encode(np.minimum(own + 1, wb), riv)
        # depreciation: every active firm moves down one rung, floor at 1
        dep_r = np.zeros_like(riv)
        dep_r[:, 0] = riv[:, 0] + riv[:, 1]
        dep_r[:, 1:wb - 1] = riv[:, 2:wb]
        dep_r[:, wb - 1] = 0
        dep_r[:, wb] = riv[:, wb]
        dep_target = encode(np.maximum(own - 1, 1), dep_r)
        rows, cols = [ks], [dep_target]
        # rival incumbents
        self.rival_src, self.rival_count = [], []
        own_onehot = np.zeros_like(riv)
        own_onehot[ks, own - 1] = 1
        for r in range(wb):
            cnt = riv[:, r]
            has = cnt > 0
            base = riv.copy()
            base[has, r] -= 1
            # rival's own view: rung r+1, its rivals are the others plus us
            src = np.zeros(K, dtype=np.int64)
            src[has] = encode(np.full(has.sum(), r + 1), base[has] + own_onehot[has])
            self.rival_src.append(src)
            self.rival_count.append(cnt.astype(float))
            up = base.copy()
            up[:, min(r + 1, wb - 1)] += 1
            out = base.copy()
            out[:, wb] += 1
            t_inv = np.where(has, encode(own, np.where(has[:, None], up, riv)), ks)
            t_exit = np.where(has, encode(own, np.where(has[:, None], out, riv)), ks)
            rows += [ks, ks, ks]
            cols += [ks, t_inv, t_exit]
        # potential entrant
        has_slot = riv[:, wb] > 0
        self.has_slot = has_slot.astype(float)
        after = riv.copy()
        after[has_slot, wb] -= 1
        ent_view = after + own_onehot
        self.entrant_src = np.zeros(K, dtype=np.int64)
        self.entrant_src[has_slot] = encode(np.full(has_slot.sum(), const.omega_entry), ent_view[has_slot])
        entered = after.copy()
        entered[has_slot, const.omega_entry - 1] += 1
        t_enter = np.where(has_slot, encode(own, np.where(has_slot[:, None], entered, riv)), ks)
        rows += [ks, ks]
        cols += [ks, t_enter]
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        key = rows * K + cols
        uniq, slot = np.unique(key, return_inverse=True)
        self.slot = slot
        self.nnz = len(uniq)
        urow, ucol = uniq // K, uniq % K
        self.indices = ucol.astype(np.int64)
        self.indptr = np.searchsorted(urow, np.arange(K + 1)).astype(np.int64)

        # market-level addresses
        cfg = space.market_configs
        M = len(cfg)
        self.mkt_count = [cfg[:, r].astype(float) for r in range(wb)]
        dep = np.zeros_like(cfg)
        dep[:, 0] = cfg[:, 0] + cfg[:, 1]
        dep[:, 1:wb - 1] = cfg[:, 2:wb]
        dep[:, wb] = cfg[:, wb]
        self.mkt_dep = space.market_rank(dep)
        self.mkt_src, self.mkt_target = [], []
        for r in range(wb):
            has = cfg[:, r] > 0
            base = cfg.copy()
            base[has, r] -= 1
            src = np.zeros(M, dtype=np.int64)
            src[has] = encode(np.full(has.sum(), r + 1), base[has])
            self.mkt_src.append(src)
            up = base.copy()
            up[:, min(r + 1, wb - 1)] += 1
            out = base.copy()
            out[:, wb] += 1
            ms = np.arange(M)
            tgts = [ms,
                    np.where(has, space.market_rank(np.where(has[:, None], up, cfg)), ms),
                    np.where(has, space.market_rank(np.where(has[:, None], out, cfg)), ms)]
            self.mkt_target.append(tgts)
        self.mkt_has_slot = cfg[:, wb] > 0
        after = cfg.copy()
        after[self.mkt_has_slot, wb] -= 1
        self.mkt_entrant_src = np.zeros(M, dtype=np.int64)
        hs = self.mkt_has_slot
        self.mkt_entrant_src[hs] = encode(np.full(hs.sum(), const.omega_entry), after[hs])
        entered = after.copy()
        entered[hs, const.omega_entry - 1] += 1
        self.mkt_enter = np.where(hs, space.market_rank(np.where(hs[:, None], entered, cfg)), np.arange(M))
        self.empty_market = int(space.market_rank(np.eye(wb + 1, dtype=np.int64)[wb] * N))

        # flow profits
        profits = ladder_profits(N, wb, const.omega_star, const.market_size, const.cost)
        self.market_profits = profits
        full = riv + own_onehot
        self.profit_own = profits[space.market_rank(full), own - 1]
        self.build_time = time.perf_counter() - start


def ladder_build(theta, N: int = 2, const: LadderConstants | None = None, tables=None) -> LadderGame:
    """Assemble the ladder game at ``theta``; see :class:`LadderConstants`."""
    if const is None:
        const = LadderConstants(market_size=MARKET_SIZE.get(N, 0.40))
    th = dict(zip(PARAM_NAMES, theta)) if not isinstance(theta, dict) else dict(theta)
    return LadderGame(th, N, const, tables)


class LadderFamily(ModelFamily):
    """Quality ladder family; continuation choices are observed in event data."""

    name = "ladder"
    param_names = PARAM_NAMES
    rate_params = frozenset({"lambda_L", "lambda_H", "gamma"})
    truth = dict(TRUTH)
    solve_method = "policy"

    def __init__(self, N: int = 2, const: LadderConstants | None = None, observe_continuation: bool = True):
        super().__init__()
        self.N = N
        self.const = const if const is not None else LadderConstants(market_size=MARKET_SIZE.get(N, 0.40))
        self.tables = LadderTables(N, self.const)
        self.observe_continuation = observe_continuation

    @property
    def n_states(self) -> int:
        return self.tables.n_market

    def build(self, theta) -> LadderGame:
        return LadderGame(self.theta_dict(theta), self.N, self.const, self.tables)

    def initial_state(self) -> int:
        return self.tables.empty_market

    def event_table(self, game, sigma):
        return game.event_table(sigma, self.observe_continuation)
