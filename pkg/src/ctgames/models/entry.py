"""Two-firm entry and exit game with a binary exogenous demand state.

States are ``(x1, x2, d)`` with activity bits ``x1, x2`` and demand
``d in {L, H}`` (``0 = L``).  Encoded index ``k = 4 d + 2 x2 + x1`` so the
eight states are listed ``(0,0,L), (1,0,L), (0,1,L), (1,1,L), (0,0,H), ...``.
Choice 1 toggles the mover's own activity bit.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..equilibrium import GameSpec
from ..jumpprocess import IntensityMatrix
from ..statespace import ContinuationMap, build_product_space
from .base import ModelFamily

K_ENTRY = 8

#: Default primitives.  Entry costs equal scrap values so the instantaneous
#: payoff of switching does not vary with the state.
TRUTH = {
    "gamma_LH": 0.2, "gamma_HL": 0.2,
    "lambda_1": 1.0, "lambda_2": 1.2,
    "entry_cost": -1.0, "scrap": -1.0,
    "profit_L": 1.0, "profit_H": 2.0, "competition": 0.8,
}


def entry_space():
    return build_product_space(2, 2, 2, J=2)


def entry_map() -> ContinuationMap:
    space = entry_space()
    table = np.zeros((2, 2, K_ENTRY), dtype=np.int64)
    for k in range(K_ENTRY):
        d, (x1, x2) = space.decode_game(k)
        table[:, 0, k] = k
        table[0, 1, k] = space.encode_game(d, (1 - x1, x2))
        table[1, 1, k] = space.encode_game(d, (x1, 1 - x2))
    return ContinuationMap(table)


def state_tuples() -> np.ndarray:
    """``(x1, x2, d)`` for each encoded state."""
    space = entry_space()
    return np.array([(*space.decode_game(k)[1], space.decode_game(k)[0]) for k in range(K_ENTRY)])


def default_flow_payoffs(profit_L=1.0, profit_H=2.0, competition=0.8) -> np.ndarray:
    """``u[i, k]``: active firms earn demand-level profit less a rival penalty."""
    st = state_tuples()
    u = np.zeros((2, K_ENTRY))
    for i in range(2):
        own, rival, d = st[:, i], st[:, 1 - i], st[:, 2]
        u[i] = own * (np.where(d == 1, profit_H, profit_L) - competition * rival)
    return u


def entry_nature(gamma_LH: float, gamma_HL: float) -> IntensityMatrix:
    st = state_tuples()
    ks = np.arange(K_ENTRY)
    rate = np.where(st[:, 2] == 0, gamma_LH, gamma_HL)
    return IntensityMatrix(sp.csr_matrix((rate, (ks, ks ^ 4)), shape=(K_ENTRY, K_ENTRY)))


def entry_build(theta, flow_payoff_table=None, rho=0.05, lambda_mode: str = "firm") -> GameSpec:
    """Assemble the entry game.

    Parameters
    ----------
    theta : dict
        ``gamma_LH, gamma_HL`` and either ``lambda_1, lambda_2``
        (``lambda_mode="firm"``) or ``lambda_L, lambda_H`` (``"demand"``),
        plus ``entry_cost`` and ``scrap``.  If ``flow_payoff_table`` is
        omitted, ``profit_L, profit_H, competition`` define it.
    flow_payoff_table : array_like (2, 8), optional
        Flow payoff of each firm in each encoded state.
    rho : float or (2,)
    lambda_mode : {"firm", "demand"}
    """
    th = dict(theta)
    for n in ("gamma_LH", "gamma_HL"):
        if not th[n] > 0:
            raise ValueError(f"rate parameter {n} must be positive, got {th[n]}")
    st = state_tuples()
    if lambda_mode == "firm":
        rates = np.array([th["lambda_1"], th["lambda_2"]])
        lam = np.repeat(rates[:, None], K_ENTRY, axis=1)
    elif lambda_mode == "demand":
        rates = np.array([th["lambda_L"], th["lambda_H"]])
        lam = np.repeat(np.where(st[:, 2] == 1, th["lambda_H"], th["lambda_L"])[None, :], 2, axis=0)
    else:
        raise ValueError(f"unknown lambda_mode {lambda_mode!r}")
    if np.any(rates <= 0):
        raise ValueError("move-arrival rates must be positive")
    if flow_payoff_table is None:
        u = default_flow_payoffs(th.get("profit_L", 1.0), th.get("profit_H", 2.0), th.get("competition", 0.8))
    else:
        u = np.asarray(flow_payoff_table, dtype=float)
        if u.shape != (2, K_ENTRY) or not np.all(np.isfinite(u)):
            raise ValueError(f"flow payoff table must be a complete finite 2 x {K_ENTRY} array")
    psi = np.zeros((2, 2, K_ENTRY))
    for i in range(2):
        psi[i, 1] = np.where(st[:, i] == 0, th["entry_cost"], th["scrap"])
    return GameSpec(space=entry_space(), cmap=entry_map(), rho=rho, lam=lam,
                    Q0=entry_nature(th["gamma_LH"], th["gamma_HL"]), u=u, psi=psi,
                    meta={"model": "entry", "theta": th, "lambda_mode": lambda_mode})


class EntryFamily(ModelFamily):
    """Entry game family with a fixed flow-payoff table."""

    name = "entry"
    solve_method = "vfi"

    def __init__(self, rho=0.05, lambda_mode="firm", flow_payoff_table=None):
        super().__init__()
        self.rho = rho
        self.lambda_mode = lambda_mode
        self.flow_payoff_table = flow_payoff_table
        lam = ("lambda_1", "lambda_2") if lambda_mode == "firm" else ("lambda_L", "lambda_H")
        self.param_names = ("gamma_LH", "gamma_HL") + lam + ("entry_cost", "scrap")
        if flow_payoff_table is None:
            self.param_names += ("profit_L", "profit_H", "competition")
        self.rate_params = frozenset({"gamma_LH", "gamma_HL", *lam})
        base = dict(TRUTH)
        if lambda_mode == "demand":
            base.update(lambda_L=1.0, lambda_H=1.2)
        self.truth = {n: base[n] for n in self.param_names}

    @property
    def n_states(self) -> int:
        return K_ENTRY

    def build(self, theta) -> GameSpec:
        return entry_build(self.theta_dict(theta), self.flow_payoff_table, self.rho, self.lambda_mode)

    def initial_state(self) -> int:
        return 0
