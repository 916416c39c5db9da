"""Single-agent engine replacement model with two monitoring rates.

Mileage bins ``k = 1..K`` (0-based indices ``0..K-1``).  Mileage rises one
bin at rate ``gamma`` until bin ``K``.  The manager reviews the bus at rate
``lambda_L`` in bins ``1..floor(K/2)`` and ``lambda_H`` above, and may
replace the engine at cost ``mu``, resetting mileage to bin 1.  Flow
utility is ``beta * k * scale`` with ``scale = 1/K`` by default, i.e. the
mileage cost is linear in mileage normalized to ``(0, 1]``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..equilibrium import GameSpec
from ..jumpprocess import IntensityMatrix
from ..statespace import ContinuationMap, build_product_space
from .base import ModelFamily

PARAM_NAMES = ("lambda_L", "lambda_H", "gamma", "beta", "mu")
TRUTH = {"lambda_L": 0.05, "lambda_H": 0.10, "gamma": 0.5, "beta": -2.0, "mu": -9.0}


def renewal_space(K: int):
    return build_product_space(1, K, 1, J=2)


def renewal_map(K: int) -> ContinuationMap:
    """``l(0, k) = k`` and ``l(1, k) = 1``; replacing a new engine is a declared no-op."""
    table = np.zeros((1, 2, K), dtype=np.int64)
    table[0, 0] = np.arange(K)
    noop = np.zeros((1, 2, K), dtype=bool)
    noop[0, 1, 0] = True
    return ContinuationMap(table, noop)


def renewal_nature(K: int, gamma: float) -> IntensityMatrix:
    """Mileage increments at rate ``gamma`` on the superdiagonal; none from bin ``K``."""
    return IntensityMatrix(sp.diags(np.full(K - 1, gamma), 1, shape=(K, K)))


def renewal_lambda(K: int, lambda_L: float, lambda_H: float) -> np.ndarray:
    split = K // 2
    return np.where(np.arange(1, K + 1) <= split, lambda_L, lambda_H)


def renewal_build(theta, K: int = 90, rho: float = 0.05, mileage_scale: float | None = None) -> GameSpec:
    """Assemble the renewal game.

    Parameters
    ----------
    theta : dict or sequence
        ``(lambda_L, lambda_H, gamma, beta, mu)``.
    K : int
        Number of mileage bins (at least 2).
    rho : float
        Discount rate.
    mileage_scale : float, optional
        Multiplier on ``k`` in the flow cost; defaults to ``1/K``.  Use
        ``1.0`` for the unnormalized cost ``beta * k``.
    """
    if K < 2:
        raise ValueError(f"renewal model needs K >= 2 mileage bins, got {K}")
    th = dict(zip(PARAM_NAMES, theta)) if not isinstance(theta, dict) else dict(theta)
    for n in ("lambda_L", "lambda_H", "gamma"):
        if not th[n] > 0:
            raise ValueError(f"rate parameter {n} must be positive, got {th[n]}")
    scale = 1.0 / K if mileage_scale is None else float(mileage_scale)
    ks = np.arange(1, K + 1, dtype=float) * scale
    psi = np.zeros((1, 2, K))
    psi[0, 1] = th["mu"]
    return GameSpec(
        space=renewal_space(K),
        cmap=renewal_map(K),
        rho=[rho],
        lam=renewal_lambda(K, th["lambda_L"], th["lambda_H"])[None, :],
        Q0=renewal_nature(K, th["gamma"]),
        u=(th["beta"] * ks)[None, :],
        psi=psi,
        meta={"model": "renewal", "theta": th, "mileage_scale": scale},
    )


class RenewalFamily(ModelFamily):
    """Renewal model family.

    Parameters
    ----------
    K : int
    rho : float
    homogeneous : bool
        Tie the two monitoring rates into one parameter ``lambda``.
    mileage_scale : float, optional
        See :func:`renewal_build`.
    """

    name = "renewal"
    solve_method = "policy"

    def __init__(self, K: int = 90, rho: float = 0.05, homogeneous: bool = False, mileage_scale=None):
        super().__init__()
        self.mileage_scale = mileage_scale
        self.K = int(K)
        self.rho = float(rho)
        self.homogeneous = bool(homogeneous)
        if homogeneous:
            self.param_names = ("lambda", "gamma", "beta", "mu")
            self.rate_params = frozenset({"lambda", "gamma"})
            self.truth = {"lambda": 0.05, "gamma": 0.5, "beta": -2.0, "mu": -9.0}
        else:
            self.param_names = PARAM_NAMES
            self.rate_params = frozenset({"lambda_L", "lambda_H", "gamma"})
            self.truth = dict(TRUTH)

    @property
    def n_states(self) -> int:
        return self.K

    def full_theta(self, theta) -> dict:
        th = self.theta_dict(theta)
        if self.homogeneous:
            lam = th.pop("lambda")
            th = {"lambda_L": lam, "lambda_H": lam, **th}
        return th

    def build(self, theta) -> GameSpec:
        return renewal_build(self.full_theta(theta), K=self.K, rho=self.rho, mileage_scale=self.mileage_scale)

    def initial_state(self) -> int:
        return 0

    derived_names = ("mu/beta",)

    def derived(self, theta) -> dict:
        th = self.theta_dict(theta)
        return {"mu/beta": th["mu"] / th["beta"] if th["beta"] != 0 else float("nan")}
