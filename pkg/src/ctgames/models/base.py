"""Common interface for model families used by estimation and the CLI."""

from __future__ import annotations

import numpy as np

from ..equilibrium import WarmStartCache, solve_equilibrium
from ..jumpprocess import simulate_markets


class ModelFamily:
    """A parametric family of games indexed by a named parameter vector.

    Subclasses set ``name``, ``param_names``, ``rate_params`` and ``truth``
    and implement :meth:`build` and :meth:`initial_state`.  Rate parameters
    are positive and estimated on the log scale; all others are unrestricted.
    """

    name = "model"
    param_names: tuple = ()
    rate_params: frozenset = frozenset()
    truth: dict = {}
    solve_method = "vfi"
    solve_tol = 1e-13
    solve_max_iter = 100_000

    def __init__(self):
        self.cache = WarmStartCache(100)

    # -- parameters ---------------------------------------------------------
    def theta_dict(self, theta) -> dict:
        if isinstance(theta, dict):
            missing = [n for n in self.param_names if n not in theta]
            if missing:
                raise ValueError(f"missing parameters: {', '.join(missing)}")
            return {n: float(theta[n]) for n in self.param_names}
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != len(self.param_names):
            raise ValueError(f"expected {len(self.param_names)} parameters, got {theta.size}")
        return dict(zip(self.param_names, theta.tolist()))

    def theta_vector(self, theta) -> np.ndarray:
        d = self.theta_dict(theta)
        return np.array([d[n] for n in self.param_names])

    def check_rates(self, theta: dict):
        for n in self.rate_params:
            if n in theta and not theta[n] > 0:
                raise ValueError(f"rate parameter {n} must be positive, got {theta[n]}")

    # -- model --------------------------------------------------------------
    def build(self, theta):
        raise NotImplementedError

    def initial_state(self) -> int:
        return 0

    @property
    def n_states(self) -> int:
        """Dimension of the observable jump process."""
        raise NotImplementedError

    def solve(self, theta, warm_start=None, use_cache=True, **kw):
        """Solve the equilibrium at ``theta``, warm-started from the nearest cached point."""
        vec = self.theta_vector(theta)
        game = self.build(theta)
        if warm_start is None and use_cache:
            warm_start = self.cache.nearest(vec)
        opts = dict(tol=self.solve_tol, max_iter=self.solve_max_iter, method=self.solve_method)
        opts.update(kw)
        sol = solve_equilibrium(game, warm_start=warm_start, **opts)
        sol.game = game
        if use_cache:
            self.cache.put(vec, sol.V)
        return sol

    def event_table(self, game, sigma):
        """Observable labelled events at CCPs ``sigma``."""
        return game.assemble(sigma)[1]

    #: Names of derived quantities reported by Monte Carlo summaries.
    derived_names: tuple = ()

    def derived(self, theta) -> dict:
        return {}

    def simulate(self, theta, M: int, T: float, root_seed: int, key=(), max_events=None, solution=None):
        """Simulate ``M`` markets of labelled continuous-time events."""
        sol = solution if solution is not None else self.solve(theta)
        game = getattr(sol, "game", None) or self.build(theta)
        return simulate_markets(sol.Q, self.initial_state(), T, M, root_seed,
                                attribution=self.event_table(game, sol.sigma), key=key, max_events=max_events)
