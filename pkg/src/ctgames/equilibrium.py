"""Markov perfect equilibrium under type 1 extreme value choice shocks.

Every player's problem, given beliefs about rivals, is linear in its value
vector once its own choice probabilities are fixed.  A :class:`RoleProblem`
captures that problem: flow payoffs, discounting, the rate of own move
opportunities, instantaneous payoffs and continuation targets of each choice,
and a sparse matrix of "passive" transition rates caused by nature and
rivals.  Both the product-form games of :class:`GameSpec` and the anonymous
quality ladder reduce to role problems, so the Bellman operator, the
best-response map and the linear value representation are shared.
"""

from __future__ import annotations

import time
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import logsumexp, xlogy

from .errors import ConvergenceError, InversionDomainError, ModelStructureError
from .jumpprocess import EventTable, IntensityMatrix, aggregate
from .statespace import ContinuationMap, state_label

#: Euler-Mascheroni constant (20 significant digits).
EULER_GAMMA = 0.57721566490153286061

#: Largest system solved directly in the linear value representation.
DIRECT_SOLVE_MAX = 1500
#: Accepted scaled residual of iterative linear solves.
ITERATIVE_RESIDUAL = 1e-11

#: Policy iteration stops once the CCP change stalls below this level.
POLICY_STALL = 1e-10
#: Consecutive non-improving iterations that count as a stall.
POLICY_STALL_ITER = 3

#: Target code for choices that end the player's participation.
TERMINAL = -1


def emax(v_choice, axis=0):
    """Log-sum-exp ``ln sum_j exp(v_j)`` with a max shift.

    The expected maximum of ``v_j + eps_j`` with standard T1EV shocks is this
    value plus :data:`EULER_GAMMA`.
    """
    v = np.asarray(v_choice, dtype=float)
    out = logsumexp(v, axis=axis)
    return float(out) if np.ndim(out) == 0 else out


def best_response_ccp(psi_k, V_cont, axis=0):
    """Logit choice probabilities ``exp(psi_j + V_j) / sum exp(psi + V)``.

    Works on vectors or on ``(J, K)`` arrays (choices along ``axis``).
    """
    v = np.asarray(psi_k, dtype=float) + np.asarray(V_cont, dtype=float)
    v = v - v.max(axis=axis, keepdims=True)
    e = np.exp(v)
    return e / e.sum(axis=axis, keepdims=True)


def ccp_inversion_phi(j: int, j_prime: int, sigma_k) -> float:
    """Choice-value difference implied by CCPs: ``ln sigma_j - ln sigma_j'``."""
    sigma_k = np.asarray(sigma_k, dtype=float)
    if sigma_k[j] <= 0 or sigma_k[j_prime] <= 0:
        raise InversionDomainError(f"choice probabilities must be positive, got {sigma_k[[j, j_prime]]}")
    return float(np.log(sigma_k[j]) - np.log(sigma_k[j_prime]))


# ---------------------------------------------------------------------------
# Single-role linear machinery
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class RoleProblem:
    """One player's problem given beliefs about everyone else.

    Attributes
    ----------
    u : ndarray (K,)
        Flow payoffs.
    rho : float
        Discount rate.
    lam : ndarray (K,)
        Own move-arrival rates.
    psi : ndarray (J, K)
        Instantaneous payoffs; ``psi[0] = 0``.
    target : ndarray of int (J, K)
        Continuation state of each choice, :data:`TERMINAL` for choices that
        end participation.
    terminal : ndarray (J, K)
        Continuation value of terminal choices (ignored elsewhere).
    passive : csr_matrix (K, K)
        Rates of transitions triggered by nature and rivals.  Diagonal
        entries (events that leave the state unchanged) are allowed and
        cancel out of the fixed point.
    """

    u: np.ndarray
    rho: float
    lam: np.ndarray
    psi: np.ndarray
    target: np.ndarray
    terminal: np.ndarray
    passive: sp.csr_matrix

    @property
    def K(self) -> int:
        return self.u.shape[0]

    def continuation(self, V) -> np.ndarray:
        """Continuation value ``W[j, k]`` of each choice."""
        term = self.target == TERMINAL
        W = V[np.where(term, 0, self.target)]
        return np.where(term, self.terminal, W)

    def choice_values(self, V) -> np.ndarray:
        return self.psi + self.continuation(V)

    def best_response(self, V) -> np.ndarray:
        return best_response_ccp(self.psi, self.continuation(V))

    def bellman(self, V) -> np.ndarray:
        """One application of the Bellman operator."""
        out_rate = np.asarray(self.passive.sum(axis=1)).ravel()
        num = self.u + self.passive @ V + self.lam * (EULER_GAMMA + emax(self.choice_values(V)))
        return num / (self.rho + out_rate + self.lam)

    def xi(self, sigma) -> sp.csr_matrix:
        """Matrix ``Xi`` of the linear representation for own CCPs ``sigma``."""
        K = self.K
        J = sigma.shape[0]
        out_rate = np.asarray(self.passive.sum(axis=1)).ravel()
        ks = np.tile(np.arange(K), J)
        tg = self.target.ravel()
        live = tg != TERMINAL
        own = sp.csr_matrix(((self.lam[None, :] * sigma).ravel()[live], (ks[live], tg[live])), shape=(K, K))
        diag = self.rho + out_rate + self.lam
        return (sp.diags(diag) - self.passive - own).tocsr()

    def rhs(self, sigma) -> np.ndarray:
        """Right-hand side ``u + L C(sigma)`` including terminal continuation values."""
        expected = (sigma * self.psi).sum(axis=0) + EULER_GAMMA * sigma.sum(axis=0) - xlogy(sigma, sigma).sum(axis=0)
        term = np.where(self.target == TERMINAL, sigma * self.terminal, 0.0).sum(axis=0)
        return self.u + self.lam * (expected + term)

    def value_linear(self, sigma, x0=None) -> np.ndarray:
        """Solve ``Xi V = u + L C(sigma)``.

        Small systems use a sparse direct solve.  Large ones use BiCGSTAB
        with a diagonal preconditioner, which is effective because ``Xi`` is
        strictly diagonally dominant; the direct solve is the fallback.
        """
        A = self.xi(sigma)
        b = self.rhs(sigma)
        V = None
        if self.K > DIRECT_SOLVE_MAX:
            d = A.diagonal()
            M = spla.LinearOperator(A.shape, matvec=lambda x: x / d, dtype=float)
            scale = max(float(np.abs(b).max()), 1.0)
            for solver in (spla.bicgstab, spla.gmres):
                x, _ = solver(A, b, x0=x0, rtol=1e-14, atol=0.0, M=M, maxiter=5000)
                if np.all(np.isfinite(x)) and np.abs(A @ x - b).max() <= ITERATIVE_RESIDUAL * scale:
                    V = x
                    break
        if V is None:
            V = spla.spsolve(A.tocsc(), b)
        if not np.all(np.isfinite(V)):
            raise ModelStructureError("linear value system is singular")
        return np.asarray(V)


# ---------------------------------------------------------------------------
# Product-form games
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class GameSpec:
    """Primitives of an N-player game on a product state space.

    Parameters
    ----------
    space : StateSpace
    cmap : ContinuationMap
        ``l(i, j, k)``; shape ``(N, J, K)``.
    rho : array_like (N,)
        Discount rates.
    lam : array_like (N, K)
        Move-arrival rates.
    Q0 : IntensityMatrix
        Nature's transitions.
    u : array_like (N, K)
        Flow payoffs.
    psi : array_like (N, J, K)
        Instantaneous payoffs; ``psi[:, 0, :]`` must be zero.
    nature_pattern : sparse matrix, optional
        Cells nature can reach, used for decomposition; defaults to the
        support of ``Q0``.
    """

    space: object
    cmap: ContinuationMap
    rho: np.ndarray
    lam: np.ndarray
    Q0: IntensityMatrix
    u: np.ndarray
    psi: np.ndarray
    nature_pattern: object = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        N, J, K = self.cmap.shape
        self.rho = np.broadcast_to(np.asarray(self.rho, dtype=float), (N,)).copy()
        self.lam = np.broadcast_to(np.asarray(self.lam, dtype=float), (N, K)).copy()
        self.u = np.broadcast_to(np.asarray(self.u, dtype=float), (N, K)).copy()
        self.psi = np.broadcast_to(np.asarray(self.psi, dtype=float), (N, J, K)).copy()
        if self.Q0.K != K:
            raise ValueError(f"Q0 has K={self.Q0.K}, continuation map has K={K}")
        if np.any(self.rho <= 0):
            raise ValueError("discount rates must be positive")
        if np.any(self.lam < 0) or not np.all(np.isfinite(self.lam)):
            raise ValueError("move-arrival rates must be finite and nonnegative")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.psi))):
            raise ValueError("payoffs must be finite")
        if np.any(self.psi[:, 0, :] != 0):
            raise ValueError("instantaneous payoff of continuation (choice 0) must be zero")
        total = self.Q0.exit_rates + self.lam.sum(axis=0)
        if np.any(total <= 0):
            k = int(np.argmin(total))
            raise ModelStructureError(f"state {state_label(k)} has no nature jumps and no move arrivals")
        if self.nature_pattern is None:
            self.nature_pattern = self.Q0.pattern()

    @property
    def N(self) -> int:
        return self.cmap.shape[0]

    @property
    def J(self) -> int:
        return self.cmap.shape[1]

    @property
    def K(self) -> int:
        return self.cmap.shape[2]

    @property
    def n_roles(self) -> int:
        return self.N

    def initial_values(self) -> list:
        return [np.zeros(self.K) for _ in range(self.N)]

    def player_part(self, m: int, sigma_m) -> sp.csr_matrix:
        """Rates of player ``m``'s choices ``j >= 1`` as a ``K x K`` matrix (self-loops kept)."""
        K, J = self.K, self.J
        ks = np.tile(np.arange(K), J - 1)
        rates = (self.lam[m][None, :] * sigma_m[1:]).ravel()
        return sp.csr_matrix((rates, (ks, self.cmap.table[m, 1:].ravel())), shape=(K, K))

    def role_problem(self, i: int, sigma) -> RoleProblem:
        passive = self.Q0.offdiag.copy()
        for m in range(self.N):
            if m != i:
                passive = passive + self.player_part(m, sigma[m])
        return RoleProblem(u=self.u[i], rho=self.rho[i], lam=self.lam[i], psi=self.psi[i],
                           target=self.cmap.table[i], terminal=np.zeros((self.J, self.K)),
                           passive=passive.tocsr())

    def best_response(self, V) -> list:
        return [best_response_ccp(self.psi[i], V[i][self.cmap.table[i]]) for i in range(self.N)]

    def bellman(self, sigma, V) -> list:
        return [self.role_problem(i, sigma).bellman(V[i]) for i in range(self.N)]

    def value_linear(self, sigma, x0=None) -> list:
        x0 = x0 if x0 is not None else [None] * self.N
        return [self.role_problem(i, sigma).value_linear(sigma[i], x0[i]) for i in range(self.N)]

    def hazards(self, sigma) -> np.ndarray:
        """Choice-specific hazards ``h[i, j, k] = lam[i, k] * sigma[i, j, k]``."""
        return self.lam[:, None, :] * np.asarray(sigma)

    def player_intensities(self, sigma) -> list:
        """``[Q_0, Q_1, ..., Q_N]`` implied by CCPs (self-loops dropped)."""
        return [self.Q0] + [IntensityMatrix(self.player_part(m, sigma[m])) for m in range(self.N)]

    def assemble(self, sigma):
        """Observable intensity matrix, labelled event table and hazards."""
        Q = aggregate(self.player_intensities(sigma))
        h = self.hazards(sigma)
        return Q, EventTable.from_game(self.Q0, self.cmap, h), h


# ---------------------------------------------------------------------------
# Solution and solver
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class EquilibriumSolution:
    """Equilibrium objects at one parameter point.

    ``V`` and ``sigma`` hold one entry per role.  For product-form games
    ``hazards[i, j, k] = lam[i, k] * sigma[i][j, k]``.
    """

    V: list
    sigma: list
    hazards: np.ndarray
    Q: IntensityMatrix
    events: EventTable
    iterations: int
    residual: float
    method: str = "vfi"
    elapsed: float = 0.0

    def to_records(self) -> list:
        """Flat ``(state, player, choice, sigma, h, V)`` rows with 1-based states and players."""
        rows = []
        h = self.hazards
        for i, (Vi, si) in enumerate(zip(self.V, self.sigma)):
            J, K = si.shape
            for k in range(K):
                for j in range(J):
                    hij = float(h[i, j, k]) if h is not None and np.ndim(h) == 3 and i < h.shape[0] else float("nan")
                    rows.append({"state": k + 1, "player": i + 1, "choice": j,
                                 "sigma": float(si[j, k]), "h": hij, "V": float(Vi[k])})
        return rows


def bellman_apply(spec, beliefs, V) -> list:
    """Apply each player's Bellman operator given beliefs about rivals."""
    return spec.bellman(beliefs, V)


def value_linear(spec, sigma) -> list:
    """Values implied by CCPs ``sigma`` via the linear representation."""
    return spec.value_linear(sigma)


def _ccp_distance(a, b) -> float:
    return max(float(np.max(np.abs(x - y))) if np.size(x) else 0.0 for x, y in zip(a, b))


class WarmStartCache:
    """Least-recently-used store of ``(theta, V)`` pairs, queried by nearest theta."""

    def __init__(self, capacity: int = 100):
        self.capacity = int(capacity)
        self._store: OrderedDict = OrderedDict()
        self._n = 0

    def __len__(self):
        return len(self._store)

    def put(self, theta, V):
        self._n += 1
        self._store[self._n] = (np.asarray(theta, dtype=float).copy(), [v.copy() for v in V])
        while len(self._store) > self.capacity:
            self._store.popitem(last=False)

    def nearest(self, theta):
        if not self._store:
            return None
        theta = np.asarray(theta, dtype=float)
        best, best_d = None, np.inf
        for key, (th, _) in self._store.items():
            if th.shape != theta.shape:
                continue
            d = float(np.linalg.norm(th - theta))
            if d < best_d:
                best, best_d = key, d
        if best is None:
            return None
        self._store.move_to_end(best)
        return [v.copy() for v in self._store[best][1]]


def solve_equilibrium(spec, tol: float = 1e-13, max_iter: int = 100_000, warm_start=None,
                      method: str = "vfi", relax: float = 1.0, value_tol: float = 1e-10) -> EquilibriumSolution:
    """Solve for an equilibrium by successive approximation.

    Parameters
    ----------
    spec : GameSpec or any game exposing ``best_response``, ``bellman``,
        ``value_linear``, ``assemble`` and ``initial_values``.
    tol : float
        Sup-norm tolerance on the change in CCPs between iterations.
    max_iter : int
    warm_start : list of ndarray, optional
        Starting values (one vector per role).
    method : {"vfi", "policy"}
        ``"vfi"`` alternates a Bellman step and a best response.  ``"policy"``
        replaces the Bellman step by the exact values of the current CCPs
        from the linear representation, which needs far fewer iterations on
        large or patient problems.
    relax : float in (0, 1]
        Weight on the new CCPs; 1 means undamped iteration.
    value_tol : float
        VFI only.  Near-degenerate CCPs can stop moving long before the
        values do, so iteration also continues until the geometric bound
        ``dV * r / (1 - r)`` on the remaining value error is below
        ``value_tol``, with ``r`` the observed contraction ratio.
        Policy iteration converges quadratically, so when its CCP change
        stops falling for ``POLICY_STALL_ITER`` iterations while already
        below ``POLICY_STALL`` it has hit the rounding floor (fast move
        rates make the CCPs very sensitive) and is accepted; the reported
        residual is the last change.

    Raises
    ------
    ConvergenceError
        If ``max_iter`` is reached; carries the final residual.
    """
    if method not in ("vfi", "policy"):
        raise ValueError(f"unknown method {method!r}")
    if not 0 < relax <= 1:
        raise ValueError(f"relaxation factor must lie in (0, 1], got {relax}")
    start = time.perf_counter()
    V = [np.array(v, dtype=float) for v in warm_start] if warm_start is not None else spec.initial_values()
    sigma = spec.best_response(V)
    residual = np.inf
    dv_prev = np.inf
    best, stall = np.inf, 0
    it = 0
    while it < max_iter:
        it += 1
        V_new = spec.bellman(sigma, V) if method == "vfi" else spec.value_linear(sigma, V)
        new = spec.best_response(V_new)
        residual = _ccp_distance(new, sigma)
        sigma = new if relax == 1 else [relax * n + (1 - relax) * s for n, s in zip(new, sigma)]
        done = residual < tol
        if method == "vfi" and done:
            dv = _ccp_distance(V_new, V)
            ratio = dv / dv_prev if dv_prev > 0 else 0.0
            done = dv == 0 or (ratio < 1 and dv * ratio / (1 - ratio) < value_tol)
            dv_prev = dv
        elif method == "vfi":
            dv_prev = _ccp_distance(V_new, V)
        else:
            stall = stall + 1 if residual >= best else 0
            best = min(best, residual)
            done = done or (stall >= POLICY_STALL_ITER and best < POLICY_STALL)
        V = V_new
        if done:
            break
    else:
        raise ConvergenceError(f"equilibrium not reached after {it} iterations (residual {residual:.3e})",
                               residual=residual, iterations=it)
    Q, events, h = spec.assemble(sigma)
    return EquilibriumSolution(V=V, sigma=sigma, hazards=h, Q=Q, events=events, iterations=it,
                               residual=residual, method=method, elapsed=time.perf_counter() - start)
