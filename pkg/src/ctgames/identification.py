"""Constructive identification: order condition, hazard systems and payoff recovery.

For player ``i`` with continuation hazards ``h_i0`` unknown and action
hazards ``h_ij`` (``j >= 1``) read off the intensity matrix, the logit
structure gives, for every state ``k``,

    ln h_ijk - ln h_i0k = psi_ijk + V_i,l(i,j,k) - V_ik.

Stacking over ``j`` and ``k`` yields ``X x = y`` in the unknowns
``x = [ln h_i0; psi_i1; ...; psi_i,J-1; V_i]`` (length ``(J+1)K``), with
``X = [I | choice-indexed I | S_ij - I]``.  The system has ``(J-1)K`` rows,
so ``2K`` further restrictions are required.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.linalg as sl
import scipy.sparse as sp
from scipy.optimize import least_squares

from .equilibrium import RoleProblem
from .errors import IdentificationError, InversionDomainError, ModelStructureError
from .jumpprocess import IntensityMatrix
from .statespace import ContinuationMap, state_label

#: Relative tolerance for numerical rank decisions.
RANK_TOL = 1e-10
#: Largest residual accepted when solving a full-rank system.
RESIDUAL_TOL = 1e-8


# ---------------------------------------------------------------------------
# Counting
# ---------------------------------------------------------------------------

def order_condition(K0: int, K1: int, N: int, J: int):
    """Order condition for identifying ``Q`` from ``P(delta)`` in product games.

    Returns
    -------
    satisfied : bool
    margin : Fraction
        ``K0 K1^N - K0 - N J + 1/2``, exact.
    """
    for name, v in (("K0", K0), ("K1", K1), ("N", N), ("J", J)):
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v}")
    margin = Fraction(K0 * K1**N - K0 - N * J) + Fraction(1, 2)
    return margin >= 0, margin


@dataclass(frozen=True)
class ZeroRestrictionCount:
    """Structural zeros in the off-diagonal of ``Q``.

    ``needed`` is ``floor((K - 1) / 2)``, the number of zeros required in
    every row; ``satisfied`` compares it with the sparsest row.
    """

    zeros: int
    offdiag_cells: int
    needed: int
    min_row_zeros: int

    @property
    def satisfied(self) -> bool:
        return self.min_row_zeros >= self.needed

    def __int__(self):
        return self.zeros


def reachable_pattern(cmap: ContinuationMap, Q0_pattern=None) -> sp.csr_matrix:
    """Boolean off-diagonal pattern of cells reachable by nature or a player."""
    N, J, K = cmap.shape
    ks = np.arange(K)
    rows, cols = [], []
    for i in range(N):
        for j in range(1, J):
            rows.append(ks)
            cols.append(cmap.table[i, j])
    pat = sp.csr_matrix((np.ones(sum(len(r) for r in rows)), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(K, K)) if rows else sp.csr_matrix((K, K))
    if Q0_pattern is not None:
        q0 = Q0_pattern.offdiag if isinstance(Q0_pattern, IntensityMatrix) else sp.csr_matrix(Q0_pattern)
        pat = pat + (q0 != 0).astype(float)
    pat = sp.csr_matrix(pat)
    pat.setdiag(0)
    pat.eliminate_zeros()
    return (pat != 0).tocsr()


def count_zero_restrictions(space, cmap: ContinuationMap, Q0_pattern=None) -> ZeroRestrictionCount:
    """Count off-diagonal cells of ``Q`` that no action and no nature jump can reach."""
    K = cmap.shape[2]
    if space is not None and getattr(space, "K", K) != K:
        raise ValueError(f"state space has K={space.K}, continuation map has K={K}")
    pat = reachable_pattern(cmap, Q0_pattern)
    per_row = (K - 1) - np.diff(pat.indptr)
    return ZeroRestrictionCount(zeros=int(per_row.sum()), offdiag_cells=K * (K - 1),
                                needed=(K - 1) // 2, min_row_zeros=int(per_row.min()) if K else 0)


def aliasing_pairs(Q, delta: float, tol: float = 1e-6) -> list:
    """Eigenvalue pairs of ``Q`` that differ by a nonzero multiple of ``2 pi i / delta``.

    Such pairs make ``exp(delta Q)`` blind to the difference, so ``Q`` may
    not be recoverable from ``P(delta)``.  Returns ``(a, b, n)`` tuples of
    eigenvalue indices and the multiple ``n``.
    """
    A = Q.toarray() if isinstance(Q, IntensityMatrix) else np.asarray(Q, dtype=float)
    ev = np.linalg.eigvals(A)
    period = 2 * np.pi / delta
    out = []
    for a in range(len(ev)):
        for b in range(a + 1, len(ev)):
            d = ev[a] - ev[b]
            n = np.rint(d.imag / period)
            if n != 0 and abs(d.real) <= tol and abs(d.imag - n * period) <= tol:
                out.append((a, b, int(n)))
    return out


# ---------------------------------------------------------------------------
# Hazard systems and restrictions
# ---------------------------------------------------------------------------

def numerical_rank(A, tol: float = RANK_TOL) -> int:
    """Rank from a column-pivoted QR factorization with relative tolerance."""
    A = np.asarray(A.toarray() if sp.issparse(A) else A, dtype=float)
    if A.size == 0:
        return 0
    R = sl.qr(A, mode="r", pivoting=True)[0]
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        return 0
    return int((d > tol * d[0]).sum())


@dataclass(eq=False)
class HazardSystem:
    """Stacked linear system ``X x = y`` for one player.

    Attributes
    ----------
    X : ndarray ((J-1)K', (J+1)K)
    y : ndarray
        ``ln h_ijk`` for the observed rows.
    rows : ndarray of int, shape (n_rows, 2)
        ``(j, k)`` of each row.
    K, J : int
    player : int
    hazards_plus : ndarray (J-1, K)
    """

    X: np.ndarray
    y: np.ndarray
    rows: np.ndarray
    K: int
    J: int
    player: int
    hazards_plus: np.ndarray
    S: list = field(default_factory=list)

    @property
    def n_unknowns(self) -> int:
        return (self.J + 1) * self.K

    def split(self, x):
        """Return ``(ln h0, psi (J-1, K), V)`` from a stacked vector."""
        K, J = self.K, self.J
        return x[:K], x[K:J * K].reshape(J - 1, K), x[J * K:]


def build_hazard_system(space, cmap: ContinuationMap, player: int, hazards_plus) -> HazardSystem:
    """Assemble ``X = [I | choice-indexed I | S_ij - I]`` and ``y = ln h_i^+``.

    Parameters
    ----------
    hazards_plus : array_like (J-1, K)
        Hazards of choices ``j >= 1``.  Entries set to NaN are treated as
        unobserved and their rows are dropped (an action that leaves the
        state unchanged cannot be seen in ``Q``).

    Raises
    ------
    InversionDomainError
        If an observed hazard is not positive.
    ModelStructureError
        If the assembled ``X`` does not have full row rank.
    """
    N, J, K = cmap.shape
    if space is not None and getattr(space, "K", K) != K:
        raise ValueError("state space and continuation map disagree on K")
    if not 0 <= player < N:
        raise ValueError(f"player {player + 1} outside 1..{N}")
    h = np.asarray(hazards_plus, dtype=float).reshape(J - 1, K)
    observed = np.isfinite(h)
    if np.any(h[observed] <= 0):
        j, k = np.argwhere(observed & (h <= 0))[0]
        raise InversionDomainError(f"hazard of choice {j + 1} in state {state_label(k)} is not positive")
    I = np.eye(K)
    blocks, ys, rows, S_list = [], [], [], []
    for j in range(1, J):
        S = np.zeros((K, K))
        S[np.arange(K), cmap.table[player, j]] = 1.0
        S_list.append(S)
        choice = np.zeros((K, (J - 1) * K))
        choice[:, (j - 1) * K:j * K] = I
        full = np.hstack([I, choice, S - I])
        keep = observed[j - 1]
        blocks.append(full[keep])
        ys.append(np.log(h[j - 1, keep]))
        rows.append(np.column_stack([np.full(keep.sum(), j), np.arange(K)[keep]]))
    X = np.vstack(blocks)
    y = np.concatenate(ys)
    rank = numerical_rank(X)
    if rank < X.shape[0]:
        raise ModelStructureError(f"hazard system has rank {rank} < {X.shape[0]} rows")
    return HazardSystem(X=X, y=y, rows=np.vstack(rows), K=K, J=J, player=player, hazards_plus=h, S=S_list)


@dataclass(eq=False)
class RestrictionSet:
    """Linear restrictions ``R x = r`` plus profiled constant-rate groups.

    ``groups`` holds lists of states whose total move-arrival rate
    ``h_i0k + sum_j h_ijk`` is a common unknown constant; a group of ``n``
    states contributes ``n - 1`` restrictions.
    """

    R: np.ndarray
    r: np.ndarray
    labels: list
    groups: list = field(default_factory=list)

    @property
    def n_restrictions(self) -> int:
        return self.R.shape[0] + sum(len(g) - 1 for g in self.groups)

    def __add__(self, other: "RestrictionSet") -> "RestrictionSet":
        return RestrictionSet(np.vstack([self.R, other.R]), np.concatenate([self.r, other.r]),
                              self.labels + other.labels, self.groups + other.groups)


def _psi_col(K, j, k):
    return K + (j - 1) * K + k


def _v_col(K, J, k):
    return J * K + k


def standard_restrictions(kind: str, detail, K: int, J: int, values=None) -> RestrictionSet:
    """Build a standard restriction set.

    Parameters
    ----------
    kind : {"psi_constant", "lambda_constant_groups", "value_zero_states", "value_exclusion_pairs"}
    detail :
        ``psi_constant``: choices ``j >= 1`` to restrict (``None`` for all);
        ``lambda_constant_groups``: list of state groups;
        ``value_zero_states``: list of states;
        ``value_exclusion_pairs``: list of ``(k, k')`` pairs.
        States are 0-based.
    values : sequence of float, optional
        Right-hand sides for value restrictions (default zero), e.g. values
        pinned from another source.
    """
    n = (J + 1) * K
    rows, rhs, labels, groups = [], [], [], []

    def check_state(k):
        if not 0 <= int(k) < K:
            raise ValueError(f"state {state_label(k)} outside 1..{K}")

    if kind == "psi_constant":
        choices = range(1, J) if detail is None else detail
        for j in choices:
            if not 1 <= j < J:
                raise ValueError(f"choice {j} outside 1..{J - 1}")
            for k in range(1, K):
                row = np.zeros(n)
                row[_psi_col(K, j, k)] = 1.0
                row[_psi_col(K, j, 0)] = -1.0
                rows.append(row)
                rhs.append(0.0)
                labels.append(f"psi[{j},{k + 1}] = psi[{j},1]")
    elif kind == "lambda_constant_groups":
        seen = set()
        for g in detail or []:
            g = [int(k) for k in g]
            for k in g:
                check_state(k)
                if k in seen:
                    raise ValueError(f"state {state_label(k)} appears in more than one group")
                seen.add(k)
            if len(g) >= 2:
                groups.append(g)
    elif kind in ("value_zero_states", "value_exclusion_pairs"):
        items = list(detail or [])
        vals = np.zeros(len(items)) if values is None else np.asarray(values, dtype=float)
        if len(vals) != len(items):
            raise ValueError("need one value per restriction")
        for item, v in zip(items, vals):
            row = np.zeros(n)
            if kind == "value_zero_states":
                check_state(item)
                row[_v_col(K, J, int(item))] = 1.0
                labels.append(f"V[{int(item) + 1}] = {v:g}")
            else:
                a, b = item
                check_state(a)
                check_state(b)
                if a == b:
                    raise ValueError("exclusion pair needs two distinct states")
                row[_v_col(K, J, int(a))] = 1.0
                row[_v_col(K, J, int(b))] = -1.0
                labels.append(f"V[{int(a) + 1}] - V[{int(b) + 1}] = {v:g}")
            rows.append(row)
            rhs.append(float(v))
    else:
        raise ValueError(f"unknown restriction kind {kind!r}")
    if not rows and not groups:
        raise ValueError("restriction set is empty")
    R = np.vstack(rows) if rows else np.zeros((0, n))
    return RestrictionSet(R, np.asarray(rhs, dtype=float), labels, groups)


@dataclass(eq=False)
class IdentificationResult:
    """Recovered unknowns for one player, or an under-identification report."""

    rank_ok: bool
    rank: int
    n_unknowns: int
    nullity: int
    residual: float = float("nan")
    h0: np.ndarray = None
    psi: np.ndarray = None
    V: np.ndarray = None
    group_rates: np.ndarray = None
    null_basis: np.ndarray = None

    def lam(self, hazards_plus) -> np.ndarray:
        """Move-arrival rates ``h0 + sum_j h_j`` (unobserved hazards count as zero)."""
        return self.h0 + np.nansum(hazards_plus, axis=0)

    def sigma(self, hazards_plus) -> np.ndarray:
        h = np.vstack([self.h0, np.nan_to_num(hazards_plus)])
        return h / h.sum(axis=0, keepdims=True)


def _stack(system: HazardSystem, restrictions: RestrictionSet):
    """Residual and Jacobian of the full (possibly profiled) system."""
    K = system.K
    hp = np.nan_to_num(system.hazards_plus).sum(axis=0)
    A = np.vstack([system.X, restrictions.R])
    b = np.concatenate([system.y, restrictions.r])
    G = len(restrictions.groups)
    n = system.n_unknowns

    def fun(z):
        x, lam = z[:n], z[n:]
        parts = [A @ x - b]
        for g, grp in enumerate(restrictions.groups):
            grp = np.asarray(grp)
            parts.append(np.exp(x[grp]) + hp[grp] - lam[g])
        return np.concatenate(parts)

    def jac(z):
        x = z[:n]
        top = np.hstack([A, np.zeros((A.shape[0], G))])
        rows = [top]
        for g, grp in enumerate(restrictions.groups):
            grp = np.asarray(grp)
            blk = np.zeros((len(grp), n + G))
            blk[np.arange(len(grp)), grp] = np.exp(x[grp])
            blk[:, n + g] = -1.0
            rows.append(blk)
        return np.vstack(rows)

    return A, b, fun, jac, hp


def solve_identification(system: HazardSystem, restrictions: RestrictionSet) -> IdentificationResult:
    """Solve the hazard system under restrictions.

    Linear restrictions are stacked under ``X``.  Constant-rate groups are
    profiled: each group's rate is an extra unknown and
    ``exp(ln h_i0k) + sum_j h_ijk = lambda_g`` is imposed exactly for every
    member state, so the problem becomes a small nonlinear least-squares
    problem.  Identification is judged by the rank of the stacked Jacobian.

    Raises
    ------
    IdentificationError
        If the system is full rank but the restrictions are inconsistent
        with the hazards (residual above ``1e-8``).
    """
    n = system.n_unknowns
    if restrictions.R.shape[1] != n:
        raise ValueError(f"restrictions have {restrictions.R.shape[1]} columns, system has {n} unknowns")
    # a group constraint at a state with an unobserved action hazard only defines that hazard
    seen = np.all(np.isfinite(system.hazards_plus), axis=0)
    groups = [np.asarray([k for k in g if seen[k]], dtype=int) for g in restrictions.groups]
    groups = [g for g in groups if len(g)]
    restrictions = RestrictionSet(restrictions.R, restrictions.r, restrictions.labels, groups)
    A, b, fun, jac, hp = _stack(system, restrictions)
    G = len(groups)
    floor = np.array([hp[g].max() for g in groups])
    scale = np.array([max(hp[g].max(), 1e-12) for g in groups])
    fixed = np.zeros(n, dtype=bool)
    for g in groups:
        fixed[g] = True
    free = ~fixed
    A_free, A_fixed = A[:, free], A[:, fixed]
    grouped = np.concatenate(groups) if G else np.zeros(0, dtype=int)

    def assemble(t):
        # group rate lambda_g = max_k h^+_k + scale_g exp(t_g) keeps every h_i0k positive
        lam = floor + scale * np.exp(t)
        x = np.zeros(n)
        for g, grp in enumerate(groups):
            x[grp] = np.log(lam[g] - hp[grp])
        rhs = b - A_fixed @ x[fixed]
        x[free] = np.linalg.lstsq(A_free, rhs, rcond=None)[0]
        return np.concatenate([x, lam])

    def profiled(t):
        return fun(assemble(t))

    if G:
        best = None
        for t0 in (0.0, -3.0, 3.0):
            sol = least_squares(profiled, np.full(G, t0), bounds=(-30.0, 30.0), method="trf", xtol=1e-15,
                                ftol=1e-15, gtol=1e-15, max_nfev=500)
            if best is None or sol.cost < best.cost:
                best = sol
        z = assemble(best.x)
        z_start = assemble(np.zeros(G))
        # full Gauss-Newton steps on the unprofiled system; the residual may rise
        # before it collapses, so keep the best iterate rather than forcing descent
        best_z, best_n = z, np.linalg.norm(fun(z))
        for _ in range(30):
            f0 = fun(z)
            if not np.all(np.isfinite(f0)):
                break
            z = z + np.linalg.lstsq(jac(z), -f0, rcond=None)[0]
            nz = np.linalg.norm(fun(z))
            if nz < best_n:
                best_z, best_n = z, nz
            if best_n < 1e-14:
                break
        z = best_z
    else:
        z = np.linalg.lstsq(A, b, rcond=None)[0]
    Jz = jac(z)
    rank = numerical_rank(Jz)
    if G and rank < n + G:
        # inconsistent restrictions can drive some h_i0k to 0 or infinity, where
        # the Jacobian degenerates; rank is a property of the structure, so
        # judge it at an interior point instead
        J0 = jac(z_start)
        if numerical_rank(J0) > rank:
            Jz = J0
            rank = numerical_rank(J0)
    n_cols = n + G
    if rank < n_cols:
        _, s, vt = np.linalg.svd(Jz)
        tol = RANK_TOL * (s[0] if s.size else 1.0)
        sv = np.r_[s, np.zeros(max(0, n_cols - len(s)))]
        return IdentificationResult(rank_ok=False, rank=rank, n_unknowns=n_cols, nullity=n_cols - rank,
                                    null_basis=vt[sv <= tol])
    res = float(np.abs(fun(z)).max())
    if res > RESIDUAL_TOL:
        raise IdentificationError(f"restrictions are inconsistent with the hazards (residual {res:.3e})")
    x = z[:n]
    lnh0, psi, V = system.split(x)
    return IdentificationResult(rank_ok=True, rank=rank, n_unknowns=n_cols, nullity=0, residual=res,
                                h0=np.exp(lnh0), psi=psi, V=V, group_rates=z[n:])


def recover_flow_payoffs(spec, player: int, V_i, psi_i, sigma) -> np.ndarray:
    """Flow payoffs ``u_i = Xi_i(sigma) V_i - L_i C_i(sigma_i)``.

    Parameters
    ----------
    spec : GameSpec
        Supplies ``rho``, ``lam``, ``Q0`` and the continuation map; its
        flow payoffs are ignored.
    player : int
    V_i : ndarray (K,)
    psi_i : ndarray (J, K) or (J-1, K)
        Instantaneous payoffs (choice 0 may be omitted).
    sigma : list of ndarray (J, K)
        CCPs of every player; rivals' enter the passive transition rates.
    """
    sigma = [np.asarray(s, dtype=float) for s in sigma]
    own = sigma[player]
    if np.any(own <= 0):
        raise InversionDomainError("own choice probabilities must be strictly positive")
    psi = np.asarray(psi_i, dtype=float)
    if psi.shape[0] == spec.J - 1:
        psi = np.vstack([np.zeros((1, spec.K)), psi])
    rp = spec.role_problem(player, sigma)
    rp = RoleProblem(u=np.zeros(spec.K), rho=rp.rho, lam=rp.lam, psi=psi, target=rp.target,
                     terminal=rp.terminal, passive=rp.passive)
    return rp.xi(own) @ np.asarray(V_i, dtype=float) - rp.rhs(own)


def identification_report(spec, player: int, hazards_plus, restrictions: RestrictionSet, delta=None) -> dict:
    """Structured summary of the identification pipeline for one player."""
    N, J, K = spec.cmap.shape
    zeros = count_zero_restrictions(spec.space, spec.cmap, spec.Q0)
    report = {
        "player": player + 1,
        "K": K,
        "J": J,
        "zero_restrictions": zeros.zeros,
        "zeros_needed_per_row": zeros.needed,
        "min_row_zeros": zeros.min_row_zeros,
        "restrictions": restrictions.n_restrictions,
    }
    factors = getattr(spec.space, "factors", None)
    if factors and len(factors) == N + 1 and len({c for _, c in factors[1:]}) == 1:
        ok, margin = order_condition(factors[0][1], factors[1][1], N, J)
        report["order_condition"] = {"satisfied": bool(ok), "margin": float(margin)}
    system = build_hazard_system(spec.space, spec.cmap, player, hazards_plus)
    report["hazard_system_rows"] = int(system.X.shape[0])
    report["hazard_system_rank"] = numerical_rank(system.X)
    result = solve_identification(system, restrictions)
    report["rank_ok"] = bool(result.rank_ok)
    report["rank"] = result.rank
    report["unknowns"] = result.n_unknowns
    report["nullity"] = result.nullity
    if result.rank_ok:
        report["residual"] = result.residual
        report["h0"] = result.h0.tolist()
        report["psi"] = result.psi.tolist()
        report["V"] = result.V.tolist()
    if delta is not None:
        report["aliasing_pairs"] = aliasing_pairs(spec.Q0, delta)
    return report
