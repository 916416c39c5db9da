"""Sparse intensity matrices, matrix exponentials and trajectory simulation.

Seed splitting
--------------
Independent random streams for markets and replications are derived from a
single root seed with :func:`spawn_rng`, which feeds ``(root, key...)`` to
``numpy.random.SeedSequence(entropy=root, spawn_key=key)``.  A stream depends
only on its key, never on how many workers produced the others.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln, pdtrc

from .errors import DataError, DecompositionError
from .statespace import ContinuationMap, state_label

#: Poisson tail mass neglected by uniformization.
UNIFORMIZATION_TOL = 1e-14
#: Padding applied to the largest exit rate when choosing the uniformization rate.
UNIFORMIZATION_PAD = 1.05
#: Largest eta * delta handled in one pass; longer intervals are split.
MAX_POISSON_MEAN = 700.0
CHUNK_POISSON_MEAN = 500.0


def spawn_rng(root: int, *key: int) -> np.random.Generator:
    """Independent generator for stream ``key`` under root seed ``root``."""
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


class IntensityMatrix:
    """Sparse generator ``Q`` with nonnegative off-diagonals and zero row sums.

    The diagonal is always recomputed from the off-diagonal entries, so it
    cannot go stale.  Instances are immutable.

    Parameters
    ----------
    offdiag : array_like or sparse matrix, shape (K, K)
        Off-diagonal rates.  Anything on the diagonal is ignored.
    """

    __slots__ = ("_off", "_diag", "_full", "_fullT")

    def __init__(self, offdiag):
        off = sp.csr_matrix(offdiag, dtype=float)
        if off.shape[0] != off.shape[1]:
            raise ValueError(f"intensity matrix must be square, got {off.shape}")
        off.setdiag(0.0)
        off.eliminate_zeros()
        off.sort_indices()
        if off.nnz and (not np.all(np.isfinite(off.data)) or off.data.min() < 0):
            raise ValueError("off-diagonal intensities must be finite and nonnegative")
        self._off = off
        self._diag = -np.asarray(off.sum(axis=1)).ravel()
        self._full = None
        self._fullT = None

    @classmethod
    def zeros(cls, K: int) -> "IntensityMatrix":
        return cls(sp.csr_matrix((K, K)))

    @property
    def K(self) -> int:
        return self._off.shape[0]

    @property
    def offdiag(self) -> sp.csr_matrix:
        """Off-diagonal part (read-only view; do not modify)."""
        return self._off

    @property
    def diag(self) -> np.ndarray:
        return self._diag.copy()

    @property
    def exit_rates(self) -> np.ndarray:
        """Total rate ``-q_kk`` of leaving each state."""
        return -self._diag

    @property
    def nnz_offdiag(self) -> int:
        return self._off.nnz

    def tocsr(self) -> sp.csr_matrix:
        """Full matrix including the diagonal."""
        if self._full is None:
            full = (self._off + sp.diags(self._diag)).tocsr()
            full.sort_indices()
            self._full = full
        return self._full.copy()

    def toarray(self) -> np.ndarray:
        return self.tocsr().toarray()

    def pattern(self) -> sp.csr_matrix:
        """Boolean sparsity pattern of the off-diagonal entries."""
        pat = self._off.copy()
        pat.data = np.ones_like(pat.data, dtype=bool)
        return pat.astype(bool)

    def __repr__(self):
        return f"IntensityMatrix(K={self.K}, nnz_offdiag={self.nnz_offdiag})"


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic matrix ``P(delta) = exp(delta Q)``."""

    P: np.ndarray
    delta: float

    @property
    def K(self) -> int:
        return self.P.shape[0]


def aggregate(parts) -> IntensityMatrix:
    """Entrywise sum of intensity matrices sharing the same dimension."""
    parts = list(parts)
    if not parts:
        raise ValueError("aggregate needs at least one part")
    K = parts[0].K
    for p in parts[1:]:
        if p.K != K:
            raise ValueError(f"dimension mismatch: {p.K} vs {K}")
    total = parts[0].offdiag.copy()
    for p in parts[1:]:
        total = total + p.offdiag
    return IntensityMatrix(total)


def _player_targets(cmap: ContinuationMap) -> sp.csr_matrix:
    """Sparse ``K x K`` integer matrix: entry is ``i + 1`` if player ``i`` can move ``k -> l``."""
    N, J, K = cmap.shape
    rows, cols, owners = [], [], []
    ks = np.arange(K)
    for i in range(N):
        moves = cmap.moves(i)
        for j in range(1, J):
            sel = moves[j]
            rows.append(ks[sel])
            cols.append(cmap.table[i, j, sel])
            owners.append(np.full(sel.sum(), i + 1))
    if not rows:
        return sp.csr_matrix((K, K), dtype=np.int64)
    rows, cols, owners = map(np.concatenate, (rows, cols, owners))
    # detect cells claimed by two players
    keys = rows * K + cols
    order = np.argsort(keys, kind="stable")
    ks_sorted, own_sorted = keys[order], owners[order]
    dup = (ks_sorted[1:] == ks_sorted[:-1]) & (own_sorted[1:] != own_sorted[:-1])
    if dup.any():
        key = ks_sorted[1:][dup][0]
        raise DecompositionError(
            f"transition {state_label(key // K)} -> {state_label(key % K)} is reachable by more than one player")
    keep = np.r_[True, ks_sorted[1:] != ks_sorted[:-1]]
    sel = order[keep]
    return sp.csr_matrix((owners[sel], (rows[sel], cols[sel])), shape=(K, K), dtype=np.int64)


def _cells(M, coo) -> np.ndarray:
    """Entries of sparse ``M`` at the nonzero cells of ``coo`` (empty-safe)."""
    if coo.nnz == 0:
        return np.zeros(0)
    return np.asarray(M[coo.row, coo.col]).ravel()


def decompose(Q: IntensityMatrix, space, cmap: ContinuationMap, nature_pattern=None) -> list:
    """Split ``Q`` into ``[Q_0, Q_1, ..., Q_N]`` by attributed mover.

    Parameters
    ----------
    Q : IntensityMatrix
    space : StateSpace
        Only used for a dimension check.
    cmap : ContinuationMap
        Player continuation states; every state-changing action target is
        attributed to its player.
    nature_pattern : array_like or sparse, optional
        Cells nature can reach.  When omitted, every nonzero cell not
        reachable by a player is attributed to nature.  When given, a
        nonzero cell reachable by nobody, or by nature and a player, raises
        :class:`DecompositionError`.
    """
    K = Q.K
    if space is not None and getattr(space, "K", K) != K:
        raise ValueError(f"state space has K={space.K} but Q has K={K}")
    if cmap.shape[2] != K:
        raise ValueError(f"continuation map has K={cmap.shape[2]} but Q has K={K}")
    N = cmap.shape[0]
    owner_mat = _player_targets(cmap)
    off = Q.offdiag.tocoo()
    owner = _cells(owner_mat, off).astype(np.int64)
    if nature_pattern is not None:
        nat = sp.csr_matrix(nature_pattern, dtype=bool)
        nat_hit = _cells(nat, off).astype(bool)
        both = nat_hit & (owner > 0)
        if both.any():
            n = np.argmax(both)
            raise DecompositionError(
                f"transition {state_label(off.row[n])} -> {state_label(off.col[n])} "
                "is reachable by nature and a player")
        nobody = ~nat_hit & (owner == 0)
        if nobody.any():
            n = np.argmax(nobody)
            raise DecompositionError(
                f"transition {state_label(off.row[n])} -> {state_label(off.col[n])} "
                "is not attributable to any mover")
    parts = []
    for m in range(N + 1):
        sel = owner == m
        parts.append(IntensityMatrix(sp.csr_matrix((off.data[sel], (off.row[sel], off.col[sel])), shape=(K, K))))
    return parts


# ---------------------------------------------------------------------------
# Matrix exponential by uniformization
# ---------------------------------------------------------------------------

def _poisson_weights(mean: float, tol: float = UNIFORMIZATION_TOL) -> np.ndarray:
    """Poisson(mean) probabilities for ``m = 0..M`` with tail mass beyond ``M`` below ``tol``."""
    hi = int(mean + 12.0 * np.sqrt(mean) + 60)
    ms = np.arange(hi + 1)
    tail = pdtrc(ms, mean)  # P(X > m)
    M = int(np.argmax(tail < tol)) if (tail < tol).any() else hi
    ms = ms[: M + 1]
    return np.exp(ms * np.log(mean) - mean - gammaln(ms + 1)) if mean > 0 else np.r_[1.0]


def expm_action(Q: IntensityMatrix, delta: float, X) -> np.ndarray:
    """Return ``X @ exp(delta Q)`` for a dense row block ``X`` (shape ``(r, K)``).

    Uses uniformization with ``eta = 1.05 max|q_kk|`` and sparse products
    only; intervals with ``eta * delta > 700`` are split via the semigroup
    property so that ``exp(-eta * delta)`` never underflows.
    """
    delta = float(delta)
    if not delta >= 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    X = np.array(X, dtype=float, ndmin=2)
    if X.shape[1] != Q.K:
        raise ValueError(f"row block has {X.shape[1]} columns, Q has K={Q.K}")
    rate = float(Q.exit_rates.max(initial=0.0))
    if delta == 0 or rate == 0:
        return X
    eta = UNIFORMIZATION_PAD * rate
    total = eta * delta
    n_chunks = 1 if total <= MAX_POISSON_MEAN else int(np.ceil(total / CHUNK_POISSON_MEAN))
    weights = _poisson_weights(total / n_chunks)
    # A = I + Q / eta, applied from the right as A^T @ Y with Y = X^T
    AT = (sp.identity(Q.K, format="csr") + Q.tocsr() / eta).T.tocsr()
    Y = X.T.copy()
    for _ in range(n_chunks):
        term = Y
        acc = weights[0] * term
        for w in weights[1:]:
            term = AT @ term
            acc += w * term
        Y = acc
    return Y.T


def expm(Q: IntensityMatrix, delta: float) -> TransitionMatrix:
    """Transition matrix ``P(delta) = exp(delta Q)`` by uniformization."""
    P = expm_action(Q, delta, np.eye(Q.K))
    # absorb the neglected tail mass and rounding drift of long products
    P /= P.sum(axis=1, keepdims=True)
    return TransitionMatrix(P=P, delta=float(delta))


# ---------------------------------------------------------------------------
# Event tables and simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class EventRecord:
    """One observed event.

    ``tau`` is the holding time since the previous event, ``t`` the absolute
    event time, ``i`` the mover (0 = nature), ``a`` the action, ``k`` and
    ``k_prime`` the states before and after (0-based).
    """

    tau: float
    i: int
    a: int
    k: int
    k_prime: int
    t: float = float("nan")


@dataclass(frozen=True, eq=False)
class EventTable:
    """Labelled competing-risk events available in each state.

    Stored row-compressed: the events of state ``k`` are entries
    ``indptr[k]:indptr[k+1]`` of ``rate``, ``target``, ``mover`` and
    ``action``.  Unlike ``Q``, an event table may contain events that leave
    the state unchanged (e.g. replacing a new engine).
    """

    indptr: np.ndarray
    rate: np.ndarray
    target: np.ndarray
    mover: np.ndarray
    action: np.ndarray

    @property
    def K(self) -> int:
        return len(self.indptr) - 1

    @classmethod
    def from_lists(cls, K, state, rate, target, mover, action) -> "EventTable":
        state, rate, target, mover, action = (np.asarray(x) for x in (state, rate, target, mover, action))
        keep = rate > 0
        state, rate, target, mover, action = (x[keep] for x in (state, rate, target, mover, action))
        order = np.lexsort((action, mover, state))
        state, rate, target, mover, action = (x[order] for x in (state, rate, target, mover, action))
        indptr = np.zeros(K + 1, dtype=np.int64)
        np.add.at(indptr, state + 1, 1)
        return cls(np.cumsum(indptr), rate.astype(float), target.astype(np.int64),
                   mover.astype(np.int64), action.astype(np.int64))

    @classmethod
    def from_intensity(cls, Q: IntensityMatrix) -> "EventTable":
        """Unlabelled table: every jump attributed to mover 0, action 0."""
        off = Q.offdiag.tocoo()
        zeros = np.zeros(off.nnz, dtype=np.int64)
        return cls.from_lists(Q.K, off.row, off.data, off.col, zeros, zeros)

    @classmethod
    def from_game(cls, Q0: IntensityMatrix, cmap: ContinuationMap, hazards) -> "EventTable":
        """Labelled table from nature's ``Q0`` and player hazards ``h[i, j, k]``.

        Movers are numbered ``1..N`` and choices ``j >= 1`` are recorded as
        actions; continuation (``j = 0``) is not an event.
        """
        hazards = np.asarray(hazards, dtype=float)
        N, J, K = cmap.shape
        off = Q0.offdiag.tocoo()
        st, rt, tg, mv, ac = [off.row], [off.data], [off.col], [np.zeros(off.nnz, int)], [np.zeros(off.nnz, int)]
        ks = np.arange(K)
        for i in range(N):
            for j in range(1, J):
                st.append(ks)
                rt.append(hazards[i, j])
                tg.append(cmap.table[i, j])
                mv.append(np.full(K, i + 1))
                ac.append(np.full(K, j))
        return cls.from_lists(K, *(np.concatenate(x) for x in (st, rt, tg, mv, ac)))

    def total_rates(self) -> np.ndarray:
        state = np.repeat(np.arange(self.K), np.diff(self.indptr))
        return np.bincount(state, weights=self.rate, minlength=self.K)

    def intensity(self) -> IntensityMatrix:
        """Intensity matrix implied by the table (self-loops dropped)."""
        K = self.K
        state = np.repeat(np.arange(K), np.diff(self.indptr))
        return IntensityMatrix(sp.csr_matrix((self.rate, (state, self.target)), shape=(K, K)))


def simulate(Q: IntensityMatrix, k0: int, T: float, seed=None, attribution=None,
             max_events: int | None = None) -> list:
    """Simulate a trajectory on ``[0, T]`` by the Gillespie algorithm.

    Parameters
    ----------
    Q : IntensityMatrix
        Generator used when ``attribution`` is not given.
    k0 : int
        Initial state (0-based).
    T : float
        Horizon; the final spell is censored at ``T``.
    seed : int, Generator or None
        Seed or generator; results are deterministic given a seed.
    attribution : EventTable or tuple, optional
        Either an :class:`EventTable` or a tuple ``(cmap, hazards)`` used
        with ``Q`` decomposed as nature's part.  Each event is labelled with
        its mover and action.  In the tuple form ``Q`` must be nature's
        ``Q0``.
    max_events : int, optional
        Stop after this many events (the horizon is then the last event).

    Returns
    -------
    list of EventRecord
    """
    if attribution is None:
        table = EventTable.from_intensity(Q)
    elif isinstance(attribution, EventTable):
        table = attribution
    else:
        cmap, hazards = attribution[-2], attribution[-1]
        table = EventTable.from_game(Q, cmap, hazards)
    K = table.K
    if not 0 <= int(k0) < K:
        raise ValueError(f"initial state {state_label(k0)} outside 1..{K}")
    if not T >= 0:
        raise ValueError(f"horizon must be nonnegative, got {T}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    totals = table.total_rates()
    cum = np.zeros_like(table.rate)
    for k in range(K):
        a, b = table.indptr[k], table.indptr[k + 1]
        cum[a:b] = np.cumsum(table.rate[a:b])
    events = []
    k, t = int(k0), 0.0
    limit = np.inf if max_events is None else max_events
    while len(events) < limit:
        q = totals[k]
        if q <= 0:
            break
        tau = rng.exponential(1.0 / q)
        if t + tau > T:
            break
        t += tau
        a, b = table.indptr[k], table.indptr[k + 1]
        n = a + int(np.searchsorted(cum[a:b], rng.random() * q, side="right"))
        n = min(n, b - 1)
        kp = int(table.target[n])
        events.append(EventRecord(tau, int(table.mover[n]), int(table.action[n]), k, kp, t))
        k = kp
    return events


def sample_discrete(events, k0: int, delta: float, T: float) -> list:
    """States at ``0, delta, ..., floor(T/delta) delta`` of a right-continuous path."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    taus = np.array([e.tau for e in events], dtype=float)
    if len(events) and taus.min() < 0:
        raise DataError("events are not time-ordered (negative holding time)")
    times = np.array([e.t for e in events], dtype=float)
    if not np.all(np.isfinite(times)):
        times = np.cumsum(taus)
    if np.any(np.diff(times) < 0):
        raise DataError("events are not time-ordered")
    states = np.r_[int(k0), [e.k_prime for e in events]].astype(np.int64)
    grid = np.arange(int(np.floor(T / delta + 1e-12)) + 1) * delta
    idx = np.searchsorted(times, grid, side="right")
    return states[idx].tolist()


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class EventSample:
    """Continuous-time event data for several markets.

    Attributes
    ----------
    markets : list of (k0, T, events)
        Initial state, observation horizon and event list per market.
    market_ids : list
        Market labels in the same order.
    """

    markets: list
    market_ids: list = field(default=None)

    def __post_init__(self):
        if self.market_ids is None:
            self.market_ids = list(range(1, len(self.markets) + 1))

    @property
    def n_events(self) -> int:
        return sum(len(ev) for _, _, ev in self.markets)

    def arrays(self):
        """Concatenated ``(tau, mover, action, k, k_prime)`` arrays."""
        ev = [e for _, _, evs in self.markets for e in evs]
        if not ev:
            z = np.empty(0, dtype=np.int64)
            return np.empty(0), z, z, z, z
        tau = np.fromiter((e.tau for e in ev), float, len(ev))
        i = np.fromiter((e.i for e in ev), np.int64, len(ev))
        a = np.fromiter((e.a for e in ev), np.int64, len(ev))
        k = np.fromiter((e.k for e in ev), np.int64, len(ev))
        kp = np.fromiter((e.k_prime for e in ev), np.int64, len(ev))
        return tau, i, a, k, kp

    def to_panel(self, delta: float) -> "PanelSample":
        paths = [np.asarray(sample_discrete(ev, k0, delta, T)) for k0, T, ev in self.markets]
        return PanelSample(paths=paths, delta=float(delta), market_ids=list(self.market_ids))


@dataclass(eq=False)
class PanelSample:
    """Equispaced state observations (0-based states) per market."""

    paths: list
    delta: float
    market_ids: list = field(default=None)

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        self.paths = [np.asarray(p, dtype=np.int64) for p in self.paths]
        if self.market_ids is None:
            self.market_ids = list(range(1, len(self.paths) + 1))

    def transition_counts(self, K: int) -> sp.csr_matrix:
        """Sparse ``K x K`` matrix of observed one-period transitions."""
        src = np.concatenate([p[:-1] for p in self.paths]) if self.paths else np.empty(0, int)
        dst = np.concatenate([p[1:] for p in self.paths]) if self.paths else np.empty(0, int)
        if len(src) and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= K):
            raise DataError(f"panel state outside 1..{K}")
        return sp.csr_matrix((np.ones(len(src)), (src, dst)), shape=(K, K))


def simulate_markets(Q, k0, T, M, root_seed, attribution=None, key=(), max_events=None) -> EventSample:
    """Simulate ``M`` independent markets; market ``m`` uses stream ``key + (m,)``."""
    table = attribution
    if attribution is not None and not isinstance(attribution, EventTable):
        table = EventTable.from_game(Q, attribution[-2], attribution[-1])
    markets = []
    for m in range(M):
        rng = spawn_rng(root_seed, *key, m)
        ev = simulate(Q, k0, T, rng, table, max_events=max_events)
        horizon = ev[-1].t if (max_events is not None and len(ev) >= max_events) else T
        markets.append((int(k0), float(horizon), ev))
    return EventSample(markets)
