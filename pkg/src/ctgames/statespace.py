"""Finite encoded state spaces and deterministic continuation maps.

Indexing convention
-------------------
The Python API indexes states, players and choices from zero so that they can
be used directly as numpy indices.  Every user-facing surface (CSV files,
CLI output, exception messages) reports states as ``1..K``.  Use
:func:`state_label` when formatting a state for a human.

Product spaces are ordered with the exogenous factor outermost
(slowest-varying) and players ``1..N`` innermost, player 1 fastest.  For the
2x2x2 entry game this reproduces the listing
``(0,0,L), (1,0,L), (0,1,L), (1,1,L), (0,0,H), ...``.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from math import comb, prod

import numpy as np

from .errors import ModelStructureError, SizingError

#: Upper bound on the number of encoded states that will be enumerated.
DEFAULT_MAX_STATES = 20_000_000


def state_label(k: int) -> int:
    """Return the 1-based label for internal state index ``k``."""
    return int(k) + 1


@dataclass(frozen=True)
class StateSpace:
    """Finite state space with product (factor) structure.

    Parameters
    ----------
    factors : tuple of (str, int)
        Factor names and cardinalities, outermost first.  For a game the
        first factor is the exogenous component and the remaining ones are
        the player components listed from player ``N`` down to player 1.
    n_players : int
        Number of strategic players ``N``.
    n_choices : int
        Number of choices ``J`` per player (including continuation).
    """

    factors: tuple
    n_players: int = 1
    n_choices: int = 2

    def __post_init__(self):
        for name, card in self.factors:
            if card < 1:
                raise ValueError(f"factor {name!r} must have cardinality >= 1, got {card}")
        if prod(card for _, card in self.factors) > sys.maxsize:
            raise SizingError("state count exceeds the platform index range")

    @property
    def K(self) -> int:
        return prod(card for _, card in self.factors)

    @property
    def dims(self) -> tuple:
        return tuple(card for _, card in self.factors)

    def encode(self, values) -> int:
        """Map a factor tuple (outermost first) to its state index."""
        values = tuple(int(v) for v in values)
        if len(values) != len(self.factors):
            raise ValueError(f"expected {len(self.factors)} factor values, got {len(values)}")
        for v, (name, card) in zip(values, self.factors):
            if not 0 <= v < card:
                raise ValueError(f"factor {name!r} value {v} outside 0..{card - 1}")
        return int(np.ravel_multi_index(values, self.dims))

    def decode(self, k: int) -> tuple:
        """Map a state index to its factor tuple (outermost first)."""
        if not 0 <= int(k) < self.K:
            raise ValueError(f"state {state_label(k)} outside 1..{self.K}")
        return tuple(int(v) for v in np.unravel_index(int(k), self.dims))

    def table(self) -> np.ndarray:
        """Return the ``K x len(factors)`` array of decoded factor tuples."""
        return np.stack(np.unravel_index(np.arange(self.K), self.dims), axis=1)


@dataclass(frozen=True)
class GameStateSpace(StateSpace):
    """Product space ``X_0 x X_1 x ... x X_N`` for an N-player game.

    ``player_state(k, i)`` and ``exogenous_state(k)`` give the components
    without the caller needing to know the factor order.
    """

    def exogenous_state(self, k: int) -> int:
        return self.decode(k)[0]

    def player_state(self, k: int, i: int) -> int:
        # factors are (x0, xN, ..., x1)
        return self.decode(k)[self.n_players - i]

    def encode_game(self, x0: int, players) -> int:
        """Encode ``(x0, x_1, ..., x_N)`` given players in natural order."""
        players = list(players)
        if len(players) != self.n_players:
            raise ValueError(f"expected {self.n_players} player components, got {len(players)}")
        return self.encode((x0, *reversed(players)))

    def decode_game(self, k: int) -> tuple:
        """Return ``(x0, (x_1, ..., x_N))`` for state ``k``."""
        t = self.decode(k)
        return t[0], tuple(reversed(t[1:]))


def build_product_space(K0: int, K1: int, N: int, J: int = 2) -> GameStateSpace:
    """Build the product state space with ``K = K0 * K1**N`` states.

    The exogenous component is slowest-varying; player 1 is fastest.
    """
    if K0 < 1 or K1 < 1 or N < 1:
        raise ValueError(f"need K0, K1, N >= 1, got K0={K0}, K1={K1}, N={N}")
    if J < 1:
        raise ValueError(f"need J >= 1, got {J}")
    if K0 * K1**N > sys.maxsize:
        raise SizingError(f"K = {K0}*{K1}^{N} exceeds the platform index range")
    factors = (("x0", K0),) + tuple((f"x{i}", K1) for i in range(N, 0, -1))
    return GameStateSpace(factors=factors, n_players=N, n_choices=J)


@dataclass(frozen=True, eq=False)
class ContinuationMap:
    """Deterministic continuation states ``l(i, j, k)``.

    Parameters
    ----------
    table : ndarray of int, shape (N, J, K)
        ``table[i, j, k]`` is the state reached when player ``i`` chooses
        ``j`` in state ``k``.
    noop : ndarray of bool, shape (N, J, K), optional
        Marks choices ``j >= 1`` that are allowed to leave the state
        unchanged (e.g. replacing an engine that is already new).  Such
        actions are observationally equivalent to continuation in ``Q`` and
        their hazards are not recoverable from it.  All other choices must
        satisfy costless continuation and distinct actions.
    """

    table: np.ndarray
    noop: np.ndarray = field(default=None)

    def __post_init__(self):
        table = np.asarray(self.table, dtype=np.int64)
        if table.ndim != 3:
            raise ValueError("continuation table must have shape (N, J, K)")
        N, J, K = table.shape
        if table.min(initial=0) < 0 or table.max(initial=0) >= K:
            raise ValueError(f"continuation states must lie in 1..{K}")
        noop = np.zeros(table.shape, dtype=bool) if self.noop is None else np.asarray(self.noop, dtype=bool)
        if noop.shape != table.shape:
            raise ValueError("noop mask must match the continuation table shape")
        if noop[:, 0, :].any():
            raise ValueError("choice 0 is continuation by definition and cannot be marked noop")
        ks = np.arange(K)
        if not (table[:, 0, :] == ks).all():
            i, k = np.argwhere(table[:, 0, :] != ks)[0]
            raise ModelStructureError(
                f"costless continuation violated: l({i + 1},0,{state_label(k)}) != {state_label(k)}")
        stays = table == ks[None, None, :]
        bad = stays & ~noop
        bad[:, 0, :] = False
        if bad.any():
            i, j, k = np.argwhere(bad)[0]
            raise ModelStructureError(
                f"distinct actions violated: l({i + 1},{j},{state_label(k)}) equals the current state")
        if noop.any() and not stays[noop].all():
            raise ModelStructureError("a choice marked noop changes the state")
        # distinct targets among state-changing choices
        for i in range(N):
            moving = table[i].copy()
            moving[stays[i]] = -1
            srt = np.sort(moving, axis=0)
            dup = (srt[1:] == srt[:-1]) & (srt[1:] >= 0)
            if dup.any():
                k = int(np.argwhere(dup)[0][1])
                raise ModelStructureError(
                    f"distinct actions violated for player {i + 1} in state {state_label(k)}")
        table.setflags(write=False)
        noop.setflags(write=False)
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "noop", noop)

    @property
    def shape(self):
        return self.table.shape

    def moves(self, i: int) -> np.ndarray:
        """Boolean mask ``(J, K)`` of choices of player ``i`` that change the state."""
        return self.table[i] != np.arange(self.table.shape[2])[None, :]


def continuation_state(cmap: ContinuationMap, i: int, j: int, k: int) -> int:
    """Return ``l(i, j, k)``; raises ``ValueError`` on out-of-range indices."""
    N, J, K = cmap.shape
    if not 0 <= i < N:
        raise ValueError(f"player {i + 1} outside 1..{N}")
    if not 0 <= j < J:
        raise ValueError(f"choice {j} outside 0..{J - 1}")
    if not 0 <= k < K:
        raise ValueError(f"state {state_label(k)} outside 1..{K}")
    return int(cmap.table[i, j, k])


# ---------------------------------------------------------------------------
# Anonymous quality-ladder encoding
# ---------------------------------------------------------------------------

def n_compositions(total: int, bins: int) -> int:
    """Number of nonnegative integer tuples of length ``bins`` summing to ``total``."""
    return comb(total + bins - 1, bins - 1)


def compositions(total: int, bins: int) -> np.ndarray:
    """All length-``bins`` nonnegative tuples summing to ``total``, colex order.

    Colexicographic order compares tuples from the last coordinate, so
    ``(total, 0, ..., 0)`` comes first and ``(0, ..., 0, total)`` last.
    """
    if bins == 1:
        return np.array([[total]], dtype=np.int64)
    rows = []
    # last coordinate is the most significant in colex order
    for last in range(total + 1):
        head = compositions(total - last, bins - 1)
        tail = np.full((head.shape[0], 1), last, dtype=np.int64)
        rows.append(np.hstack([head, tail]))
    return np.vstack(rows)


def _colex_keys(tuples: np.ndarray, base: int) -> np.ndarray:
    weights = base ** np.arange(tuples.shape[-1], dtype=np.int64)
    return tuples @ weights


@dataclass(frozen=True, eq=False)
class AnonymousLadderSpace:
    """Firm-perspective encoding ``(own quality, rival distribution)``.

    Own quality ranges over ``1..omega_bar`` (incumbents only).  The rival
    distribution counts the other ``N - 1`` firms over the ``omega_bar + 1``
    rungs, the last rung being the inactive state.  State index is
    ``(own - 1) * n_rival_configs + rival_rank`` with rival configurations
    in colex order.

    The market configurations (all ``N`` firms over ``omega_bar + 1`` rungs)
    are enumerated the same way and index the observable jump process.
    """

    N: int
    omega_bar: int
    max_states: int = DEFAULT_MAX_STATES

    def __post_init__(self):
        if self.N < 1 or self.omega_bar < 1:
            raise ValueError(f"need N >= 1 and omega_bar >= 1, got N={self.N}, omega_bar={self.omega_bar}")
        if self.K > self.max_states:
            raise SizingError(f"ladder space with N={self.N}, omega_bar={self.omega_bar} has "
                              f"K={self.K:,} states, above the budget of {self.max_states:,}")
        rivals = compositions(self.N - 1, self.omega_bar + 1)
        markets = compositions(self.N, self.omega_bar + 1)
        object.__setattr__(self, "rival_configs", rivals)
        object.__setattr__(self, "market_configs", markets)
        object.__setattr__(self, "_rival_keys", _colex_keys(rivals, self.N + 1))
        object.__setattr__(self, "_market_keys", _colex_keys(markets, self.N + 1))

    @property
    def n_bins(self) -> int:
        return self.omega_bar + 1

    @property
    def inactive(self) -> int:
        """Rung of inactive firms (1-based quality scale)."""
        return self.omega_bar + 1

    @property
    def n_rival_configs(self) -> int:
        return n_compositions(self.N - 1, self.omega_bar + 1)

    @property
    def n_market_configs(self) -> int:
        return n_compositions(self.N, self.omega_bar + 1)

    @property
    def K(self) -> int:
        return self.omega_bar * self.n_rival_configs

    def rival_rank(self, rivals) -> np.ndarray:
        """Colex rank of rival distribution(s); ``rivals[..., omega_bar+1]``."""
        keys = _colex_keys(np.asarray(rivals, dtype=np.int64), self.N + 1)
        idx = np.searchsorted(self._rival_keys, keys)
        return idx

    def market_rank(self, markets) -> np.ndarray:
        keys = _colex_keys(np.asarray(markets, dtype=np.int64), self.N + 1)
        return np.searchsorted(self._market_keys, keys)

    def encode(self, own, rivals) -> np.ndarray:
        """State index for own quality ``own`` (1-based rung) and rival counts."""
        own = np.asarray(own, dtype=np.int64)
        if np.any((own < 1) | (own > self.omega_bar)):
            raise ValueError(f"own quality must lie in 1..{self.omega_bar}")
        return (own - 1) * self.n_rival_configs + self.rival_rank(rivals)

    def decode(self, k):
        """Return ``(own, rivals)`` for state index ``k``."""
        k = np.asarray(k, dtype=np.int64)
        if np.any((k < 0) | (k >= self.K)):
            raise ValueError(f"state outside 1..{self.K}")
        own, r = np.divmod(k, self.n_rival_configs)
        return own + 1, self.rival_configs[r]


def build_ladder_space(N: int, omega_bar: int, max_states: int = DEFAULT_MAX_STATES) -> AnonymousLadderSpace:
    """Build the anonymous quality-ladder space.

    ``K = omega_bar * C(N - 1 + omega_bar, omega_bar)``; raises
    :class:`SizingError` when ``K`` exceeds ``max_states``.
    """
    return AnonymousLadderSpace(N=N, omega_bar=omega_bar, max_states=max_states)


def ladder_state_count(N: int, omega_bar: int) -> int:
    """Closed-form ``K`` without enumerating the space."""
    if N < 1 or omega_bar < 1:
        raise ValueError("need N >= 1 and omega_bar >= 1")
    return omega_bar * comb(N - 1 + omega_bar, omega_bar)
