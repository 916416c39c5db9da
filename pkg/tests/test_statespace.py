import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctgames.errors import ModelStructureError, SizingError
from ctgames.models.entry import entry_map, entry_space
from ctgames.models.renewal import renewal_map
from ctgames.statespace import (ContinuationMap, StateSpace, build_ladder_space, build_product_space,
                                compositions, continuation_state, ladder_state_count, state_label)

# published state counts of the quality ladder at omega_bar = 7
LADDER_K = {2: 56, 4: 840, 6: 5_544, 8: 24_024, 10: 80_080, 12: 222_768, 14: 542_640,
            16: 1_193_808, 18: 2_422_728, 20: 4_604_600, 22: 8_288_280}


def test_state_label_is_one_based():
    assert state_label(0) == 1
    assert state_label(89) == 90


class TestProductSpace:
    def test_entry_layout(self):
        space = build_product_space(2, 2, 2)
        assert space.K == 8
        # player 1 varies fastest, exogenous component slowest
        got = [(space.decode_game(k)[1], space.decode_game(k)[0]) for k in range(8)]
        want = [((0, 0), 0), ((1, 0), 0), ((0, 1), 0), ((1, 1), 0),
                ((0, 0), 1), ((1, 0), 1), ((0, 1), 1), ((1, 1), 1)]
        assert got == want

    def test_single_state(self):
        space = build_product_space(1, 1, 1)
        assert space.K == 1
        assert space.decode(0) == (0, 0)

    def test_round_trip_exhaustive(self):
        space = build_product_space(3, 4, 2)
        assert space.K == 48
        for t in itertools.product(range(3), range(4), range(4)):
            assert space.decode(space.encode(t)) == t
        for k in range(48):
            assert space.encode(space.decode(k)) == k

    def test_player_accessors(self):
        space = build_product_space(2, 3, 3)
        k = space.encode_game(1, (2, 0, 1))
        assert space.exogenous_state(k) == 1
        assert [space.player_state(k, i) for i in range(3)] == [2, 0, 1]

    def test_invalid_counts(self):
        with pytest.raises(ValueError):
            build_product_space(0, 2, 2)
        with pytest.raises(ValueError):
            StateSpace(factors=(("x", 0),))

    def test_overflow_is_sizing_error(self):
        with pytest.raises(SizingError):
            build_product_space(2, 10, 40)

    def test_decode_out_of_range_is_one_based(self):
        space = build_product_space(2, 2, 2)
        with pytest.raises(ValueError, match="state 9 outside 1..8"):
            space.decode(8)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.data())
    def test_round_trip_property(self, K0, K1, N, data):
        space = build_product_space(K0, K1, N)
        assert space.K == K0 * K1 ** N
        k = data.draw(st.integers(0, space.K - 1))
        assert space.encode(space.decode(k)) == k


class TestLadderSpace:
    @pytest.mark.parametrize("N,K", [(2, 56), (4, 840)])
    def test_small_counts(self, N, K):
        assert build_ladder_space(N, 7).K == K

    @pytest.mark.parametrize("N,K", sorted(LADDER_K.items()))
    def test_published_counts(self, N, K):
        assert ladder_state_count(N, 7) == K

    def test_enumerated_count_matches_formula(self):
        assert build_ladder_space(14, 7).K == 542_640

    def test_binomial_formula_up_to_30(self):
        for N in range(1, 31):
            assert ladder_state_count(N, 7) == 7 * comb(N - 1 + 7, 7)

    def test_rival_configuration_count(self):
        for N in range(1, 6):
            space = build_ladder_space(N, 7)
            cfg = space.rival_configs
            assert len(cfg) == comb(N - 1 + 7, 7)
            assert np.all(cfg.sum(axis=1) == N - 1)
            assert len({tuple(r) for r in cfg}) == len(cfg)

    def test_encode_decode_exhaustive(self):
        space = build_ladder_space(4, 7)
        k = np.arange(space.K)
        own, rivals = space.decode(k)
        assert np.array_equal(space.encode(own, rivals), k)

    def test_colex_order_is_stable(self):
        c = compositions(2, 3)
        assert c[0].tolist() == [2, 0, 0]
        assert c[-1].tolist() == [0, 0, 2]
        assert np.array_equal(c, compositions(2, 3))

    def test_budget(self):
        with pytest.raises(SizingError):
            build_ladder_space(14, 7, max_states=100_000)

    def test_invalid(self):
        with pytest.raises(ValueError):
            build_ladder_space(0, 7)


class TestContinuationMap:
    def test_renewal_reset(self):
        cmap = renewal_map(90)
        assert continuation_state(cmap, 0, 1, 36) == 0
        assert continuation_state(cmap, 0, 0, 36) == 36

    def test_entry_toggle(self):
        space, cmap = entry_space(), entry_map()
        k = space.encode_game(1, (0, 0))
        assert space.decode_game(continuation_state(cmap, 0, 1, k)) == (1, (1, 0))

    def test_costless_continuation_for_all(self):
        cmap = entry_map()
        N, J, K = cmap.shape
        for i in range(N):
            for k in range(K):
                assert continuation_state(cmap, i, 0, k) == k

    def test_index_errors(self):
        cmap = entry_map()
        for args in ((2, 0, 0), (0, 2, 0), (0, 0, 8)):
            with pytest.raises(ValueError):
                continuation_state(cmap, *args)

    def test_rejects_bad_continuation(self):
        table = np.array([[[1, 0], [0, 1]]])
        with pytest.raises(ModelStructureError, match="costless continuation"):
            ContinuationMap(table)

    def test_rejects_staying_action(self):
        table = np.array([[[0, 1], [0, 0]]])
        with pytest.raises(ModelStructureError, match="distinct actions"):
            ContinuationMap(table)

    def test_rejects_duplicate_targets(self):
        table = np.array([[[0, 1, 2], [1, 2, 0], [1, 0, 0]]])
        with pytest.raises(ModelStructureError, match="distinct actions"):
            ContinuationMap(table)

    def test_noop_allows_self_reset(self):
        cmap = renewal_map(5)
        assert cmap.noop[0, 1, 0]
        assert not cmap.moves(0)[1, 0]
