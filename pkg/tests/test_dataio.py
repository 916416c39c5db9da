import json

import numpy as np
import pytest

from ctgames.dataio import (read_events, read_intensity, read_panel, write_events, write_intensity, write_json,
                            write_panel, write_solution)
from ctgames.errors import DataError
from ctgames.jumpprocess import EventRecord, EventSample, PanelSample, simulate_markets


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestEvents:
    def test_round_trip(self, tmp_path, entry_game, entry_solution):
        data = simulate_markets(entry_solution.Q, 0, 30.0, 4, root_seed=1, attribution=entry_solution.events)
        p = tmp_path / "events.csv"
        write_events(p, data)
        back = read_events(p, K=8)
        assert back.market_ids == [str(m) for m in data.market_ids]
        for (k0, T, ev), (k0b, Tb, evb) in zip(data.markets, back.markets):
            assert (k0, T) == (k0b, Tb)
            assert [(e.i, e.a, e.k, e.k_prime) for e in ev] == [(e.i, e.a, e.k, e.k_prime) for e in evb]
            assert np.allclose([e.tau for e in ev], [e.tau for e in evb], rtol=1e-12)

    def test_window_defaults(self, tmp_path):
        p = write(tmp_path, "e.csv", "market_id,t,player,action,state_from,state_to\n1,1.0,1,1,2,1\n")
        (k0, T, ev), = read_events(p).markets
        assert k0 == 1 and T == 1.0 and ev[0].k_prime == 0

    def test_global_horizon(self, tmp_path):
        p = write(tmp_path, "e.csv", "# T=10\nmarket_id,t,player,action,state_from,state_to\n1,1.0,0,0,1,2\n")
        assert read_events(p).markets[0][1] == 10.0

    def test_market_without_events(self, tmp_path):
        p = write(tmp_path, "e.csv", "# market=7 k0=3 T=5\nmarket_id,t,player,action,state_from,state_to\n")
        assert read_events(p).markets == [(2, 5.0, [])]

    @pytest.mark.parametrize("body,msg", [
        ("1,1.0,0,0,1,9\n", "line 2: state_to 9 outside 1..8"),
        ("1,abc,0,0,1,2\n", "line 2: column 't'"),
        ("1,2.0,0,0,1,2\n1,1.0,0,0,2,1\n", "line 3: event time"),
        ("1,1.0,0,0,1,2\n1,2.0,0,0,3,1\n", "line 3: state_from 3 does not continue"),
        ("1,1.0,0,0\n", "line 2: expected 6 fields"),
        ("1,1.0,-1,0,1,2\n", "nonnegative"),
    ])
    def test_errors_name_the_line(self, tmp_path, body, msg):
        p = write(tmp_path, "e.csv", "market_id,t,player,action,state_from,state_to\n" + body)
        with pytest.raises(DataError, match=msg):
            read_events(p, K=8)

    def test_bad_header(self, tmp_path):
        p = write(tmp_path, "e.csv", "market,t\n")
        with pytest.raises(DataError, match="header"):
            read_events(p)

    def test_horizon_before_last_event(self, tmp_path):
        p = write(tmp_path, "e.csv", "# T=0.5\nmarket_id,t,player,action,state_from,state_to\n1,1.0,0,0,1,2\n")
        with pytest.raises(DataError, match="precedes"):
            read_events(p)


class TestPanel:
    def test_round_trip(self, tmp_path):
        data = PanelSample([np.array([0, 1, 1, 4]), np.array([2, 2])], 8.0, ["a", "b"])
        p = tmp_path / "panel.csv"
        write_panel(p, data)
        back = read_panel(p, K=5)
        assert back.delta == 8.0
        assert back.market_ids == ["a", "b"]
        assert all(np.array_equal(x, y) for x, y in zip(back.paths, data.paths))

    def test_missing_delta(self, tmp_path):
        p = write(tmp_path, "p.csv", "market_id,period,state\n1,0,1\n")
        with pytest.raises(DataError, match="delta"):
            read_panel(p)

    def test_gap_in_periods(self, tmp_path):
        p = write(tmp_path, "p.csv", "# delta=1\nmarket_id,period,state\n1,0,1\n1,2,1\n")
        with pytest.raises(DataError, match="line 4: period 2"):
            read_panel(p)

    def test_state_range(self, tmp_path):
        p = write(tmp_path, "p.csv", "# delta=1\nmarket_id,period,state\n1,0,0\n")
        with pytest.raises(DataError, match="line 3: state 0"):
            read_panel(p)

    def test_nonpositive_delta(self, tmp_path):
        p = write(tmp_path, "p.csv", "# delta=0\nmarket_id,period,state\n")
        with pytest.raises(DataError, match="positive"):
            read_panel(p)


class TestOutputs:
    def test_intensity_round_trip(self, tmp_path, renewal_solution):
        p = tmp_path / "Q.csv"
        write_intensity(p, renewal_solution.Q)
        Q = read_intensity(p)
        assert Q.K == 90 and Q.nnz_offdiag == 178
        assert np.array_equal(Q.toarray(), renewal_solution.Q.toarray())

    def test_solution_dump(self, tmp_path, entry_solution):
        p = tmp_path / "solution.csv"
        write_solution(p, entry_solution)
        lines = p.read_text().splitlines()
        assert lines[0] == "state,player,choice,sigma,h,V"
        assert len(lines) == 1 + 8 * 2 * 2
        first = lines[1].split(",")
        assert first[:3] == ["1", "1", "0"]

    def test_json_numpy(self, tmp_path):
        p = tmp_path / "x.json"
        write_json(p, {"a": np.arange(3), "b": np.float64(1.5), "c": np.int64(2), "d": (1, 2)})
        assert json.loads(p.read_text()) == {"a": [0, 1, 2], "b": 1.5, "c": 2, "d": [1, 2]}

    def test_event_sample_counts(self):
        data = EventSample([(0, 2.0, [EventRecord(1.0, 0, 0, 0, 1, 1.0)]), (1, 1.0, [])])
        assert data.n_events == 1
