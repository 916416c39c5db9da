"""CSV and JSON readers and writers for event data, panels and solutions.

All files use 1-based states.  Event CSV::

    # T=120
    market_id,t,player,action,state_from,state_to
    1,3.2,0,0,1,2

``t`` is the absolute event time and ``player`` 0 is nature.  Optional
comment lines ``# T=<horizon>`` (all markets) and
``# market=<id> k0=<state> T=<horizon>`` (one market) record the
observation window; without them a market starts in its first
``state_from`` and is observed until its last event.

Panel CSV::

    # delta=1
    market_id,period,state
    1,0,1

Periods of a market must be consecutive integers.
"""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np

from .errors import DataError
from .jumpprocess import EventRecord, EventSample, PanelSample

EVENT_HEADER = ["market_id", "t", "player", "action", "state_from", "state_to"]
PANEL_HEADER = ["market_id", "period", "state"]

_KV = re.compile(r"(\w+)\s*=\s*([^\s,]+)")


def _comments_and_rows(path):
    meta, rows = [], []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                meta.append((lineno, dict(_KV.findall(s[1:]))))
            else:
                rows.append((lineno, next(csv.reader([s]))))
    return meta, rows


def _check_header(rows, expected, path):
    if not rows:
        raise DataError(f"{path}: no header row")
    lineno, header = rows[0]
    if [h.strip() for h in header] != expected:
        raise DataError(f"{path}, line {lineno}: header must be {','.join(expected)}")
    return rows[1:]


def _parse(value, kind, path, lineno, column):
    try:
        out = kind(value)
    except ValueError:
        raise DataError(f"{path}, line {lineno}: column {column!r} has invalid value {value!r}") from None
    if kind is float and not np.isfinite(out):
        raise DataError(f"{path}, line {lineno}: column {column!r} must be finite")
    return out


def read_events(path, K: int | None = None) -> EventSample:
    """Read an event CSV into an :class:`EventSample` (0-based states).

    Raises
    ------
    DataError
        Naming the line of any malformed row, out-of-range state,
        decreasing time or broken state chain.
    """
    meta, rows = _comments_and_rows(path)
    rows = _check_header(rows, EVENT_HEADER, path)
    T_all = None
    per_market = {}
    for lineno, kv in meta:
        if "market" in kv:
            per_market[kv["market"]] = (lineno, kv)
        elif "T" in kv:
            T_all = _parse(kv["T"], float, path, lineno, "T")
    markets: dict = {}
    for lineno, row in rows:
        if len(row) != len(EVENT_HEADER):
            raise DataError(f"{path}, line {lineno}: expected {len(EVENT_HEADER)} fields, got {len(row)}")
        mid = row[0].strip()
        t = _parse(row[1], float, path, lineno, "t")
        i = _parse(row[2], int, path, lineno, "player")
        a = _parse(row[3], int, path, lineno, "action")
        k = _parse(row[4], int, path, lineno, "state_from")
        kp = _parse(row[5], int, path, lineno, "state_to")
        for name, s in (("state_from", k), ("state_to", kp)):
            if s < 1 or (K is not None and s > K):
                rng = f"1..{K}" if K is not None else ">= 1"
                raise DataError(f"{path}, line {lineno}: {name} {s} outside {rng}")
        if i < 0 or a < 0:
            raise DataError(f"{path}, line {lineno}: player and action must be nonnegative")
        markets.setdefault(mid, []).append((lineno, t, i, a, k - 1, kp - 1))
    for mid in per_market:
        markets.setdefault(mid, [])
    out, ids = [], []
    for mid, evs in markets.items():
        lineno_m, kv = per_market.get(mid, (None, {}))
        prev_t = 0.0
        k0 = None
        if "k0" in kv:
            k0 = _parse(kv["k0"], int, path, lineno_m, "k0") - 1
        elif evs:
            k0 = evs[0][4]
        else:
            raise DataError(f"{path}, line {lineno_m}: market {mid} has no events and no k0")
        cur = k0
        records = []
        for lineno, t, i, a, k, kp in evs:
            if t <= prev_t:
                raise DataError(f"{path}, line {lineno}: event time {t} not after previous time {prev_t}")
            if k != cur:
                raise DataError(f"{path}, line {lineno}: state_from {k + 1} does not continue from state {cur + 1}")
            records.append(EventRecord(t - prev_t, i, a, k, kp, t))
            prev_t, cur = t, kp
        if "T" in kv:
            T = _parse(kv["T"], float, path, lineno_m, "T")
        elif T_all is not None:
            T = T_all
        else:
            T = prev_t
        if T < prev_t:
            raise DataError(f"{path}: market {mid} horizon {T} precedes its last event at {prev_t}")
        out.append((int(k0), float(T), records))
        ids.append(mid)
    return EventSample(out, ids)


def write_events(path, data: EventSample):
    """Write an :class:`EventSample` with per-market window comments."""
    with open(path, "w", newline="") as fh:
        horizons = {T for _, T, _ in data.markets}
        if len(horizons) == 1:
            fh.write(f"# T={horizons.pop()!r}\n")
        for mid, (k0, T, _) in zip(data.market_ids, data.markets):
            fh.write(f"# market={mid} k0={k0 + 1} T={T!r}\n")
        w = csv.writer(fh)
        w.writerow(EVENT_HEADER)
        for mid, (_, _, events) in zip(data.market_ids, data.markets):
            for e in events:
                w.writerow([mid, repr(float(e.t)), e.i, e.a, e.k + 1, e.k_prime + 1])


def read_panel(path, K: int | None = None) -> PanelSample:
    """Read a panel CSV into a :class:`PanelSample` (0-based states)."""
    meta, rows = _comments_and_rows(path)
    rows = _check_header(rows, PANEL_HEADER, path)
    delta = None
    for lineno, kv in meta:
        if "delta" in kv:
            delta = _parse(kv["delta"], float, path, lineno, "delta")
            if not delta > 0:
                raise DataError(f"{path}, line {lineno}: delta must be positive")
    if delta is None:
        raise DataError(f"{path}: missing metadata line '# delta=<value>'")
    paths: dict = {}
    for lineno, row in rows:
        if len(row) != len(PANEL_HEADER):
            raise DataError(f"{path}, line {lineno}: expected {len(PANEL_HEADER)} fields, got {len(row)}")
        mid = row[0].strip()
        period = _parse(row[1], int, path, lineno, "period")
        state = _parse(row[2], int, path, lineno, "state")
        if state < 1 or (K is not None and state > K):
            rng = f"1..{K}" if K is not None else ">= 1"
            raise DataError(f"{path}, line {lineno}: state {state} outside {rng}")
        seq = paths.setdefault(mid, [])
        if seq and period != seq[-1][0] + 1:
            raise DataError(f"{path}, line {lineno}: period {period} does not follow period {seq[-1][0]}")
        seq.append((period, state - 1))
    ids = list(paths)
    return PanelSample([np.array([s for _, s in paths[m]], dtype=np.int64) for m in ids], delta, ids)


def write_panel(path, data: PanelSample):
    with open(path, "w", newline="") as fh:
        fh.write(f"# delta={data.delta!r}\n")
        w = csv.writer(fh)
        w.writerow(PANEL_HEADER)
        for mid, p in zip(data.market_ids, data.paths):
            for n, s in enumerate(p):
                w.writerow([mid, n, int(s) + 1])


def write_solution(path, solution):
    """Equilibrium dump with columns ``state,player,choice,sigma,h,V``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "player", "choice", "sigma", "h", "V"])
        for r in solution.to_records():
            w.writerow([r["state"], r["player"], r["choice"], repr(r["sigma"]), repr(r["h"]), repr(r["V"])])


def write_intensity(path, Q):
    """Off-diagonal triplets ``from,to,rate`` (1-based) plus diagonal rows ``k,k,q_kk``."""
    off = Q.offdiag.tocoo()
    with open(path, "w", newline="") as fh:
        fh.write(f"# K={Q.K} nnz_offdiag={Q.nnz_offdiag}\n")
        w = csv.writer(fh)
        w.writerow(["from", "to", "rate"])
        order = np.lexsort((off.col, off.row))
        for n in order:
            w.writerow([off.row[n] + 1, off.col[n] + 1, repr(float(off.data[n]))])
        for k, d in enumerate(Q.diag):
            w.writerow([k + 1, k + 1, repr(float(d))])


def read_intensity(path):
    """Read a file written by :func:`write_intensity`."""
    import scipy.sparse as sp

    from .jumpprocess import IntensityMatrix

    meta, rows = _comments_and_rows(path)
    rows = _check_header(rows, ["from", "to", "rate"], path)
    K = None
    for lineno, kv in meta:
        if "K" in kv:
            K = _parse(kv["K"], int, path, lineno, "K")
    r, c, v = [], [], []
    for lineno, row in rows:
        a, b = _parse(row[0], int, path, lineno, "from"), _parse(row[1], int, path, lineno, "to")
        if a != b:
            r.append(a - 1)
            c.append(b - 1)
            v.append(_parse(row[2], float, path, lineno, "rate"))
    K = K if K is not None else (max(r + c) + 1 if r else 0)
    return IntensityMatrix(sp.csr_matrix((v, (r, c)), shape=(K, K)))


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (set, tuple)):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")
