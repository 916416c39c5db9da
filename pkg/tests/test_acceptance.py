"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` or directly as a script;
the collected lines are printed in the terminal summary.  Criterion 9
needs the bus-engine panel: point ``CTGAMES_BUS_PANEL`` at a panel CSV
(``market_id,period,state`` with ``# delta=1``) to enable it.
"""

import os
import sys
import time
from fractions import Fraction
from pathlib import Path

import mpmath
import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import ACCEPTANCE_LINES, random_intensity  # noqa: E402
from ctgames.dataio import read_panel  # noqa: E402
from ctgames.equilibrium import best_response_ccp, solve_equilibrium  # noqa: E402
from ctgames.estimation import (EPS_D, GRAD_STEP_SCALE, MCDesign, Objective, ParameterVector, fit,  # noqa: E402
                                lr_from_statistic, lr_test, mc_run, standard_errors)
from ctgames.identification import (build_hazard_system, count_zero_restrictions, order_condition,  # noqa: E402
                                    recover_flow_payoffs, solve_identification, standard_restrictions)
from ctgames.jumpprocess import IntensityMatrix, aggregate, decompose, expm, simulate  # noqa: E402
from ctgames.models import make_family  # noqa: E402
from ctgames.models.entry import TRUTH as ENTRY_TRUTH, entry_build  # noqa: E402
from ctgames.models.ladder import LadderFamily, ladder_profits  # noqa: E402
from ctgames.models.renewal import TRUTH as RENEWAL_TRUTH, RenewalFamily, renewal_build  # noqa: E402

slow = pytest.mark.slow

RENEWAL_NAMES = ("lambda_L", "lambda_H", "gamma", "beta", "mu")
# published Monte Carlo means and standard deviations, M=200 markets, 100 replications
RENEWAL_MC = {
    "ct": ((0.050, 0.100, 0.500, -2.050, -9.178), (0.007, 0.008, 0.004, 0.310, 1.096)),
    "dt1": ((0.051, 0.100, 0.508, -2.079, -9.235), (0.007, 0.008, 0.004, 0.317, 1.117)),
    "dt8": ((0.051, 0.100, 0.508, -2.093, -9.284), (0.009, 0.009, 0.005, 0.374, 1.281)),
}
LADDER_TRUTH = (1.0, 1.2, 0.4, 0.8, 4.0, 0.9)
LADDER_SD = (0.015, 0.020, 0.010, 0.032, 0.137, 0.021)
# bus-engine fits: (estimates, standard errors, log-likelihood)
BUS_FITS = {
    "fixed": ({"gamma": 0.526, "beta": -0.533, "mu": -8.081}, {"gamma": 0.006, "beta": 0.052, "mu": 0.393}, -13947.55),
    "variable": ({"lambda": 0.032, "gamma": 0.526, "beta": -1.257, "mu": -8.072},
                 {"lambda": 0.005, "gamma": 0.006, "beta": 0.285, "mu": 1.345}, -13938.51),
    "heterogeneous": ({"lambda_L": 0.022, "lambda_H": 0.033, "gamma": 0.526, "beta": -1.711, "mu": -9.643},
                      {"lambda_L": 0.004, "lambda_H": 0.005, "gamma": 0.006, "beta": 0.493, "mu": 2.189}, -13937.66),
}


def record(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# ---------------------------------------------------------------------------
# 1. Renewal Monte Carlo
# ---------------------------------------------------------------------------

@slow
def test_criterion_1_renewal_monte_carlo():
    fam = RenewalFamily(K=90)
    design = MCDesign(fam, RENEWAL_TRUTH, M=200, T=120.0, schemes=("ct", 1.0, 8.0), replications=25,
                      root_seed=20240601, n_starts=1)
    summary = mc_run(design)
    tab = summary.table()
    misses, parts = [], []
    for scheme, (means, sds) in RENEWAL_MC.items():
        for name, ref, sd in zip(RENEWAL_NAMES, means, sds):
            got = tab[(scheme, name)][0]
            if not abs(got - ref) <= 0.6 * sd:
                misses.append(f"{scheme}.{name} {got:.4f} vs {ref} (tol {0.6 * sd:.4f})")
        ratio = tab[(scheme, "mu/beta")][0]
        parts.append(f"{scheme} mu/beta={ratio:.3f}")
        if not abs(ratio - 4.5) <= 0.15:
            misses.append(f"{scheme}.mu/beta {ratio:.3f}")
    failures = sum(summary.failures.values())
    ok = not misses and failures == 0
    detail = f"25 reps in {summary.elapsed:.0f} s, {failures} failed fits; {', '.join(parts)}"
    if misses:
        detail += "; outside tolerance: " + "; ".join(misses)
    assert record(1, ok, detail)


# ---------------------------------------------------------------------------
# 2. Matrix exponential against a high-precision Taylor oracle
# ---------------------------------------------------------------------------

def taylor_oracle(A, deltas, terms=200, dps=40):
    """``exp(delta A)`` for each delta from one shared 200-term series at ``dps`` digits."""
    with mpmath.workdps(dps):
        K = A.shape[0]
        M = mpmath.matrix(A.tolist())
        term = mpmath.eye(K)
        sums = [mpmath.eye(K) for _ in deltas]
        scale = [mpmath.mpf(1)] * len(deltas)
        for n in range(1, terms):
            term = term * M / n
            for j, d in enumerate(deltas):
                scale[j] *= mpmath.mpf(d)
                sums[j] += term * scale[j]
        return [np.array(S.tolist(), dtype=float) for S in sums]


def test_criterion_2_expm_oracle():
    rng = np.random.default_rng(2)
    deltas = (0.1, 1.0, 8.0)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(50):
        K = int(rng.integers(2, 21))
        A = random_intensity(rng, K, density=rng.uniform(0.2, 1.0))
        exit_max = A.sum(axis=1).max()
        if exit_max == 0:
            A[0, 1] = 1.0
            exit_max = 1.0
        # keep delta * max exit rate at most 40 so the series stays well conditioned
        A *= rng.uniform(0.1, 5.0) / exit_max
        Q = IntensityMatrix(A)
        oracle = taylor_oracle(Q.toarray(), deltas)
        for d, ref in zip(deltas, oracle):
            err = np.abs(expm(Q, d).P - ref).max() / np.abs(ref).max()
            worst = max(worst, err)
    a, b = 0.3, 0.7
    two = IntensityMatrix(np.array([[0.0, a], [b, 0.0]]))
    worst2 = 0.0
    for d in (0.1, 1.0, 8.0, 100.0):
        s, e = a + b, np.exp(-(a + b) * d)
        P = np.array([[(b + a * e) / s, a * (1 - e) / s], [b * (1 - e) / s, (a + b * e) / s]])
        worst2 = max(worst2, np.abs(expm(two, d).P - P).max())
    ok = worst <= 1e-10 and worst2 <= 1e-12
    assert record(2, ok, f"max relative error {worst:.2e} over 150 cases (tol 1e-10); "
                         f"two-state closed form {worst2:.2e} (tol 1e-12); {time.perf_counter() - t0:.0f} s")


# ---------------------------------------------------------------------------
# 3. Linear value representation against value iteration
# ---------------------------------------------------------------------------

def test_criterion_3_linear_representation():
    out = []
    ok = True
    games = [("renewal", renewal_build(RENEWAL_TRUTH)), ("entry", entry_build(ENTRY_TRUTH))]
    lad = LadderFamily(N=2)
    games.append(("ladder N=2", lad.build(lad.truth)))
    for name, game in games:
        sol = solve_equilibrium(game, method="vfi", tol=1e-13)
        lin = game.value_linear(sol.sigma)
        err = max(np.abs(a - b).max() for a, b in zip(lin, sol.V))
        out.append(f"{name} {err:.1e}")
        ok &= err <= 1e-8
    assert record(3, ok, "sup |V_linear - V_vfi|: " + ", ".join(out) + " (tol 1e-8)")


# ---------------------------------------------------------------------------
# 4. Identification round trip
# ---------------------------------------------------------------------------

def _q_hazards(game, sol, player):
    part = decompose(sol.Q, game.space, game.cmap, game.nature_pattern)[player + 1].offdiag.tocsr()
    ks = np.arange(game.K)
    tgt = game.cmap.table[player, 1]
    h = np.full((1, game.K), np.nan)
    move = tgt != ks
    h[0, move] = np.asarray(part[ks[move], tgt[move]]).ravel()
    return h


def _restrictions(K, groups, pins, V):
    return (standard_restrictions("psi_constant", None, K, 2)
            + standard_restrictions("lambda_constant_groups", groups, K, 2)
            + standard_restrictions("value_zero_states", pins, K, 2, values=V[pins]))


def _round_trip(game, sol, player, hazards, groups, pins):
    V = sol.V[player]
    system = build_hazard_system(game.space, game.cmap, player, hazards)
    res = solve_identification(system, _restrictions(game.K, groups, pins, V))
    if not res.rank_ok:
        return False, f"rank {res.rank}/{res.n_unknowns}"
    h_true = game.lam[player] * sol.sigma[player][0]
    err = max(np.abs(res.h0 - h_true).max(), np.abs(res.psi - game.psi[player][1:]).max(), np.abs(res.V - V).max())
    sigma = [res.sigma(hazards) if i == player else sol.sigma[i] for i in range(len(sol.sigma))]
    u = recover_flow_payoffs(game, player, res.V, res.psi, sigma)
    uerr = np.abs(u - game.u[player]).max()
    return err <= 1e-8 and uerr <= 1e-6, f"(h0, psi, V) err {err:.1e}, u err {uerr:.1e}"


def test_criterion_4_identification_round_trip():
    ren = renewal_build(RENEWAL_TRUTH)
    rsol = solve_equilibrium(ren, method="policy")
    ent = entry_build(ENTRY_TRUTH)
    esol = solve_equilibrium(ent)
    halves = [range(45), range(45, 90)]
    # as specified: hazards read off Q, two value pins
    lit_r, why_r = _round_trip(ren, rsol, 0, _q_hazards(ren, rsol, 0), halves, [0, 89])
    lit_e = [_round_trip(ent, esol, i, _q_hazards(ent, esol, i), [range(8)], [0, 4]) for i in range(2)]
    literal = lit_r and all(ok for ok, _ in lit_e)
    # smallest restriction sets that do identify: all choice hazards, three pins (renewal) or four (entry)
    eq_r = ren.lam[0][None] * rsol.sigma[0][1:]
    var_r = _round_trip(ren, rsol, 0, eq_r, halves, [0, 1, 89])
    var_e = [_round_trip(ent, esol, i, ent.lam[i][None] * esol.sigma[i][1:], [range(8)], pins)
             for i, pins in ((0, [0, 2, 4, 6]), (1, [0, 1, 4, 5]))]
    detail = (f"literal pipeline (Q hazards, 2 pins): renewal {why_r}, entry {lit_e[0][1]} / {lit_e[1][1]}; "
              f"with full hazards and 3/4 pins: renewal {var_r[1]}, entry {var_e[0][1]} / {var_e[1][1]} "
              f"[{'ok' if var_r[0] and all(v[0] for v in var_e) else 'failed'}]")
    assert record(4, literal, detail)


# ---------------------------------------------------------------------------
# 5. Order condition and zero counts
# ---------------------------------------------------------------------------

def test_criterion_5_order_condition():
    ok_entry, margin = order_condition(2, 2, 2, 2)
    rng = np.random.default_rng(5)
    held = 0
    binary_margin_negative = 0
    for _ in range(10_000):
        K0, K1, N = int(rng.integers(1, 11)), int(rng.integers(2, 11)), int(rng.integers(2, 11))
        held += Fraction(K0 * (K1**N - 1)) >= Fraction(N) - Fraction(1, 2)
        binary_margin_negative += order_condition(K0, K1, N, 2)[1] < 0
    ren = renewal_build(RENEWAL_TRUTH)
    zeros = count_zero_restrictions(ren.space, ren.cmap, ren.Q0).zeros
    ok = ok_entry and margin == Fraction(5, 2) and held == 10_000 and zeros == 7832
    assert record(5, ok, f"entry margin {margin} ({'>= 0' if ok_entry else '< 0'}); binary corollary held on "
                         f"{held}/10000 probes; renewal zeros {zeros}; general margin with J=2 negative on "
                         f"{binary_margin_negative} probes (K0=1, K1=2, N=2 type)")


# ---------------------------------------------------------------------------
# 6. Likelihood-ratio machinery
# ---------------------------------------------------------------------------

@slow
def test_criterion_6_likelihood_ratio():
    p1, p2 = lr_from_statistic(18.08, 1), lr_from_statistic(1.70, 1)
    ok_p1 = abs(p1 - 2e-5) <= 0.05 * 2e-5
    ok_p = ok_p1 and abs(p2 - 0.1923) <= 0.05 * 0.1923
    tied = RenewalFamily(K=90, homogeneous=True)
    free = RenewalFamily(K=90)
    worst = np.inf
    for r in range(20):
        data = free.simulate(RENEWAL_TRUTH, 50, 120.0, root_seed=606, key=(r,))
        restricted = fit("ct", tied, data, n_starts=1, center={"lambda": 0.075, "gamma": 0.5, "beta": -2.0, "mu": -9.0})
        th = restricted.theta_hat.as_dict()
        start = {"lambda_L": th["lambda"], "lambda_H": th["lambda"], "gamma": th["gamma"], "beta": th["beta"],
                 "mu": th["mu"]}
        unrestricted = fit("ct", free, data, n_starts=1, center=start)
        stat, _ = lr_test(restricted, unrestricted, 1, tol=np.inf)
        worst = min(worst, stat)
    ok = ok_p and worst >= -1e-6
    note = "" if ok_p1 else (f" (off 2e-5 by {abs(p1 / 2e-5 - 1):.1%}; the reference is printed as "
                             f"{round(p1, 5):.5f}, which this value matches to that precision)")
    assert record(6, ok, f"p(18.08)={p1:.3e}{note}, p(1.70)={p2:.4f}; min LR over 20 nested pairs {worst:.2e}")


# ---------------------------------------------------------------------------
# 7. Quality ladder pricing and Monte Carlo
# ---------------------------------------------------------------------------

@slow
def test_criterion_7_ladder():
    foc = max(ladder_profits(N, c=5.0, return_residual=True)[1].max() for N in range(1, 7))
    fam = LadderFamily(N=2)
    design = MCDesign(fam, fam.truth, M=1, T=np.inf, max_events=10_000, schemes=("ct",), replications=10,
                      root_seed=7, n_starts=1)
    summary = mc_run(design)
    tab = summary.table()
    misses, means = [], []
    for name, truth, sd in zip(fam.param_names, LADDER_TRUTH, LADDER_SD):
        m = tab[("ct", name)][0]
        means.append(f"{name}={m:.3f}")
        if not abs(m - truth) <= 2 * sd:
            misses.append(name)
    ok = foc < 1e-12 and not misses and summary.failures["ct"] == 0
    detail = f"FOC residual {foc:.1e} for N<=6; CT means {', '.join(means)}; {summary.elapsed:.0f} s"
    if misses:
        detail += "; outside 2 SD: " + ", ".join(misses)
    assert record(7, ok, detail)


# ---------------------------------------------------------------------------
# 8. Scaling
# ---------------------------------------------------------------------------

def test_criterion_8_ladder_scaling():
    t0 = time.perf_counter()
    fam = LadderFamily(N=8)
    sol = fam.solve(fam.truth, use_cache=False)
    elapsed = time.perf_counter() - t0
    ok = fam.tables.K == 24_024 and elapsed < 60
    assert record(8, ok, f"N=8, K={fam.tables.K}: {sol.iterations} iterations, {elapsed:.1f} s including setup")


# ---------------------------------------------------------------------------
# 9. Bus-engine panel (conditional)
# ---------------------------------------------------------------------------

def test_criterion_9_bus_panel():
    path = os.environ.get("CTGAMES_BUS_PANEL")
    if not path:
        ACCEPTANCE_LINES.append("CRITERION 9: SKIPPED set CTGAMES_BUS_PANEL to a bus-engine panel CSV to run")
        pytest.skip("bus-engine panel not supplied")
    panel = read_panel(path, K=90)
    specs = {
        "fixed": (make_family("renewal", K=90, homogeneous=True), {"lambda": 1.0}),
        "variable": (make_family("renewal", K=90, homogeneous=True), {}),
        "heterogeneous": (make_family("renewal", K=90), {}),
    }
    out, ok = [], True
    for key, (fam, fixed) in specs.items():
        est, se_ref, ll_ref = BUS_FITS[key]
        res = fit("dt", fam, panel, n_starts=3, center=est, fixed=fixed)
        standard_errors(res, "dt", panel, fam)
        th = res.theta_hat.as_dict()
        bad = [n for n in est if not abs(th[n] - est[n]) <= 2 * se_ref[n]]
        good_ll = abs(res.loglik - ll_ref) <= 0.5
        ok &= not bad and good_ll
        out.append(f"{key} LL {res.loglik:.2f}" + (f" off: {','.join(bad)}" if bad else ""))
    assert record(9, ok, f"{panel.n_transitions if hasattr(panel, 'n_transitions') else ''} " + "; ".join(out))


# ---------------------------------------------------------------------------
# 10. Property suite
# ---------------------------------------------------------------------------

def test_criterion_10_properties():
    rng = np.random.default_rng(10)
    checks = {}
    # intensity row sums
    checks["row sums"] = all(
        np.abs(IntensityMatrix(random_intensity(rng, int(rng.integers(1, 30)), scale=10.0)).toarray().sum(axis=1)).max()
        < 1e-12 for _ in range(200))
    # CCP simplex
    ok = True
    for _ in range(200):
        J, K = int(rng.integers(2, 6)), int(rng.integers(1, 20))
        s = best_response_ccp(rng.normal(0, 50, (J, K)), rng.normal(0, 50, (J, K)))
        ok &= bool(np.all(s >= 0) and np.all(s <= 1) and np.abs(s.sum(axis=0) - 1).max() < 1e-12)
    checks["CCP simplex"] = ok
    # expm semigroup
    ok = True
    for _ in range(50):
        Q = IntensityMatrix(random_intensity(rng, int(rng.integers(2, 15))))
        s, t = rng.uniform(0.05, 3.0, 2)
        ok &= np.abs(expm(Q, s + t).P - expm(Q, s).P @ expm(Q, t).P).max() < 1e-10
    checks["expm semigroup"] = bool(ok)
    # simulate determinism
    ren = renewal_build(RENEWAL_TRUTH)
    rsol = solve_equilibrium(ren, method="policy")
    checks["simulate determinism"] = (simulate(rsol.Q, 0, 500.0, seed=3) == simulate(rsol.Q, 0, 500.0, seed=3)
                                      and simulate(rsol.Q, 0, 500.0, seed=3) != simulate(rsol.Q, 0, 500.0, seed=4))
    # decompose of aggregate
    ent = entry_build(ENTRY_TRUTH)
    ok = True
    for _ in range(50):
        h = rng.uniform(0.01, 5.0, (2, 8))
        parts = [ent.Q0] + [IntensityMatrix(ent.player_part(m, np.stack([1 - h[m] / 10, h[m] / 10]))) for m in range(2)]
        back = decompose(aggregate(parts), ent.space, ent.cmap, ent.nature_pattern)
        ok &= all(np.abs(a.toarray() - b.toarray()).max() <= 1e-15 for a, b in zip(parts, back))
    checks["decompose of aggregate"] = bool(ok)
    # finite-difference gradient against a ten times finer step
    fam = RenewalFamily(K=90)
    data = fam.simulate(RENEWAL_TRUTH, 50, 120.0, root_seed=10)
    pv = ParameterVector.for_family(fam)
    obj = Objective(fam, "ct", data, pv)
    z = pv.to_z()
    g = obj.gradient(z)
    fine = np.zeros_like(z)
    for i in range(len(z)):
        h = GRAD_STEP_SCALE * EPS_D ** (1 / 3) * max(abs(z[i]), 1.0) / 10
        e = np.zeros_like(z)
        e[i] = h
        fine[i] = (obj(z + e) - obj(z - e)) / (2 * h)
    rel = np.linalg.norm(g - fine) / np.linalg.norm(fine)
    checks["gradient step ratio 10"] = bool(rel <= 1e-4)
    failed = [k for k, v in checks.items() if not v]
    assert record(10, not failed, f"{len(checks) - len(failed)}/{len(checks)} properties hold"
                  + (f"; failed: {', '.join(failed)}" if failed else f" (gradient rel diff {rel:.1e})"))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
