"""Command-line entry point.

Usage::

    ctgames [solve|simulate|estimate|identify|mc] --config run.yaml [--out DIR] [--seed N]
            [--threads N] [--quiet]

The command may be given on the command line or in the config.  Every run
writes ``manifest.json`` (config digest, root seed, artifacts, versions,
wall time) to the output directory.

Exit codes: 0 success, 2 config error, 3 data error, 4 convergence
failure, 5 estimation failure, 6 identification or model-structure
error, 1 anything else.
"""

from __future__ import annotations

import argparse
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import COMMANDS, RunConfig, parse_config
from .dataio import (read_events, read_panel, write_events, write_intensity, write_json, write_panel,
                     write_solution)
from .errors import (ConfigError, ConvergenceError, CTGamesError, DataError, EstimationError,
                     IdentificationError, InversionDomainError, ModelStructureError)

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_CONVERGENCE, EXIT_ESTIMATION, EXIT_IDENTIFICATION = range(7)

log = logging.getLogger("ctgames")


class Run:
    """Output directory, artifact list and console printing for one invocation."""

    def __init__(self, cfg: RunConfig, out: Path, quiet: bool):
        self.cfg = cfg
        self.out = out
        self.quiet = quiet
        self.artifacts = []
        self.t0 = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def say(self, msg: str = ""):
        if not self.quiet:
            print(msg)

    def manifest(self, status: str, extra=None):
        import scipy

        info = {
            "command": self.cfg.command,
            "status": status,
            "config": self.cfg.source,
            "config_sha256": self.cfg.digest,
            "root_seed": self.cfg.seed,
            "threads": self.cfg.threads,
            "settings": self.cfg.to_dict(),
            "artifacts": self.artifacts,
            "wall_time": time.perf_counter() - self.t0,
            "versions": {"ctgames": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__},
        }
        info.update(extra or {})
        write_json(self.out / "manifest.json", info)


def _family(cfg: RunConfig):
    from .models import make_family

    return make_family(cfg.family, **cfg.model)


def _solve(cfg, fam):
    kw = {"tol": cfg.solver["tol"], "max_iter": cfg.solver["max_iter"]}
    if cfg.solver["method"]:
        kw["method"] = cfg.solver["method"]
    return fam.solve(cfg.theta, use_cache=False, **kw)


def aligned(rows, header) -> str:
    """Plain-text table with right-aligned columns."""
    cells = [list(map(str, header))] + [[c if isinstance(c, str) else f"{c:.4f}" if isinstance(c, float) else str(c)
                                         for c in r] for r in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_solve(cfg: RunConfig, run: Run) -> int:
    fam = _family(cfg)
    sol = _solve(cfg, fam)
    write_solution(run.path("solution.csv"), sol)
    write_intensity(run.path("Q.csv"), sol.Q)
    summary = {"model": cfg.family, "theta": cfg.theta, "states": sol.Q.K, "iterations": sol.iterations,
               "residual": sol.residual, "method": sol.method, "wall_time": sol.elapsed,
               "Q_nonzero_offdiag": sol.Q.nnz_offdiag}
    write_json(run.path("summary.json"), summary)
    run.say(f"solved {cfg.family} with {sol.Q.K} states: {sol.iterations} iterations, "
            f"residual {sol.residual:.3e}, {sol.elapsed:.2f} s, {sol.Q.nnz_offdiag} nonzero off-diagonals")
    run.manifest("ok", {"summary": summary})
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, run: Run) -> int:
    fam = _family(cfg)
    sim = cfg.simulate
    data = fam.simulate(cfg.theta, sim["markets"], sim["horizon"], cfg.seed, max_events=sim["max_events"])
    write_events(run.path("events.csv"), data)
    msg = f"simulated {sim['markets']} markets, {data.n_events} events"
    if sim["sampling"] != "continuous":
        panel = data.to_panel(sim["sampling"])
        write_panel(run.path("panel.csv"), panel)
        msg += f", panel at delta={sim['sampling']:g}"
    run.say(msg)
    run.manifest("ok", {"events": data.n_events})
    return EXIT_OK


def _load_data(cfg, fam):
    K = fam.n_states
    if cfg.data["sampling"] == "continuous":
        return "ct", read_events(cfg.data["path"], K)
    panel = read_panel(cfg.data["path"], K)
    if abs(panel.delta - cfg.data["sampling"]) > 1e-12 * max(1.0, panel.delta):
        raise DataError(f"{cfg.data['path']}: delta={panel.delta} disagrees with configured sampling "
                        f"{cfg.data['sampling']}")
    return "dt", panel


def _fit(cfg, fam, kind, data):
    from .estimation import fit, standard_errors

    est = cfg.estimate
    res = fit(kind, fam, data, n_starts=est["n_starts"], seed=cfg.seed, optimizer_cfg={"maxiter": est["maxiter"]},
              center=cfg.theta, fixed=est["fixed"], free=est["free"])
    if est["standard_errors"]:
        standard_errors(res, kind, data, fam)
    return res


def cmd_estimate(cfg: RunConfig, run: Run) -> int:
    from .estimation import lr_test

    fam = _family(cfg)
    kind, data = _load_data(cfg, fam)
    res = _fit(cfg, fam, kind, data)
    out = res.to_dict()
    rows = [(n, float(v), float(s) if res.se is not None else float("nan"))
            for n, v, s in zip(res.theta_hat.names, res.theta_hat.values,
                               res.se if res.se is not None else [np.nan] * len(res.theta_hat.values))]
    run.say(aligned(rows, ["parameter", "estimate", "se"]))
    run.say(f"log-likelihood {res.loglik:.4f} ({res.n_obs} observations)")
    if res.se_flag:
        run.say(f"standard errors unavailable: {res.se_flag}")
    if cfg.estimate["compare"]:
        other_cfg = parse_config(cfg.estimate["compare"])
        other_fam = _family(other_cfg)
        other = _fit(other_cfg, other_fam, kind, data)
        restricted, unrestricted = (other, res) if len(other.theta_hat.names) < len(res.theta_hat.names) else (res, other)
        stat, p = lr_test(restricted, unrestricted, cfg.estimate["df"])
        out["lr_test"] = {"statistic": stat, "df": cfg.estimate["df"], "p_value": p,
                          "restricted_loglik": restricted.loglik, "unrestricted_loglik": unrestricted.loglik,
                          "compare": other.to_dict()}
        run.say(f"LR = {stat:.4f}, df = {cfg.estimate['df']}, p = {p:.4g}")
    write_json(run.path("fit.json"), out)
    with open(run.path("starts.csv"), "w") as fh:
        fh.write("start,converged,loglik,iterations,evaluations\n")
        for n, s in enumerate(res.starts, start=1):
            fh.write(f"{n},{int(s.converged)},{s.loglik!r},{s.iterations},{s.evaluations}\n")
    run.manifest("ok", {"loglik": res.loglik})
    return EXIT_OK


def _identify_hazards(spec, sol, player, source):
    """Choice hazards ``h_ij(k)`` for ``j >= 1``; NaN where not observed."""
    N, J, K = spec.cmap.shape
    if source == "equilibrium":
        return spec.lam[player][None, :] * np.asarray(sol.sigma[player])[1:]
    from .jumpprocess import decompose

    Qi = decompose(sol.Q, spec.space, spec.cmap, spec.nature_pattern)[player + 1].offdiag.tocsr()
    hp = np.full((J - 1, K), np.nan)
    ks = np.arange(K)
    for j in range(1, J):
        tgt = spec.cmap.table[player, j]
        move = tgt != ks
        hp[j - 1, move] = np.asarray(Qi[ks[move], tgt[move]]).ravel()
    return hp


def cmd_identify(cfg: RunConfig, run: Run) -> int:
    from .identification import identification_report, standard_restrictions

    fam = _family(cfg)
    spec = fam.build(cfg.theta)
    if not hasattr(spec, "cmap"):
        raise ModelStructureError(f"identification requires a product-space game; {cfg.family} is not supported")
    sol = _solve(cfg, fam)
    idc = cfg.identify
    player = idc["player"] - 1
    N, J, K = spec.cmap.shape
    if player >= N:
        raise ConfigError(f"identify.player: player {idc['player']} outside 1..{N}")
    hp = _identify_hazards(spec, sol, player, idc["hazards"])
    parts = []
    if idc["psi_constant"]:
        parts.append(standard_restrictions("psi_constant", None, K, J))
    groups = idc["lambda_groups"]
    if groups is None:
        groups = _default_groups(cfg, K)
    if groups:
        parts.append(standard_restrictions("lambda_constant_groups", [[s - 1 for s in g] for g in groups], K, J))
    if idc["value_pins"]:
        parts.append(standard_restrictions("value_zero_states", [p["state"] - 1 for p in idc["value_pins"]], K, J,
                                           values=[p["value"] for p in idc["value_pins"]]))
    if idc["value_pairs"]:
        parts.append(standard_restrictions("value_exclusion_pairs",
                                           [(p["states"][0] - 1, p["states"][1] - 1) for p in idc["value_pairs"]],
                                           K, J, values=[p["value"] for p in idc["value_pairs"]]))
    if not parts:
        raise ConfigError("identify: no restrictions configured")
    R = parts[0]
    for p in parts[1:]:
        R = R + p
    report = identification_report(spec, player, hp, R, delta=idc["delta"])
    write_json(run.path("identification.json"), report)
    run.say(f"player {player + 1}: {report['restrictions']} restrictions, rank {report['rank']}/{report['unknowns']}, "
            f"nullity {report['nullity']}, zero restrictions {report['zero_restrictions']}")
    run.manifest("ok", {"rank_ok": report["rank_ok"]})
    return EXIT_OK if report["rank_ok"] else EXIT_IDENTIFICATION


def _default_groups(cfg, K):
    if cfg.family == "renewal":
        if cfg.model.get("homogeneous"):
            return [list(range(1, K + 1))]
        half = K // 2
        return [list(range(1, half + 1)), list(range(half + 1, K + 1))]
    if cfg.family == "entry" and cfg.model.get("lambda_mode", "firm") == "firm":
        return [list(range(1, K + 1))]
    return []


def cmd_mc(cfg: RunConfig, run: Run) -> int:
    from .estimation import MCDesign, mc_run

    fam = _family(cfg)
    mc = cfg.mc
    schemes = tuple("ct" if s == "continuous" else s for s in mc["schemes"])
    design = MCDesign(family=fam, truth=cfg.theta, M=mc["markets"], T=mc["horizon"], schemes=schemes,
                      replications=mc["replications"], root_seed=cfg.seed, n_starts=mc["n_starts"],
                      max_events=mc["max_events"], workers=cfg.threads)
    summary = mc_run(design)
    summary.to_csv(run.path("mc_summary.csv"))
    names = list(dict.fromkeys(r[1] for r in summary.rows))
    truth = fam.theta_dict(cfg.theta)
    derived = fam.derived(truth)
    tab = summary.table()
    rows = [["true", "DGP"] + [float(truth.get(n, derived.get(n, np.nan))) for n in names]]
    for lab in summary.schemes:
        rows.append([lab, "mean"] + [tab[(lab, n)][0] for n in names])
        rows.append(["", "sd"] + [tab[(lab, n)][1] for n in names])
    text = aligned(rows, ["scheme", ""] + names)
    (run.path("mc_summary.txt")).write_text(text + "\n")
    run.say(text)
    total = design.replications * len(schemes)
    failed = sum(summary.failures.values())
    run.say(f"{failed} of {total} fits failed; {summary.elapsed:.1f} s")
    frac = failed / total
    status = "ok" if frac <= mc["max_failure_fraction"] else "too many failures"
    run.manifest(status, {"failures": summary.failures, "data_sizes": summary.data_sizes})
    return EXIT_OK if frac <= mc["max_failure_fraction"] else EXIT_ESTIMATION


COMMAND_FUNCS = {"solve": cmd_solve, "simulate": cmd_simulate, "estimate": cmd_estimate,
                 "identify": cmd_identify, "mc": cmd_mc}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctgames", description="Continuous-time dynamic discrete games: "
                                "solve, simulate, estimate, identify and Monte Carlo.")
    p.add_argument("command", nargs="?", choices=COMMANDS, help="overrides the command in the config")
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="root seed (overrides config)")
    p.add_argument("--threads", type=int, help="worker processes for Monte Carlo replications")
    p.add_argument("--quiet", action="store_true", help="suppress console output")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        overrides = {"command": args.command, "output": args.out, "seed": args.seed, "threads": args.threads}
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = Run(cfg, Path(cfg.output), args.quiet)
    codes = [
        (ConfigError, EXIT_CONFIG, "config error"),
        (DataError, EXIT_DATA, "data error"),
        (ConvergenceError, EXIT_CONVERGENCE, "convergence failure"),
        (EstimationError, EXIT_ESTIMATION, "estimation failure"),
        ((IdentificationError, ModelStructureError, InversionDomainError), EXIT_IDENTIFICATION,
         "identification error"),
    ]
    try:
        return COMMAND_FUNCS[cfg.command](cfg, run)
    except CTGamesError as exc:
        for types, code, label in codes:
            if isinstance(exc, types):
                break
        else:
            code, label = EXIT_OTHER, "error"
        print(f"{label}: {exc}", file=sys.stderr)
        extra = {"error": str(exc)}
        if isinstance(exc, ConvergenceError):
            extra.update(residual=exc.residual, iterations=exc.iterations)
        if isinstance(exc, EstimationError):
            extra["starts"] = [s.__dict__ if hasattr(s, "__dict__") else s for s in exc.starts]
        run.manifest(label, extra)
        return code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        run.manifest("error", {"error": str(exc)})
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
