"""Command-line interface.

Five commands: ``validate`` (admissibility gate), ``simulate`` (path CSV),
``solve`` (Dirichlet field CSV), ``verify`` (statistical suites), and
``moments`` (star moment tables).  All artifacts embed the run config and
seed, carry no timestamps, and regenerate byte-identically; ``--threads``
changes wall time only.

Exit codes: 0 success, 1 bad arguments or unparseable input files,
2 inadmissible complex, 3 simulation error, 4 solve error, 5 verification
failure (a failed statistical test exits 5 so CI pipelines catch it).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .complexes import (
    ComplexError,
    Polyhedron,
    bundled_complex,
    load_complex,
    sample_point,
    validate_admissible,
)
from .harmonic import BoundaryCondition, solve_dirichlet
from .operators import build_mesh, dirichlet_energy
from .process import (
    IsotropicConfig,
    path_rng,
    point_on_face,
    simulate_brownian,
    simulate_isotropic,
    substream,
    write_paths_csv,
)
from .verify import SUITES, TestReport, run_suite, walsh_moment_test

__all__ = ["main", "RunConfig"]

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_INADMISSIBLE = 2
EXIT_SIMULATION = 3
EXIT_SOLVE = 4
EXIT_VERIFY = 5


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARSE, f"{self.prog}: error: {message}\n")


def _grid_arg(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty grid")
    return vals


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines output file content.

    Worker count and output directory are deliberately absent: they must
    not influence a single emitted byte.
    """

    command: str
    complex: str | None = None
    bc: str | None = None
    seed: int = 0
    n: int | None = None
    eta: float | None = None
    step: float | None = None
    grid: tuple[float, ...] | None = None
    mesh_h: float | None = None
    level: float | None = None
    suite: str | None = None

    def as_dict(self) -> dict:
        d = {"command": self.command, "seed": self.seed}
        for k in ("complex", "bc", "n", "eta", "step", "grid", "mesh_h",
                  "level", "suite"):
            v = getattr(self, k)
            if v is not None:
                d[k] = list(v) if isinstance(v, tuple) else v
        return d


def _config_from_args(args) -> RunConfig:
    return RunConfig(
        command=args.command,
        complex=getattr(args, "complex", None),
        bc=getattr(args, "bc", None),
        seed=getattr(args, "seed", 0),
        n=getattr(args, "n", None),
        eta=getattr(args, "eta", None),
        step=getattr(args, "step", None),
        grid=getattr(args, "grid", None),
        mesh_h=getattr(args, "mesh_h", None),
        level=getattr(args, "level", None),
        suite=getattr(args, "suite", None),
    )


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj)!r}")


def _dump_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, default=_json_default) + "\n"


def _load_poly(spec: str) -> Polyhedron:
    """Resolve a complex argument: a JSON file path or a bundled name."""
    if os.path.exists(spec):
        return load_complex(spec)
    name = spec[:-5] if spec.endswith(".json") else spec
    return bundled_complex(name)


def _start_point(P: Polyhedron, seed: int):
    """Deterministic start: midpoint of the first singular face, else of
    the first interior face, else a volume-uniform draw."""
    for want in (3, 2):
        for f in P.faces:
            if len(P.adjacency[f.index]) >= want:
                return point_on_face(P, f.index, 0.5)
    return sample_point(P, substream(seed, 3, 0))


def _ensure_out(args) -> str:
    out = getattr(args, "out", ".") or "."
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args) -> int:
    try:
        P = _load_poly(args.complex)
    except (OSError, json.JSONDecodeError, ComplexError, ValueError, KeyError, TypeError) as e:
        print(f"error: cannot load complex: {e}", file=sys.stderr)
        return EXIT_PARSE
    rep = validate_admissible(P)
    print(rep.summary())
    if rep.passed:
        print(f"admissible: {P!r}")
        return EXIT_OK
    for tag, items in (("stray simplices", rep.stray_simplices),
                       ("isolated vertices", rep.isolated_vertices),
                       ("disconnected vertex stars", rep.star_failures)):
        if items:
            print(f"offending {tag}: {items}")
    if not rep.chainable:
        print(f"not chainable through codimension-one faces "
              f"({rep.components} components)")
    return EXIT_INADMISSIBLE


def cmd_simulate(args) -> int:
    cfg = _config_from_args(args)
    try:
        P = _load_poly(args.complex)
    except (OSError, json.JSONDecodeError, ComplexError, ValueError, KeyError, TypeError) as e:
        print(f"error: cannot load complex: {e}", file=sys.stderr)
        return EXIT_PARSE
    out = _ensure_out(args)
    grid = args.grid or (0.1,)
    horizon = grid[-1]
    p0 = _start_point(P, args.seed)
    try:
        samples = []
        for i in range(args.n):
            rng = path_rng(args.seed, i)
            if args.eta is not None:
                samples.append(simulate_isotropic(
                    P, p0, IsotropicConfig(eta=args.eta, horizon=horizon), rng))
            else:
                samples.append(simulate_brownian(
                    P, p0, args.step or 1e-3, horizon, rng))
    except Exception as e:
        print(f"error: simulation failed: {e}", file=sys.stderr)
        return EXIT_SIMULATION
    dest = os.path.join(out, "paths.csv")
    with open(dest, "w", encoding="utf-8") as fh:
        fh.write(f"# {_dump_json(cfg.as_dict())}")
        write_paths_csv(P, samples, fh)
    discarded = sum(s.discarded for s in samples)
    kind = "isotropic" if args.eta is not None else "gaussian-step"
    print(f"simulated {args.n} {kind} paths on {P!r} to t={horizon} "
          f"({discarded} discarded); wrote {dest}")
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = _config_from_args(args)
    try:
        P = _load_poly(args.complex)
        bc = BoundaryCondition.from_json(args.bc)
    except (OSError, json.JSONDecodeError, ComplexError) as e:
        print(f"error: cannot load inputs: {e}", file=sys.stderr)
        return EXIT_PARSE
    out = _ensure_out(args)
    try:
        mesh = build_mesh(P, args.mesh_h or 0.05)
        sol = solve_dirichlet(mesh, bc)
        energy = dirichlet_energy(mesh, sol.values)
    except Exception as e:
        print(f"error: solve failed: {e}", file=sys.stderr)
        return EXIT_SOLVE
    dest = os.path.join(out, "field.csv")
    ncols = ",".join(f"bary_{i + 1}" for i in range(P.dimension + 1))
    with open(dest, "w", encoding="utf-8") as fh:
        fh.write(f"# {_dump_json(cfg.as_dict())}")
        fh.write(f"node,kind,simplex_id,{ncols},value\n")
        for i in range(mesh.n_nodes):
            pt = mesh.node_point(i)
            bary = ",".join(f"{b:.17g}" for b in pt.bary)
            fh.write(f"{i},{mesh.node_kind[i]},{pt.simplex},{bary},"
                     f"{sol.values[i]:.17g}\n")
    print(f"solved: {mesh.n_nodes} nodes, h={mesh.spacing:.6g}, "
          f"energy={energy:.12g}; wrote {dest}")
    return EXIT_OK


def _emit_reports(reports: list[TestReport], cfg: RunConfig, out: str,
                  stem: str) -> tuple[str, str]:
    payload = {"config": cfg.as_dict(),
               "reports": [json.loads(r.to_json()) for r in reports]}
    jpath = os.path.join(out, f"{stem}.json")
    with open(jpath, "w", encoding="utf-8") as fh:
        fh.write(_dump_json(payload))
    tpath = os.path.join(out, f"{stem}.txt")
    with open(tpath, "w", encoding="utf-8") as fh:
        fh.write(f"# {_dump_json(cfg.as_dict())}")
        for r in reports:
            fh.write(r.summary() + "\n")
        verdict = "PASS" if all(r.decision for r in reports) else "FAIL"
        fh.write(f"overall: {verdict} ({sum(r.decision for r in reports)}"
                 f"/{len(reports)} passed)\n")
    return jpath, tpath


def _emit_plots(reports: list[TestReport], out: str) -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    for r in reports:
        if "estimates" in r.extras and r.config.get("grid"):
            fig, ax = plt.subplots(figsize=(5, 3.5))
            t = np.asarray(r.config["grid"], dtype=float)
            est = np.asarray(r.extras["estimates"], dtype=float)
            se = np.asarray(r.extras["stderrs"], dtype=float)
            ax.errorbar(t, est, yerr=2.576 * se, fmt="o-", capsize=3)
            ax.set_xlabel("t")
            ax.set_ylabel("stopped expectation")
            ax.set_title(r.name)
        elif "exact_sampler" in r.extras:
            fig, ax = plt.subplots(figsize=(5, 3.5))
            k = r.config["k"]
            xs = np.arange(k)
            m1 = r.extras["targets"]["restricted_mean"]
            e1 = [row["restricted_mean"] for row in r.extras["exact_sampler"]]
            w1 = [row["restricted_mean"] for row in r.extras["step_walk"]]
            ax.bar(xs - 0.15, e1, width=0.3, label="exact sampler")
            ax.bar(xs + 0.15, w1, width=0.3, label="step walk")
            ax.axhline(m1, color="k", ls="--", lw=1, label="closed form")
            ax.set_xlabel("branch")
            ax.set_ylabel("restricted mean")
            ax.set_title(r.name)
            ax.legend(fontsize=8)
        elif "occupation" in r.extras:
            fig, ax = plt.subplots(figsize=(5, 3.5))
            occ = r.extras["occupation"]
            eps = sorted(float(e) for e in occ)
            ax.loglog(eps, [occ[e] for e in eps], "o-", label="occupation")
            ref = [eps[0] ** -2 * occ[eps[0]] * e * e for e in eps]
            ax.loglog(eps, ref, "k--", lw=1, label="slope 2")
            ax.set_xlabel("neighborhood radius")
            ax.set_ylabel("mean occupation time")
            ax.set_title(r.name)
            ax.legend(fontsize=8)
        else:
            continue
        fig.tight_layout()
        dest = os.path.join(out, f"{r.name}.svg")
        fig.savefig(dest, metadata={"Date": None})
        plt.close(fig)
        written.append(dest)
    return written


def cmd_verify(args) -> int:
    cfg = _config_from_args(args)
    if args.complex is not None:
        try:
            _load_poly(args.complex)
        except (OSError, json.JSONDecodeError, ComplexError, ValueError, KeyError, TypeError) as e:
            print(f"error: cannot load complex: {e}", file=sys.stderr)
            return EXIT_PARSE
    out = _ensure_out(args)
    try:
        reports = run_suite(args.suite, args.seed,
                            level=args.level or 0.01, threads=args.threads)
    except Exception as e:
        print(f"error: verification failed to run: {e}", file=sys.stderr)
        return EXIT_VERIFY
    for r in reports:
        print(r.summary())
    jpath, tpath = _emit_reports(reports, cfg, out, f"verify_{args.suite}")
    print(f"wrote {jpath} and {tpath}")
    if args.plots:
        for dest in _emit_plots(reports, out):
            print(f"wrote {dest}")
    if all(r.decision for r in reports):
        return EXIT_OK
    print("verification FAILED", file=sys.stderr)
    return EXIT_VERIFY


def cmd_moments(args) -> int:
    cfg = _config_from_args(args)
    if args.complex is not None:
        try:
            P = _load_poly(args.complex)
        except (OSError, json.JSONDecodeError, ComplexError, ValueError, KeyError, TypeError) as e:
            print(f"error: cannot load complex: {e}", file=sys.stderr)
            return EXIT_PARSE
        k = max(len(P.adjacency[f.index]) for f in P.faces)
    else:
        k = 3
    grid = args.grid or (0.01,)
    n = args.n or 100_000
    try:
        reports = [
            walsh_moment_test(k, t, n, args.seed, threads=args.threads,
                              level=args.level or 0.01,
                              name=f"walsh_moments_k{k}_t{t}")
            for t in grid
        ]
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    for r in reports:
        print(r.summary())
        for row in r.extras["exact_sampler"]:
            print(f"  branch {row['branch']}: restricted mean "
                  f"{row['restricted_mean']:.6g} "
                  f"(target {r.extras['targets']['restricted_mean']:.6g}), "
                  f"square {row['restricted_square']:.6g} "
                  f"(target {r.extras['targets']['restricted_square']:.6g})")
    out = _ensure_out(args)
    jpath, tpath = _emit_reports(reports, cfg, out, f"moments_k{k}")
    print(f"wrote {jpath} and {tpath}")
    if args.plots:
        for dest in _emit_plots(reports, out):
            print(f"wrote {dest}")
    return EXIT_OK if all(r.decision for r in reports) else EXIT_VERIFY


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> _Parser:
    p = _Parser(prog="polybrownian",
                description="Brownian motion and harmonic maps on "
                            "piecewise-flat complexes")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, *, complex_required=False):
        sp.add_argument("--complex", required=complex_required,
                        help="complex JSON file or bundled name")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--plots", action="store_true",
                        help="emit SVG plots next to the reports")

    sp = sub.add_parser("validate", help="check admissibility")
    sp.add_argument("--complex", required=True)
    sp.set_defaults(fn=cmd_validate)

    sp = sub.add_parser("simulate", help="sample paths to CSV")
    common(sp, complex_required=True)
    sp.add_argument("--n", type=int, default=10)
    sp.add_argument("--step", type=float, help="gaussian-step size")
    sp.add_argument("--eta", type=float,
                    help="isotropic sampler speed (overrides --step)")
    sp.add_argument("--grid", type=_grid_arg,
                    help="t1,t2,... (last entry is the horizon)")
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("solve", help="solve the Dirichlet problem")
    common(sp, complex_required=True)
    sp.add_argument("--bc", required=True, help="boundary-condition JSON")
    sp.add_argument("--mesh-h", dest="mesh_h", type=float, default=0.05)
    sp.set_defaults(fn=cmd_solve)

    sp = sub.add_parser("verify", help="run a statistical suite")
    common(sp)
    sp.add_argument("--suite", choices=SUITES, default="all")
    sp.add_argument("--level", type=float, default=0.01)
    sp.set_defaults(fn=cmd_verify)

    sp = sub.add_parser("moments", help="star moment table vs closed forms")
    common(sp)
    sp.add_argument("--n", type=int, default=100_000)
    sp.add_argument("--grid", type=_grid_arg, help="times t1,t2,...")
    sp.add_argument("--level", type=float, default=0.01)
    sp.set_defaults(fn=cmd_moments)

    return p


def _positive(args) -> str | None:
    for key in ("n", "eta", "step", "mesh_h", "threads"):
        v = getattr(args, key, None)
        if v is not None and v <= 0:
            return f"--{key.replace('_', '-')} must be positive"
    level = getattr(args, "level", None)
    if level is not None and not 0.0 < level < 1.0:
        return "--level must lie in (0, 1)"
    grid = getattr(args, "grid", None)
    if grid is not None and any(t <= 0 for t in grid):
        return "--grid entries must be positive"
    return None


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits; keep main() returning codes
        return int(e.code or 0)
    msg = _positive(args)
    if msg is not None:
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_PARSE
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
