"""Command line entry point: warp-harmonic {minimize,sweep,spectrum,bubbles,ledger,report}.

Exit codes: 0 success, 2 configuration error, 3 solver non-convergence,
4 theorem-check failure, 5 ledger violation.
"""
from __future__ import annotations

import os

_threads = os.environ.get("WARP_HARMONIC_THREADS", "").strip()
if _threads and _threads != "0":
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import csv  # noqa: E402
import hashlib  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import math  # noqa: E402
import platform  # noqa: E402
import sys  # noqa: E402
from dataclasses import dataclass, field  # noqa: E402
from datetime import datetime  # noqa: E402
from pathlib import Path  # noqa: E402

import mpmath  # noqa: E402
import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .bubbles import (BubbleError, EpsilonPolicy, energy_identity_defect, identity_family,  # noqa: E402
                      pinned_winds_family)
from .energy import DiscreteMap, MapError  # noqa: E402
from .solver import (AlphaSchedule, SolveOptions, SolverError, alpha_continuation, alpha_sweep,  # noqa: E402
                     init_degree, log_gap_for_energy, minimize)
from .spectrum import SpectrumError, TheoremCheckError, accumulation_report  # noqa: E402
from .spheremesh import (MAX_LEVEL, MeshError, build_icosphere, build_log_polar_mesh, read_mesh_csv,  # noqa: E402
                         write_mesh_csv)
from .warpgeom import WarpError, ledger, parse_warp, tube_psi0  # noqa: E402

EXIT_OK, EXIT_CONFIG, EXIT_NOCONV, EXIT_THEOREM, EXIT_LEDGER = 0, 2, 3, 4, 5
COMMANDS = ("minimize", "sweep", "spectrum", "bubbles", "ledger", "report")
GLOBAL_KEYS = ("out", "tag", "seed")

log = logging.getLogger("warp_harmonic")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    command: str
    params: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"command={self.command}"]
        lines += [f"{k}={_fmt(v)}" for k, v in sorted(self.params.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        kv = parse_config_text(text)
        cmd = kv.pop("command", None)
        if cmd is None:
            raise ConfigError("config text lacks a command")
        return cls(cmd, kv)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config_text(text: str) -> dict:
    kv = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, val = line.partition("=")
        if not eq:
            raise ConfigError(f"config line {n}: expected key=value, got {raw!r}")
        kv[key.strip().replace("-", "_")] = val.strip()
    return kv


def _float_list(s):
    try:
        return [float(x) for x in str(s).split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {s!r}") from exc


def _int_list(s):
    try:
        return [int(x) for x in str(s).split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {s!r}") from exc


def _bool(s):
    if isinstance(s, bool):
        return s
    if str(s).lower() in ("1", "true", "yes", "on"):
        return True
    if str(s).lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def _solver_args(p):
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--grad-tol", type=float, default=1e-6)
    p.add_argument("--armijo-c", type=float, default=1e-4)
    p.add_argument("--step-init", type=float, default=1.0)
    p.add_argument("--step-shrink", type=float, default=0.5)
    p.add_argument("--record-every", type=int, default=10)
    p.add_argument("--method", choices=("pgd", "cg"), default="pgd")


def build_parser():
    p = argparse.ArgumentParser(prog="warp-harmonic", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="flat key=value file; command line options override it")
    p.add_argument("--out", default="runs", help="parent directory for run folders")
    p.add_argument("--tag", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command")
    subs = {}

    s = subs["minimize"] = sub.add_parser("minimize", help="minimize E_alpha from a degree-d map")
    s.add_argument("--warp", default="tube:r=0.3")
    s.add_argument("--level", type=int, default=5)
    s.add_argument("--degree", type=int, default=1)
    s.add_argument("--f0", type=float, default=0.0)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--schedule", type=_float_list, default=None,
                   help="comma separated decreasing alphas (alpha continuation)")
    _solver_args(s)

    s = subs["sweep"] = sub.add_parser("sweep", help="best-of-restarts phi(alpha) table")
    s.add_argument("--warp", default="tube:r=0.3")
    s.add_argument("--level", type=int, default=5)
    s.add_argument("--degree", type=int, default=1)
    s.add_argument("--alphas", type=_float_list, default=[1.0, 1.01, 1.02, 1.05, 1.1])
    s.add_argument("--restarts", type=int, default=5)
    s.add_argument("--amplitude", type=float, default=0.1)
    _solver_args(s)

    s = subs["spectrum"] = sub.add_parser("spectrum", help="roots of tan(1/t) = t/(2 beta) and energy gaps")
    s.add_argument("--kmax", type=int, default=5)
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--bits", type=int, default=512)

    s = subs["bubbles"] = sub.add_parser("bubbles", help="bubble decomposition and energy-identity defect")
    s.add_argument("--warp", default="tube:r=0.3")
    s.add_argument("--family", choices=("identity", "winds", "files"), default="identity")
    s.add_argument("--eps", type=_float_list, default=[1e-4, 1e-5, 1e-6, 1e-7],
                   help="bubble scales of the identity family")
    s.add_argument("--winds", type=_int_list, default=[1, 2, 3, 4])
    s.add_argument("--amplitude", type=float, default=0.3)
    s.add_argument("--tau-ratio", type=float, default=2.5,
                   help="winds family: target total energy in units of 4 pi psi0")
    s.add_argument("--delta0", type=float, default=0.02)
    s.add_argument("--R0", type=float, default=100.0)
    s.add_argument("--n-theta", type=int, default=128)
    s.add_argument("--maps", type=lambda x: [y for y in x.split(",") if y], default=[],
                   help="comma separated map CSV files (family=files)")
    s.add_argument("--map-alphas", type=_float_list, default=[])
    s.add_argument("--eps0", type=float, default=1.0)
    s.add_argument("--min-radius", type=float, default=0.01)
    s.add_argument("--max-radius", type=float, default=None)
    s.add_argument("--R", type=float, default=10.0)

    s = subs["ledger"] = sub.add_parser("ledger", help="exact quantization inequalities for a tube radius")
    s.add_argument("--r", type=float, required=False, default=0.3)
    s.add_argument("--blend", choices=("C2", "C4"), default="C2")
    s.add_argument("--psi0", type=float, default=None)

    s = subs["report"] = sub.add_parser("report", help="emit plot-ready .dat files for a run directory")
    s.add_argument("run_dir")
    return p, subs


def resolve_args(argv):
    parser, subs = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            cfg = parse_config_text(Path(known.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        cmd = cfg.pop("command", None)
        cmd_in_argv = next((a for a in argv if a in COMMANDS), None)
        cmd = cmd_in_argv or cmd
        if cmd is None:
            raise ConfigError("no command given on the command line or in the config file")
        if cmd_in_argv is None:
            argv = list(argv) + [cmd]
        sp = subs[cmd]
        dests = {a.dest: a for a in sp._actions}
        glob = {k: cfg.pop(k) for k in list(cfg) if k in GLOBAL_KEYS}
        unknown = [k for k in cfg if k not in dests]
        if unknown:
            raise ConfigError(f"unknown config keys for {cmd}: {', '.join(unknown)}")
        sp.set_defaults(**{k: (_bool(v) if dests[k].type is None and dests[k].nargs == 0 else v)
                           for k, v in cfg.items()})
        parser.set_defaults(**glob)
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        raise ConfigError("a command is required")
    return args


def run_config(args) -> RunConfig:
    skip = {"command", "config", "verbose", "out", "tag"}
    params = {k: v for k, v in vars(args).items() if k not in skip and v is not None}
    return RunConfig(args.command, params)


# ---------------------------------------------------------------------------
# run directories
# ---------------------------------------------------------------------------

def make_run_dir(out, tag) -> Path:
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    base = Path(out) / f"{stamp}-{tag}"
    path, n = base, 1
    while path.exists():
        path = Path(f"{base}-{n}")
        n += 1
    path.mkdir(parents=True)
    return path


def write_manifest(run_dir: Path, cfg: RunConfig, extra: dict) -> None:
    manifest = {
        "command": cfg.command,
        "config": cfg.params,
        "config_text": cfg.to_text(),
        "config_hash": cfg.hash,
        "version": __version__,
        "seed": cfg.params.get("seed", 0),
        "created": datetime.now().isoformat(timespec="seconds"),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "threads": os.environ.get("WARP_HARMONIC_THREADS", "0"),
    }
    manifest.update(extra)
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True, default=str))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=str))


def _solve_opts(args) -> SolveOptions:
    return SolveOptions(max_iters=args.max_iters, grad_tol=args.grad_tol, armijo_c=args.armijo_c,
                        step_init=args.step_init, step_shrink=args.step_shrink, seed=args.seed,
                        record_every=args.record_every, method=args.method)


def _check_level(level):
    if not 0 <= level <= MAX_LEVEL:
        raise ConfigError(f"--level must lie in [0, {MAX_LEVEL}], got {level}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_minimize(args) -> int:
    warp = parse_warp(args.warp)
    _check_level(args.level)
    if args.schedule:
        schedule = AlphaSchedule(tuple(args.schedule))
    elif not 1.0 <= args.alpha <= 2.0:
        raise ConfigError(f"--alpha must lie in [1, 2], got {args.alpha}")
    if not warp.contains(args.f0, 1e-6):
        raise ConfigError(f"--f0 = {args.f0} lies outside the warp domain {warp.domain}")
    opts = _solve_opts(args)
    mesh = build_icosphere(args.level)
    u0 = init_degree(mesh, args.degree, args.f0)
    cfg = run_config(args)
    run_dir = make_run_dir(args.out, args.tag or "minimize")
    write_manifest(run_dir, cfg, {"mesh_level": args.level, "warp": warp.descriptor()})
    reports = alpha_continuation(u0, warp, schedule, opts) if args.schedule else [minimize(u0, warp, args.alpha, opts)]
    _write_json(run_dir / "report.json", {"runs": [r.as_dict() for r in reports]})
    final = reports[-1].final_map
    write_mesh_csv(run_dir / "map.csv", mesh, final.v, final.f)
    with (run_dir / "energy_trace.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "iter", "E_alpha", "grad_norm", "max_grad", "degree"])
        for r in reports:
            for it in r.iterates:
                w.writerow([r.alpha, it.iter, repr(it.E_alpha), repr(it.grad_norm), repr(it.max_grad), it.degree])
    for r in reports:
        print(f"alpha={r.alpha:<6g} converged={r.converged} iters={r.n_iters} "
              f"E_alpha={r.final_E_alpha:.10g} E={r.final_E:.10g} grad={r.final_grad_norm:.3e}")
    print(f"run directory: {run_dir}")
    return EXIT_OK if all(r.converged for r in reports) else EXIT_NOCONV


def cmd_sweep(args) -> int:
    warp = parse_warp(args.warp)
    _check_level(args.level)
    opts = _solve_opts(args)
    mesh = build_icosphere(args.level)
    cfg = run_config(args)
    run_dir = make_run_dir(args.out, args.tag or "sweep")
    write_manifest(run_dir, cfg, {"mesh_level": args.level, "warp": warp.descriptor()})
    rows = alpha_sweep(args.degree, warp, args.alphas, opts, mesh=mesh, n_restarts=args.restarts,
                       amplitude=args.amplitude)
    with (run_dir / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "phi", "n_runs", "n_converged"])
        for r in rows:
            w.writerow([repr(r.alpha), repr(r.phi), len(r.restarts), sum(r.converged)])
    _write_json(run_dir / "report.json", {"rows": [r.__dict__ for r in rows],
                                          "note": "phi is a best-of-restarts upper estimate of the infimum"})
    for r in rows:
        print(f"alpha={r.alpha:<6g} phi={r.phi:.10g} converged={sum(r.converged)}/{len(r.converged)}")
    print(f"run directory: {run_dir}")
    return EXIT_OK if all(any(r.converged) for r in rows) else EXIT_NOCONV


def cmd_spectrum(args) -> int:
    cfg = run_config(args)
    try:
        table = accumulation_report(args.kmax, args.beta, args.bits)
    except TheoremCheckError as exc:
        print(f"theorem check failed: {exc}", file=sys.stderr)
        return EXIT_THEOREM
    run_dir = make_run_dir(args.out, args.tag or "spectrum")
    write_manifest(run_dir, cfg, {"beta": args.beta, "precision_bits": args.bits})
    table.write_csv(run_dir / "spectrum.csv")
    _write_json(run_dir / "report.json", {"checks": table.checks, "claim": table.claim,
                                          "beta": table.beta, "precision_bits": table.precision_bits})
    print(table.format())
    print(table.claim)
    print(f"run directory: {run_dir}")
    return EXIT_OK


def cmd_bubbles(args) -> int:
    warp = parse_warp(args.warp)
    q = 4 * math.pi * warp.psi0
    max_radius = args.max_radius if args.max_radius is not None else 2 * math.atan(args.delta0)
    policy = EpsilonPolicy(eps0=args.eps0, min_radius=args.min_radius, max_radius=max_radius, psi0=warp.psi0)
    if args.family == "files":
        if len(args.maps) != len(args.map_alphas):
            raise ConfigError("--maps and --map-alphas must have the same length")
        family = []
        for path, a in zip(args.maps, args.map_alphas):
            mesh, v, f = read_mesh_csv(path)
            if v is None:
                raise ConfigError(f"{path} carries no map values")
            family.append((a, DiscreteMap(mesh, v, f)))
        label, meta = "map files", [{"file": p, "alpha": a} for p, a in zip(args.maps, args.map_alphas)]
    else:
        scales = list(args.eps)
        if (len(args.eps) if args.family == "identity" else len(args.winds)) < 2:
            raise ConfigError("a family needs at least two members")
        if args.family == "identity":
            mesh = build_log_polar_mesh(math.log(min(scales)) - 8.0, 8.0, args.n_theta)
            members = identity_family(mesh, scales, args.delta0, args.R0)
            label = "constructed family (frozen neck, shrinking bubble)"
        else:
            if not args.tau_ratio > 2:
                raise ConfigError("--tau-ratio must exceed 2 (two quanta plus a positive neck)")
            neck = (args.tau_ratio - 2.0) * q
            G_max = max(log_gap_for_energy(neck, args.amplitude, int(w), warp) for w in args.winds)
            eps_min = args.delta0 * math.exp(-G_max) / args.R0
            mesh = build_log_polar_mesh(math.log(eps_min) - 8.0, 8.0, args.n_theta)
            members = pinned_winds_family(mesh, warp, args.winds, args.amplitude, neck, args.delta0, args.R0)
            label = "constructed family (pinned neck energy)"
        family = [(m.alpha, m.map) for m in members]
        meta = [{"alpha": m.alpha, "eps0": m.eps0, "log_gap": m.log_gap, "winds": m.winds} for m in members]
    if len(family) < 2:
        raise ConfigError("a family needs at least two members")
    cfg = run_config(args)
    run_dir = make_run_dir(args.out, args.tag or "bubbles")
    write_manifest(run_dir, cfg, {"warp": warp.descriptor(), "family": meta, "label": label})
    rep = energy_identity_defect(family, warp, policy, label=label, R=args.R)
    _write_json(run_dir / "defect.json", rep.as_dict())
    for k, dec in enumerate(rep.decompositions):
        dec.write_annulus_csv(run_dir / f"annulus_{k}.csv")
    for k, (a, d) in enumerate(zip(rep.alphas, rep.defects)):
        print(f"member {k}: alpha={a:.8g} E_alpha={rep.E_alpha[k]:.8g} base={rep.base[k]:.6g} "
              f"bubble={rep.bubble[k]:.6g} neck={rep.neck[k]:.6g} defect={d:.6g} ({d / q:.4f} quanta)")
    print(f"tau/(4 pi psi0) = {rep.tau_ratio:.6f}; flags: {', '.join(rep.flags)}")
    print(f"run directory: {run_dir}")
    return EXIT_OK


def cmd_ledger(args) -> int:
    if not args.r > 0:
        raise ConfigError(f"--r must be positive, got {args.r}")
    psi0 = args.psi0 if args.psi0 is not None else tube_psi0(args.r, args.blend)
    if not psi0 > 0:
        raise ConfigError("--psi0 must be positive")
    rep = ledger(args.r, psi0)
    cfg = run_config(args)
    run_dir = make_run_dir(args.out, args.tag or "ledger")
    write_manifest(run_dir, cfg, {})
    _write_json(run_dir / "ledger.json", rep.as_dict())
    names = {"a": "4 pi psi0 <= 16 pi r^2", "b": "12 pi psi0 < 48 pi r^2",
             "c": "48 pi r^2 < pi (pi - 2r)^2", "d": "r < pi / (4 sqrt 3 + 2)"}
    print(f"r = {rep.r:.10g}  psi0 = {rep.psi0:.10g}  r_max = {rep.r_max:.10g}")
    for k, text in names.items():
        print(f"({k}) {text:<28} {'holds' if rep.verdicts[k] else 'FAILS'}")
    for k, v in rep.bounds.items():
        print(f"    {k:<14} = {v:.10g}")
    print(f"run directory: {run_dir}")
    return EXIT_OK if rep.all_hold else EXIT_LEDGER


def _dat(path: Path, header: str, rows) -> None:
    with path.open("w") as fh:
        fh.write(f"# {header}\n")
        for r in rows:
            fh.write(" ".join(str(x) for x in r) + "\n")


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    mf = run / "manifest.json"
    if not mf.is_file():
        raise ConfigError(f"{run} holds no manifest.json (not a run directory)")
    manifest = json.loads(mf.read_text())
    cmd = manifest.get("command")
    lines = [f"run {run.name}: command={cmd} version={manifest.get('version')} "
             f"config_hash={manifest.get('config_hash', '')[:12]}"]
    if cmd == "minimize":
        with (run / "energy_trace.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        _dat(run / "energy_trace.dat", "alpha iter E_alpha grad_norm max_grad degree",
             [(r["alpha"], r["iter"], r["E_alpha"], r["grad_norm"], r["max_grad"], r["degree"]) for r in rows])
        lines.append(f"energy trace: {len(rows)} records, final E_alpha = {rows[-1]['E_alpha']}")
    elif cmd == "sweep":
        with (run / "sweep.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        _dat(run / "phi_alpha.dat", "alpha phi", [(r["alpha"], r["phi"]) for r in rows])
        lines.append("phi(alpha): " + ", ".join(f"{float(r['alpha']):g}:{float(r['phi']):.8g}" for r in rows))
    elif cmd == "spectrum":
        with (run / "spectrum.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        _dat(run / "gap_vs_k.dat", "k gap log10_gap",
             [(r["k"], r["gap"], mpmath.nstr(mpmath.log10(mpmath.mpf(r["gap"])), 17)) for r in rows])
        lines.append(f"gap vs k: {len(rows)} rows")
    elif cmd == "bubbles":
        rep = json.loads((run / "defect.json").read_text())
        _dat(run / "defect.dat", "member alpha E_alpha base bubble neck defect",
             [(k, a, e, b, bb, n, d) for k, (a, e, b, bb, n, d) in
              enumerate(zip(rep["alphas"], rep["E_alpha"], rep["base"], rep["bubble"], rep["neck"],
                            rep["defects"]))])
        for p in sorted(run.glob("annulus_*.csv")):
            with p.open() as fh:
                rows = list(csv.DictReader(fh))
            _dat(p.with_suffix(".dat"), "bubble log10_t osc_v osc_f energy",
                 [(r["bubble"], repr(math.log10(float(r["t"]))), r["osc_v"], r["osc_f"], r["energy"])
                  for r in rows])
        lines.append(f"defects: {rep['defects']}; flags: {', '.join(rep['flags'])}")
    elif cmd == "ledger":
        rep = json.loads((run / "ledger.json").read_text())
        _dat(run / "ledger.dat", "quantity value", sorted(rep["bounds"].items()))
        lines.append(f"verdicts: {rep['verdicts']}")
    else:
        raise ConfigError(f"unknown run command {cmd!r} in manifest")
    text = "\n".join(lines) + "\n"
    (run / "summary.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


HANDLERS = {"minimize": cmd_minimize, "sweep": cmd_sweep, "spectrum": cmd_spectrum,
            "bubbles": cmd_bubbles, "ledger": cmd_ledger, "report": cmd_report}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = resolve_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # argparse errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return HANDLERS[args.command](args)
    except (ConfigError, WarpError, MeshError, MapError, SolverError, BubbleError, SpectrumError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
