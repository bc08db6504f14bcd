"""Command-line entry point: ``qrelax <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io
from .harness import FIGURES, ConfigError, load_config, pipeline_fig, run_experiment

log = logging.getLogger("qrelax")


def _gas_basis(args):
    from .constrained_gas import build_strip, default_seed, enumerate_sector
    return enumerate_sector(build_strip(args.L), args.N, default_seed(args.L, args.N))


def _dimer_basis(args):
    from .quantum_dimers import build_flux_sector, enumerate_coverings
    return build_flux_sector(enumerate_coverings(args.Lx, args.Ly), args.Lx, args.Ly,
                             tuple(args.flux))


def _hamiltonian(args, basis):
    if args.model == "gas":
        from .constrained_gas import build_gas_hamiltonian
        return build_gas_hamiltonian(basis, args.coupling)
    from .quantum_dimers import build_qdm_hamiltonian
    return build_qdm_hamiltonian(basis, args.coupling)


def _basis(args):
    return _gas_basis(args) if args.model == "gas" else _dimer_basis(args)


def _cmd_enumerate(args) -> int:
    basis = _basis(args)
    if args.model == "gas":
        io.write_gas_basis(args.out, basis)
    else:
        io.write_coverings(args.out, basis)
    if args.matrix:
        io.write_matrix(args.matrix, _hamiltonian(args, basis))
    print(f"{args.out}: {basis.dim} configurations")
    return 0


def _cmd_spectrum(args) -> int:
    from .propagator import full_diagonalize
    basis = _basis(args)
    es = full_diagonalize(_hamiltonian(args, basis))
    io.write_eigenvalues(args.out, es.eigenvalues)
    print(f"{args.out}: {basis.dim} eigenvalues, E0 = {es.eigenvalues[0]:.12g}")
    return 0


def _run(cfg, out, threads) -> int:
    if threads is not None:
        cfg.workers = threads
    manifest = run_experiment(cfg, out)
    dest = Path(out if out is not None else cfg.output_dir)
    for t in manifest.failed:
        print(f"FAILED {t.id}: {t.error.splitlines()[0]}", file=sys.stderr)
    print(f"{dest}: {len(manifest.tasks) - len(manifest.failed)}/{len(manifest.tasks)} "
          f"tasks ok, {len(manifest.files)} files, {manifest.wall_clock_seconds:.1f} s")
    return 0 if manifest.ok else 1


def _cmd_evolve(args) -> int:
    return _run(load_config(args.config), args.out, args.threads)


def _cmd_figure(args) -> int:
    cfg = pipeline_fig(args.name, desk=args.desk)
    if args.print_config:
        print(cfg.to_json())
        return 0
    return _run(cfg, args.out or cfg.output_dir, args.threads)


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"{args.config}: valid ({cfg.model}, {cfg.experiment}, "
          f"{len(cfg.sectors)} sector(s), {len(cfg.couplings)} coupling(s))")
    return 0


def _add_model_args(p: argparse.ArgumentParser, coupling: bool):
    sub = p.add_subparsers(dest="model", required=True)
    g = sub.add_parser("gas", help="constrained lattice gas on the zigzag strip")
    g.add_argument("--L", type=int, required=True)
    g.add_argument("--N", type=int, required=True)
    d = sub.add_parser("dimers", help="quantum dimer model on the square torus")
    d.add_argument("--Lx", type=int, required=True)
    d.add_argument("--Ly", type=int, required=True)
    d.add_argument("--flux", type=int, nargs=2, default=[0, 0], metavar=("FX", "FY"))
    for q in (g, d):
        q.add_argument("--out", required=True, help="output file")
        q.add_argument("--coupling", type=float, default=0.5 if q is g else 1.0,
                       help="lambda (gas) or V (dimers)")
        if not coupling:
            q.add_argument("--matrix", help="also write the Hamiltonian (coordinate format)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qrelax", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enumerate", help="write a sector basis")
    _add_model_args(p, coupling=False)
    p.set_defaults(func=_cmd_enumerate)

    p = sub.add_parser("spectrum", help="write the full spectrum of one sector")
    _add_model_args(p, coupling=True)
    p.set_defaults(func=_cmd_spectrum)

    p = sub.add_parser("evolve", help="run a configuration file")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: the config's output_dir)")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=_cmd_evolve)

    p = sub.add_parser("figure", help="run a figure template")
    p.add_argument("name", help="one of: " + ", ".join(sorted(FIGURES)))
    p.add_argument("--out")
    p.add_argument("--threads", type=int)
    p.add_argument("--desk", action="store_true", help="reduced system sizes")
    p.add_argument("--print-config", action="store_true",
                   help="print the template as JSON instead of running it")
    p.set_defaults(func=_cmd_figure)

    p = sub.add_parser("validate", help="check a configuration file without running it")
    p.add_argument("config")
    p.set_defaults(func=_cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
