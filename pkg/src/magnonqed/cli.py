"""Command-line entry points.

Exit codes: 0 success, 2 invalid configuration or input, 3 solver
failure, 4 nothing to fit.  The log level is read from MAGNONQED_LOG.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from . import afm_modes, io, saturation, specfit, spin_levels
from .afm_modes import FieldConfig
from .errors import (CrossingNotResolved, FitError, NoDipFound, SolverError, ValidationError)
from .hybrid_response import spectrum_map

log = logging.getLogger("magnonqed")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_NOTHING = 0, 2, 3, 4


def _window(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None
    return (lo, hi)


def _load(args):
    cfg = io.load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _powered_coupling(cfg, power_dbm):
    """Coupling rates after drive saturation; dBm is converted to mW here only."""
    if power_dbm is None:
        return cfg.coupling
    if cfg.saturation is None:
        raise ValidationError("saturation", "--power-dbm needs a saturation block in the config")
    n = saturation.equilibrium_fraction(saturation.dbm_to_mw(power_dbm), cfg.saturation)
    cp = cfg.coupling
    # saturated spins stop absorbing but still dephase, so the total linewidth is kept
    return dataclasses.replace(cp, G=saturation.effective_coupling(cp.G, n),
                               gamma_e=cp.gamma_e * n, gamma_i=cp.gamma_i + cp.gamma_e * (1 - n))


def cmd_simulate(args):
    cfg = _load(args)
    cp = _powered_coupling(cfg, args.power_dbm)
    m = spectrum_map(cfg.magnet, cfg.spins, cfg.field_sweep.axis(), cfg.f_axis.axis(), cp,
                     chiral_scaling=cfg.chiral_scaling, theta=cfg.theta, branch=cfg.branch,
                     stacking=cfg.stacking, restarts=cfg.restarts, seed=cfg.seed, jobs=args.jobs)
    if args.power_dbm is not None:
        m.metadata["power_dbm"] = args.power_dbm
    if args.format == "json":
        io.write_map_json(m, args.out)
    else:
        io.write_map_csv(m, args.out, phase_path=args.phase_out)
    log.info("wrote %d x %d map to %s", len(m.b0_axis), len(m.f_axis), args.out)
    return EXIT_OK


def _select_fields(m, field_window):
    idx = np.arange(len(m.b0_axis))
    if field_window is not None:
        lo, hi = sorted(field_window)
        idx = idx[(m.b0_axis >= lo) & (m.b0_axis <= hi)]
    return idx


def cmd_fit_dips(args):
    m = io.read_map(args.map, phase_path=args.phase)
    power = specfit.power_traces(m)
    traces, n_ok = [], 0
    for i in _select_fields(m, args.field_window):
        tr = specfit.Trace(m.f_axis, power[i])
        entry = {"b0_mT": float(m.b0_axis[i])}
        try:
            if args.double:
                lo, hi = specfit.fit_double_dip(tr, window=args.window)
                entry["dips"] = [lo.to_dict(), hi.to_dict()]
                entry["separation_MHz"] = (hi.f_m - lo.f_m) * 1e3
            else:
                entry["dips"] = [specfit.fit_dip(tr, window=args.window).to_dict()]
            n_ok += 1
        except FitError as exc:
            entry["error"] = f"{type(exc).__name__}: {exc}"
        traces.append(entry)
    if n_ok == 0:
        log.error("no dips found in any trace")
        return EXIT_NOTHING
    coupling = None
    try:
        coupling = specfit.extract_coupling(m, crossing_window=args.field_window,
                                            f_window=args.window).to_dict()
    except FitError as exc:
        log.info("no resolved anticrossing: %s", exc)
    io.write_result("dip_fits", {"quantity": "|S21|^2", "double": bool(args.double),
                                 "traces": traces, "coupling": coupling}, args.out)
    return EXIT_OK


def cmd_extract_coupling(args):
    m = io.read_map(args.map, phase_path=args.phase)
    res = specfit.extract_coupling(m, crossing_window=args.field_window, f_window=args.window,
                                   crosstalk=not args.no_crosstalk)
    io.write_result("coupling_extract", res.to_dict(), args.out)
    return EXIT_OK


def cmd_spin_levels(args):
    cfg = _load(args)
    if not 0 <= args.species < len(cfg.spins):
        raise ValidationError("species", f"index out of range (config has {len(cfg.spins)})")
    sp = cfg.spins[args.species]
    header = ["b0_mT"] + [f"E{k}_GHz" for k in range(sp.dim)] + ["qubit_gap_GHz"]
    rows = []
    for b in cfg.field_sweep.axis():
        lv = spin_levels.energy_levels(sp, b)
        rows.append([float(b)] + [float(e) for e in lv.energies] + [spin_levels.qubit_gap(sp, b)])
    io.write_table(args.out, header, rows)
    return EXIT_OK


def cmd_magnon_modes(args):
    cfg = _load(args)
    header = ["b0_mT", "acoustic_GHz", "optical_GHz", "acoustic_chirality", "optical_chirality",
              "acoustic_ellipticity", "optical_ellipticity"]
    rows = []
    for i, b in enumerate(cfg.field_sweep.axis()):
        field = FieldConfig(b0=b * 1e-3, theta=cfg.theta)
        seed = int(np.random.SeedSequence([cfg.seed, i]).generate_state(1)[0])
        eq = afm_modes.equilibrium(cfg.magnet, field, restarts=cfg.restarts, seed=seed)
        modes = {md.branch_label: md for md in afm_modes.linearized_modes(cfg.magnet, field, eq)}
        ac, op = modes["acoustic"], modes["optical"]
        rows.append([float(b), ac.frequency, op.frequency, ac.chirality, op.chirality,
                     ac.ellipticity, op.ellipticity])
    io.write_table(args.out, header, rows)
    return EXIT_OK


def cmd_saturation_curve(args):
    cfg = _load(args)
    sp = cfg.saturation or saturation.SaturationParams(gamma_e=cfg.coupling.gamma_e,
                                                      gamma_i=cfg.coupling.gamma_i)
    cp = cfg.coupling
    if args.threshold_dbm is not None:
        alpha = saturation.calibrate_alpha(cp.G, cp.kappa, cp.gamma,
                                           saturation.dbm_to_mw(args.threshold_dbm),
                                           sp.gamma_i, sp.gamma_par)
        sp = dataclasses.replace(sp, alpha=alpha)
        log.info("calibrated alpha = %.17g MHz^2/mW", alpha)
    header = ["p_dBm", "p_mW", "visibility", "n_fraction", "G_eff_MHz"]
    rows = []
    for dbm in np.linspace(args.dbm_start, args.dbm_stop, args.steps):
        p = saturation.dbm_to_mw(dbm)
        n = saturation.equilibrium_fraction(p, sp)
        rows.append([float(dbm), p, saturation.visibility(p, sp), n,
                     saturation.effective_coupling(cp.G, n)])
    io.write_table(args.out, header, rows)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="magnonqed",
                                description="Spin-magnon hybrid spectroscopy: simulate and fit S21 maps.")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", required=True, help="experiment JSON")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default="-", help="output path ('-' for stdout)")

    s = sub.add_parser("simulate", help="forward-simulate an S21 map")
    with_config(s)
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.add_argument("--phase-out", default=None, help="companion CSV for the phase (radians)")
    s.add_argument("--jobs", type=int, default=1, help="worker processes over field points")
    s.add_argument("--power-dbm", type=float, default=None, help="drive power at the input")
    s.set_defaults(func=cmd_simulate)

    for name, func, helptext in (("fit-dips", cmd_fit_dips, "Lorentzian fits of every trace"),
                                 ("extract-coupling", cmd_extract_coupling,
                                  "coupling, linewidths and cooperativity of one anticrossing")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("map", help="CSV or JSON map, '-' for stdin")
        s.add_argument("--phase", default=None, help="companion phase CSV")
        s.add_argument("--window", type=_window, default=None, metavar="F1:F2",
                       help="frequency window in GHz")
        s.add_argument("--field-window", type=_window, default=None, metavar="B1:B2",
                       help="field window in mT")
        s.add_argument("--out", default="-")
        if name == "fit-dips":
            s.add_argument("--double", action="store_true", help="fit two dips per trace")
        else:
            s.add_argument("--no-crosstalk", action="store_true",
                           help="drop line-mediated cross damping from the refinement model")
        s.set_defaults(func=func)

    s = sub.add_parser("spin-levels", help="level diagram and qubit gap versus field")
    with_config(s)
    s.add_argument("--species", type=int, default=0)
    s.set_defaults(func=cmd_spin_levels)

    s = sub.add_parser("magnon-modes", help="acoustic and optical branches versus field")
    with_config(s)
    s.set_defaults(func=cmd_magnon_modes)

    s = sub.add_parser("saturation-curve", help="spin visibility versus drive power")
    with_config(s)
    s.add_argument("--dbm-start", type=float, default=-30.0)
    s.add_argument("--dbm-stop", type=float, default=20.0)
    s.add_argument("--steps", type=int, default=51)
    s.add_argument("--threshold-dbm", type=float, default=None,
                   help="calibrate alpha so strong coupling ends at this power")
    s.set_defaults(func=cmd_saturation_curve)
    return p


def main(argv=None):
    level = os.environ.get("MAGNONQED_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NoDipFound, CrossingNotResolved) as exc:
        print(f"nothing to fit: {exc}", file=sys.stderr)
        return EXIT_NOTHING
    except (SolverError, FitError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
