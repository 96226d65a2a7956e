"""Command-line entry point: ``ampdetect {run,se,roc,plotdata}``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .channel_model import derive_lsf_constants, effective_noise_variance
from .detection import pf_analytic, pm_analytic_stat, roc_thresholds, threshold_for_pf
from .harness import (
    PRESETS,
    ExperimentSpec,
    apply_config,
    emit_plotdata,
    parse_config,
    preset,
    run_experiment,
)
from .state_evolution import fixed_point


def _specs(args) -> list[ExperimentSpec]:
    specs = preset(args.preset) if args.preset else [ExperimentSpec()]
    items = parse_config(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    out = []
    for sp in specs:
        sp = apply_config(sp, items)
        over = {}
        if args.seed is not None:
            over["seed"] = args.seed
        if args.trials is not None:
            over["trials"] = args.trials
        if args.workers is not None:
            over["workers"] = args.workers
        if getattr(args, "power", None):
            over["power_sweep"] = tuple(args.power)
        out.append(replace(sp, **over))
    return out


def cmd_run(args) -> int:
    out = Path(args.out)
    for sp in _specs(args):
        sp = replace(sp, output_path=str(out))
        for r in run_experiment(sp):
            s = r.summary
            print(f"{sp.name:32s} {r.power:8.3f} dBm  tau_se={s['tau_se']:.4g}  tau_emp={s['tau_emp']:.4g}  "
                  f"eer_emp={s['eer_emp']:.4g}  failed={s['trials_failed']}")
    return 0


def cmd_se(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for sp in _specs(args):
        if sp.mode is None:
            continue
        for p in sp.power_sweep:
            cfg = sp.cell.replace(tx_power=p)
            tr = fixed_point(effective_noise_variance(cfg), cfg.num_users, cfg.pilot_len, sp.mode,
                             derive_lsf_constants(cfg), cfg.activity_prob, m=cfg.num_antennas)
            path = out / f"{sp.name}_{p:g}dBm_se.csv"
            tr.to_csv(path)
            print(f"{path}: tau_inf={tr.fixed_point:.6g} sigma_w={math.sqrt(effective_noise_variance(cfg)):.6g} "
                  f"converged={tr.converged}")
    return 0


def cmd_roc(args) -> int:
    """Analytic ROC at the SE fixed point next to the noise-only bound."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for sp in _specs(args):
        if sp.mode is None:
            continue
        for p in sp.power_sweep:
            cfg = sp.cell.replace(tx_power=p)
            dist = derive_lsf_constants(cfg)
            M = cfg.num_antennas
            nv = effective_noise_variance(cfg)
            tau = fixed_point(nv, cfg.num_users, cfg.pilot_len, sp.mode, dist, cfg.activity_prob, m=M).fixed_point
            ls = roc_thresholds(tau, M)
            pf = np.asarray(pf_analytic(ls, tau, M))
            pm = np.asarray(pm_analytic_stat(ls, tau, M, dist))
            sw = math.sqrt(nv)
            lb = np.array([threshold_for_pf(q, sw, M) for q in pf])
            pm_b = np.asarray(pm_analytic_stat(lb, sw, M, dist))
            path = out / f"{sp.name}_{p:g}dBm_analytic_roc.csv"
            np.savetxt(path, np.column_stack([ls, pf, pm, pm_b]), delimiter=",", fmt="%.12g", comments="",
                       header="l,pf,pm,pm_noise_bound\namplitude,probability,probability,probability")
            print(path)
    return 0


def cmd_plotdata(args) -> int:
    for p in emit_plotdata(args.results, args.out, args.figure):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ampdetect", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value file; any cell or experiment field")
        p.add_argument("--preset", choices=PRESETS)
        p.add_argument("--seed", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--power", type=float, nargs="+", help="transmit powers in dBm")
        p.add_argument("--out", default="results")

    for name, fn in (("run", cmd_run), ("se", cmd_se), ("roc", cmd_roc)):
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(func=fn)
    p = sub.add_parser("plotdata")
    p.add_argument("results", help="directory written by 'run'")
    p.add_argument("--figure", required=True, choices=[f"fig{i}" for i in range(1, 7)])
    p.add_argument("--out", default="plotdata")
    p.set_defaults(func=cmd_plotdata)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"ampdetect: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
