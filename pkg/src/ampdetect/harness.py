"""Monte Carlo experiments: scenes -> recovery -> detection -> CSV.

Trial ``t`` of an experiment with seed ``s`` always uses scene seed
``s * 100003 + t`` regardless of algorithm or transmit power, so algorithm
comparisons are paired and power sweeps share geometry.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .baselines import CosampConfig, cosamp, run_soft_amp
from .channel_model import (
    CellConfig,
    derive_lsf_constants,
    effective_noise_variance,
    sample_scene,
)
from .detection import (
    DetectionReport,
    empirical_curve,
    equal_error_threshold,
    pf_analytic,
    pm_analytic_stat,
    roc_thresholds,
    threshold_for_pf,
    wilson_interval,
)
from .mmv_amp import row_statistic, run_parallel_ampmmv, run_vamp
from .smv_amp import DenoiserKind, matched_filter, run_amp
from .state_evolution import fixed_point

log = logging.getLogger(__name__)

ALGORITHMS = ("amp_mmse_stat", "amp_mmse_known_g", "amp_soft", "cosamp", "vamp_stat", "vamp_known_g",
              "parallel_ampmmv")
THRESHOLD_MODES = ("roc_sweep", "target_pf", "equal_error")
DEFAULT_KAPPAS = tuple(np.round(np.geomspace(0.5, 3.0, 10), 4))
FULL_PILOT_LEN = 800


def desk_power(full_dbm, pilot_len, full_pilot_len=FULL_PILOT_LEN):
    """Power giving the same pilot energy ``L * P`` at a shorter pilot length."""
    return full_dbm + 10.0 * math.log10(full_pilot_len / pilot_len)


def required_trials(num_users, activity_prob, target_pm=1e-3, n_se=3.0):
    """Trials needed so ``n_se`` binomial standard errors of ``Pm`` equal ``target_pm``."""
    n_active = n_se**2 * (1.0 - target_pm) / target_pm
    return max(1, math.ceil(n_active / (activity_prob * num_users)))


@dataclass(frozen=True)
class ExperimentSpec:
    cell: CellConfig = field(default_factory=CellConfig)
    algorithm: str = "amp_mmse_stat"
    trials: int = 10
    seed: int = 0
    power_sweep: tuple = (15.0,)
    threshold_mode: str = "roc_sweep"
    target_pf: float = 0.1
    output_path: str | None = None
    fixed_support: bool = False
    kappa_grid: tuple = DEFAULT_KAPPAS
    max_iter: int = 50
    rel_tol: float = 1e-6
    outer: int = 5
    inner: int = 25
    workers: int = 1
    label: str = ""

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ValueError(f"unknown threshold mode {self.threshold_mode!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.power_sweep or not self.kappa_grid:
            raise ValueError("sweep lists must be nonempty")
        if self.algorithm.startswith("amp_") and self.cell.num_antennas != 1:
            raise ValueError(f"{self.algorithm} is single-antenna")

    @property
    def mode(self) -> str | None:
        if self.algorithm in ("amp_mmse_stat", "vamp_stat"):
            return "stat_g"
        if self.algorithm in ("amp_mmse_known_g", "vamp_known_g", "parallel_ampmmv"):
            return "known_g"
        return None

    @property
    def name(self) -> str:
        return self.label or self.algorithm


class TrialOutput(NamedTuple):
    statistic: np.ndarray  # (n_kappa, N) for soft AMP, otherwise (1, N)
    truth: np.ndarray
    tau_hat: np.ndarray  # one per statistic row
    support: np.ndarray | None  # cosamp decisions


class PowerResult(NamedTuple):
    power: float
    report: DetectionReport
    summary: dict
    statistic: np.ndarray
    truth: np.ndarray
    tau_hat: np.ndarray
    failures: int


def trial_seed(seed, t):
    return seed * 100_003 + t


def run_trial(spec: ExperimentSpec, power: float, t: int) -> TrialOutput:
    cfg = spec.cell.replace(tx_power=power)
    scene = sample_scene(cfg, trial_seed(spec.seed, t), fixed_support=spec.fixed_support)
    dist = derive_lsf_constants(cfg)
    lam = cfg.activity_prob
    S, Y = scene.pilots, scene.received
    alg = spec.algorithm
    stop = dict(max_iter=spec.max_iter, rel_tol=spec.rel_tol)
    support = None
    if alg in ("amp_mmse_stat", "amp_mmse_known_g"):
        kind = DenoiserKind.stat(lam, dist) if alg == "amp_mmse_stat" else DenoiserKind.known_g(lam, scene.lsf)
        res = run_amp(S, scene.y, kind, **stop)
        stat = np.abs(matched_filter(S, res.state))[None]
        taus = np.array([res.state.tau_hat])
    elif alg == "amp_soft":
        rows, taus = [], []
        for kappa in spec.kappa_grid:
            res = run_soft_amp(S, scene.y, kappa=kappa, **stop)
            rows.append(np.abs(matched_filter(S, res.state)))
            taus.append(res.state.tau_hat)
        stat, taus = np.array(rows), np.array(taus)
    elif alg == "cosamp":
        k = max(1, scene.num_active)
        x, supp = cosamp(S, scene.y, CosampConfig(k), return_support=True)
        stat = np.abs(x)[None]
        support = np.zeros(cfg.num_users, dtype=bool)
        support[supp] = True
        taus = np.array([np.nan])
    elif alg in ("vamp_stat", "vamp_known_g"):
        kind = DenoiserKind.stat(lam, dist) if alg == "vamp_stat" else DenoiserKind.known_g(lam, scene.lsf)
        res = run_vamp(S, Y, kind, **stop)
        stat = row_statistic(S, res.state)[None]
        taus = np.array([res.state.tau_hat])
    else:
        res = run_parallel_ampmmv(S, Y, scene.lsf, lam, outer=spec.outer, inner=spec.inner)
        stat = np.sqrt(np.sum(np.abs(res.matched) ** 2, axis=1))[None]
        taus = np.array([res.tau_final])
    return TrialOutput(stat, scene.activity.copy(), taus, support)


def _trial_job(args):
    spec, power, t = args
    try:
        return run_trial(spec, power, t)
    except (np.linalg.LinAlgError, ValueError, FloatingPointError, ArithmeticError) as exc:
        log.warning("trial %d at %.2f dBm failed: %s", t, power, exc)
        return None


def _map(jobs, workers):
    if workers <= 1:
        return [_trial_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_trial_job, jobs, chunksize=1))


def empirical_eer(statistic, truth):
    """Empirical equal-error rate: ``(pf + pm)/2`` where ``pf - pm`` changes sign."""
    statistic = np.asarray(statistic)
    truth = np.asarray(truth, dtype=bool)
    cand = np.unique(statistic)
    pf, pm, _, _ = empirical_curve(statistic, truth, cand)
    i = int(np.argmin(np.abs(pf - pm)))
    return 0.5 * (pf[i] + pm[i]), float(cand[i])


def se_prediction(spec: ExperimentSpec, power: float):
    """SE fixed point for the experiment's MMSE mode, or ``None``."""
    if spec.mode is None:
        return None
    cfg = spec.cell.replace(tx_power=power)
    dist = derive_lsf_constants(cfg)
    return fixed_point(effective_noise_variance(cfg), cfg.num_users, cfg.pilot_len, spec.mode, dist,
                       cfg.activity_prob, m=cfg.num_antennas)


def run_power(spec: ExperimentSpec, power: float) -> PowerResult:
    cfg = spec.cell.replace(tx_power=power)
    dist = derive_lsf_constants(cfg)
    M = cfg.num_antennas
    outs = _map([(spec, power, t) for t in range(spec.trials)], spec.workers)
    good = [o for o in outs if o is not None]
    failures = len(outs) - len(good)
    if not good:
        raise RuntimeError(f"all {len(outs)} trials failed at {power} dBm")
    stat_all = np.concatenate([o.statistic for o in good], axis=1)
    truth = np.concatenate([o.truth for o in good])
    tau_hat = np.array([o.tau_hat for o in good])

    summary = {"algorithm": spec.algorithm, "power_dBm": power, "pilot_len": cfg.pilot_len,
               "num_antennas": M, "trials_ok": len(good), "trials_failed": failures}
    row = 0
    if spec.algorithm == "amp_soft":
        eers = [empirical_eer(stat_all[k], truth)[0] for k in range(len(spec.kappa_grid))]
        # with no active users every EER is undefined: keep the run with the smallest residual
        row = int(np.nanargmin(eers)) if not np.all(np.isnan(eers)) else int(np.argmin(np.mean(tau_hat, 0)))
        summary["kappa"] = spec.kappa_grid[row]
    stat = stat_all[row]
    tau_emp = float(np.sqrt(np.mean(tau_hat[:, row] ** 2)))
    summary["tau_emp"] = tau_emp

    se = se_prediction(spec, power)
    tau_ref = se.fixed_point if se is not None else tau_emp
    summary["tau_se"] = se.fixed_point if se is not None else float("nan")
    summary["sigma_w"] = math.sqrt(effective_noise_variance(cfg))

    if spec.algorithm == "cosamp":
        decisions = np.concatenate([o.support for o in good])
        thresholds = np.array([np.nan])
        fa = int((decisions & ~truth).sum())
        md = int((~decisions & truth).sum())
        n0, n1 = int((~truth).sum()), int(truth.sum())
        pf_e = np.array([fa / n0 if n0 else np.nan])
        pm_e = np.array([md / n1 if n1 else np.nan])
        pf_a = pm_a = np.array([np.nan])
        fa_c, md_c = np.array([fa]), np.array([md])
    else:
        if spec.threshold_mode == "roc_sweep":
            thresholds = roc_thresholds(tau_ref, M)
        elif spec.threshold_mode == "target_pf":
            thresholds = np.array([threshold_for_pf(spec.target_pf, tau_ref, M)])
        else:
            if se is not None:
                thresholds = np.array([equal_error_threshold(tau_ref, M, "stat_g", dist)])
            else:
                thresholds = np.array([empirical_eer(stat, truth)[1]])
        pf_e, pm_e, fa_c, md_c = empirical_curve(stat, truth, thresholds)
        n0, n1 = int((~truth).sum()), int(truth.sum())
        if se is not None:
            pf_a = np.asarray(pf_analytic(thresholds, tau_ref, M), dtype=float)
            pm_a = np.asarray(pm_analytic_stat(thresholds, tau_ref, M, dist), dtype=float)
        else:
            pf_a = pm_a = np.full(len(thresholds), np.nan)
    report = DetectionReport(thresholds, pf_a, pm_a, pf_e, pm_e, n0, n1,
                             f"{spec.mode or spec.algorithm}/{'smv' if M == 1 else f'mmv({M})'}")
    eer, _ = empirical_eer(stat, truth) if spec.algorithm != "cosamp" else (float("nan"), None)
    summary["eer_emp"] = eer
    if se is not None:
        l_eq = equal_error_threshold(tau_ref, M, "stat_g", dist)
        summary["eer_analytic"] = pf_analytic(l_eq, tau_ref, M)
    else:
        summary["eer_analytic"] = float("nan")
    if spec.algorithm == "cosamp":
        summary["pf_op"], summary["pm_op"] = float(pf_e[0]), float(pm_e[0])
    lo_f, hi_f = wilson_interval(fa_c, n0)
    lo_m, hi_m = wilson_interval(md_c, n1)
    summary["pf_wilson"] = (float(lo_f[0]), float(hi_f[0])) if len(thresholds) == 1 else None
    summary["pm_wilson"] = (float(lo_m[0]), float(hi_m[0])) if len(thresholds) == 1 else None
    return PowerResult(power, report, summary, stat, truth, tau_hat[:, row], failures)


def run_experiment(spec: ExperimentSpec) -> list[PowerResult]:
    """Run every power of the sweep; write CSVs when ``output_path`` is set."""
    results = [run_power(spec, p) for p in spec.power_sweep]
    if spec.output_path:
        write_results(spec, results)
    return results


# -- CSV output -----------------------------------------------------------------------

SUMMARY_COLUMNS = ("algorithm", "power_dBm", "pilot_len", "num_antennas", "trials_ok", "trials_failed",
                   "kappa", "tau_se", "tau_emp", "sigma_w", "eer_emp", "eer_analytic", "pf_op", "pm_op")
SUMMARY_UNITS = ("name", "dBm", "symbols", "count", "count", "count", "ratio", "amplitude", "amplitude",
                 "amplitude", "probability", "probability", "probability", "probability")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.10g}"
    return str(v)


def write_results(spec: ExperimentSpec, results: list[PowerResult]) -> Path:
    out = Path(spec.output_path)
    out.mkdir(parents=True, exist_ok=True)
    for r in results:
        r.report.to_csv(out / f"{spec.name}_{r.power:g}dBm_roc.csv")
    with open(out / f"{spec.name}_summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        w.writerow(SUMMARY_UNITS)
        for r in results:
            w.writerow([_fmt(r.summary.get(c)) for c in SUMMARY_COLUMNS])
    write_spec(spec, out / f"{spec.name}_spec.txt")
    return out


def read_summary(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    head = rows[0]
    out = []
    for row in rows[2:]:
        rec = {}
        for k, v in zip(head, row):
            if k == "algorithm":
                rec[k] = v
            else:
                rec[k] = float(v) if v not in ("",) else float("nan")
        out.append(rec)
    return out


# -- flat key=value configs ------------------------------------------------------------

_TUPLE_KEYS = ("power_sweep", "kappa_grid")


def _coerce(ftype, raw):
    if ftype in ("int", int):
        return int(raw)
    if ftype in ("float", float):
        return float(raw)
    if ftype in ("bool", bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if ftype in ("str | None",):
        return raw or None
    return raw


def parse_config(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; list values are comma separated."""
    items = {}
    for ln in text.splitlines():
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        key, sep, val = ln.partition("=")
        if not sep:
            raise ValueError(f"bad config line {ln!r}")
        items[key.strip()] = val.strip()
    return items


def apply_config(spec: ExperimentSpec, items: dict) -> ExperimentSpec:
    cell_fields = {f.name: f.type for f in fields(CellConfig)}
    spec_fields = {f.name: f.type for f in fields(ExperimentSpec)}
    cell_kw, spec_kw = {}, {}
    for key, raw in items.items():
        if key in cell_fields:
            cell_kw[key] = _coerce(cell_fields[key], raw)
        elif key in _TUPLE_KEYS:
            spec_kw[key] = tuple(float(v) for v in str(raw).split(",") if v.strip())
        elif key in spec_fields and key != "cell":
            spec_kw[key] = _coerce(spec_fields[key], raw)
        else:
            raise ValueError(f"unknown config key {key!r}")
    cell = spec.cell.replace(**cell_kw) if cell_kw else spec.cell
    return replace(spec, cell=cell, **spec_kw)


def write_spec(spec: ExperimentSpec, path) -> None:
    lines = [f"{k} = {v}" for k, v in asdict(spec.cell).items()]
    for f in fields(ExperimentSpec):
        if f.name == "cell":
            continue
        v = getattr(spec, f.name)
        if isinstance(v, tuple):
            v = ",".join(f"{x:g}" for x in v)
        lines.append(f"{f.name} = {'' if v is None else v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- presets ----------------------------------------------------------------------------


def _desk_cell(L=200, M=1):
    return CellConfig(num_users=1000, pilot_len=L, num_antennas=M)


def _full_cell(L=800, M=1):
    return CellConfig(num_users=4000, pilot_len=L, num_antennas=M)


def preset(name: str) -> list[ExperimentSpec]:
    """Experiment lists mirroring figure setups, at desk (``N=1000``) or full (``N=4000``) scale.

    Desk presets keep ``N/L`` and shift power by ``10 log10(L_full/L)`` where
    the figure's powers are meant as energy-matched analogs.
    """
    fig, _, scale = name.partition("-")
    if scale not in ("desk", "paper"):
        raise ValueError(f"unknown preset {name!r}")
    desk = scale == "desk"
    cell = _desk_cell if desk else _full_cell
    L0 = 200 if desk else 800
    analog = (lambda p: round(desk_power(p, L0), 4)) if desk else (lambda p: p)
    trials = (lambda d, p: d) if desk else (lambda d, p: p)
    roc_trials = required_trials(cell(L0).num_users, cell(L0).activity_prob)
    if fig == "fig1":
        return [ExperimentSpec(cell(L0), "amp_mmse_stat", trials(roc_trials, 10), power_sweep=(5.0, 15.0, 25.0),
                               fixed_support=not desk)]
    if fig == "fig2":
        return [ExperimentSpec(cell(L0), a, trials(roc_trials, 10), power_sweep=(5.0, 15.0, 25.0))
                for a in ("amp_mmse_known_g", "amp_mmse_stat")]
    if fig == "fig3":
        powers = tuple(analog(p) for p in (5.0, 15.0, 25.0))
        return [ExperimentSpec(cell(L0), a, trials(30, 5), power_sweep=powers)
                for a in ("amp_mmse_stat", "amp_soft", "cosamp")]
    if fig == "fig4":
        Ls = (50, 75, 100, 150, 200) if desk else (200, 300, 400, 600, 800)
        specs = []
        for L in Ls:
            powers = tuple(analog(p) for p in (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0))
            for a in ("amp_mmse_stat", "amp_soft"):
                specs.append(ExperimentSpec(cell(L), a, trials(10, 3), power_sweep=powers,
                                            threshold_mode="equal_error", label=f"{a}_L{L}"))
        return specs
    if fig == "fig5":
        specs = []
        for M in (1, 2, 4):
            for a in ("vamp_known_g", "parallel_ampmmv"):
                specs.append(ExperimentSpec(cell(L0, M), a, trials(100, 5), power_sweep=(15.0,),
                                            label=f"{a}_M{M}"))
        return specs
    if fig == "fig6":
        Ls = (75, 150) if desk else (300, 600)
        specs = []
        for L in Ls:
            for M in (1, 2, 4):
                specs.append(ExperimentSpec(cell(L, M), "vamp_known_g", trials(10, 3),
                                            power_sweep=tuple(analog(p) for p in (0.0, 10.0, 20.0, 30.0)),
                                            threshold_mode="equal_error", label=f"vamp_known_g_L{L}_M{M}"))
        return specs
    raise ValueError(f"unknown preset {name!r}")


PRESETS = tuple(f"fig{i}-{s}" for i in range(1, 7) for s in ("desk", "paper"))


# -- plot data -----------------------------------------------------------------------------


def _stored_cell(result_dir: Path, series: str) -> CellConfig:
    path = result_dir / f"{series}_spec.txt"
    if not path.exists():
        return CellConfig()
    return apply_config(ExperimentSpec(), parse_config(path.read_text(encoding="utf-8"))).cell


def emit_plotdata(result_dir, out_dir, figure: str) -> list[Path]:
    """Turn result CSVs into gnuplot-style ``.dat`` files plus a summary table.

    ROC figures (fig1, fig2, fig3, fig5) get one block per (series, power) with
    columns ``pf_analytic pm_analytic pf_emp pm_emp pm_bound``; sweep figures
    (fig4, fig6) get ``power_dBm eer_emp eer_analytic`` per series.  Blocks are
    separated by two blank lines and introduced by ``# series: <name>``.
    """
    result_dir, out_dir = Path(result_dir), Path(out_dir)
    summaries = sorted(result_dir.glob("*_summary.csv"))
    if not summaries:
        raise FileNotFoundError(f"no result files in {result_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    blocks = []
    table = []
    for path in summaries:
        series = path.name[: -len("_summary.csv")]
        rows = read_summary(path)
        table += [dict(r, series=series) for r in rows]
        if figure in ("fig4", "fig6"):
            data = np.array([[r["power_dBm"], r["eer_emp"], r["eer_analytic"]] for r in rows])
            blocks.append((series, "power_dBm eer_emp eer_analytic", data))
            continue
        for r in rows:
            roc = result_dir / f"{series}_{r['power_dBm']:g}dBm_roc.csv"
            rep = DetectionReport.from_csv(roc)
            M = int(r["num_antennas"])
            bound = np.full(len(rep.thresholds), np.nan)
            if not math.isnan(r["sigma_w"]) and np.all(np.isfinite(rep.pf_analytic)):
                dist = derive_lsf_constants(_stored_cell(result_dir, series))
                ls = [threshold_for_pf(p, r["sigma_w"], M) for p in np.clip(rep.pf_analytic, 1e-300, 1)]
                bound = np.asarray(pm_analytic_stat(np.array(ls), r["sigma_w"], M, dist))
            data = np.column_stack([rep.pf_analytic, rep.pm_analytic, rep.pf_empirical, rep.pm_empirical, bound])
            blocks.append((f"{series}@{r['power_dBm']:g}dBm", "pf_analytic pm_analytic pf_emp pm_emp pm_bound",
                           data))
    dat = out_dir / f"{figure}.dat"
    with open(dat, "w", encoding="utf-8") as fh:
        for i, (series, cols, data) in enumerate(blocks):
            if i:
                fh.write("\n\n")
            fh.write(f"# series: {series}\n# {cols}\n")
            np.savetxt(fh, data, fmt="%.10g")
    summ = out_dir / f"{figure}_summary.csv"
    with open(summ, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        cols = ("series",) + SUMMARY_COLUMNS
        w.writerow(cols)
        w.writerow(("name",) + SUMMARY_UNITS)
        for r in table:
            w.writerow([_fmt(r.get(c)) for c in cols])
    return [dat, summ]


def read_plotdata(path) -> dict[str, np.ndarray]:
    """Parse a ``.dat`` file written by :func:`emit_plotdata` into ``{series: array}``."""
    out, name, rows = {}, None, []
    for ln in Path(path).read_text(encoding="utf-8").splitlines():
        if ln.startswith("# series: "):
            if name is not None:
                out[name] = np.array(rows, dtype=float).reshape(len(rows), -1)
            name, rows = ln[len("# series: "):], []
        elif ln.startswith("#") or not ln.strip():
            continue
        else:
            rows.append([float(v) for v in ln.split()])
    if name is not None:
        out[name] = np.array(rows, dtype=float).reshape(len(rows), -1)
    return out
