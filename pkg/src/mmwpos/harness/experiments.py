"""Experiment drivers: bound sweeps, association sweeps, localization Monte-Carlo."""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Dict, List, Optional

import numpy as np

from mmwpos import fim
from mmwpos.assoc import (
    LOS,
    MASKS,
    NEW_VA,
    AssocTrialConfig,
    build_cost_matrix,
    run_assoc_trial,
    solve_assignment,
)
from mmwpos.geometry import GeometryError, wrap_angle
from mmwpos.harness.config import ExperimentConfig
from mmwpos.harness.results import ResultTable, provenance
from mmwpos.inference import BPConfig, ResampleError, build_factor_graph, run_bp
from mmwpos.inference.graph import ALPHA, BIAS, UE
from mmwpos.measurement import generate_measurements
from mmwpos.priors import centered_priors

logger = logging.getLogger(__name__)


class HarnessError(RuntimeError):
    """An experiment could not produce a trustworthy result."""


# --------------------------------------------------------------------------- bounds


def run_bounds_sweep(cfg: ExperimentConfig) -> ResultTable:
    """Bounds for every (n_nlos, LOS, map, bias) combination.

    The first NLOS paths reuse the scenario VAs; beyond those, extra VAs are
    drawn uniformly in the configured box, one realization per seed, and
    bounds are averaged over realizations.
    """
    scen = cfg.scenario.build()
    sigma = cfg.noise.build().sigma
    ue = scen.ue
    rows = []
    for n in range(cfg.bounds.max_nlos + 1):
        seeds = [cfg.seeds[0]] if n <= len(scen.vas) else list(cfg.seeds)
        for pc in fim.eight_combinations(n):
            res = []
            for s in seeds:
                res += fim.identifiability_table(ue.position, ue.orientation, ue.clock_bias, scen.bs,
                                                 scen.vas, [pc], sigma, seed=s, box=cfg.bounds.va_box)
            ident = all(r["identifiable"] for r in res)
            vaeb = [float(np.mean(r["vaeb"])) if len(r["vaeb"]) else 0.0 for r in res]
            rows.append({
                "config_id": f"los{int(pc.los)}_map{int(pc.map_known)}_bias{int(pc.bias_known)}",
                "L_nlos": n, "los": pc.los, "map": pc.map_known, "bias_known": pc.bias_known,
                "peb": float(np.mean([r["peb"] for r in res])),
                "oeb": float(np.mean([r["oeb"] for r in res])),
                "beb": float(np.mean([r["beb"] for r in res])),
                "vaeb_mean": float(np.mean(vaeb)) if n else 0.0,
                "identifiable": ident, "n_realizations": len(res),
            })
    rows.sort(key=lambda r: (r["config_id"], r["L_nlos"]))
    return ResultTable("bounds", rows, provenance(cfg, cfg.seeds))


# --------------------------------------------------------------------------- association


def assoc_cell_config(cfg: ExperimentConfig, orientation: str, bias_std: float, mask: str,
                      seed: int) -> AssocTrialConfig:
    pr = cfg.priors
    return AssocTrialConfig(
        scenario=cfg.scenario.build(), noise=cfg.noise.build(), ue_std=pr.ue_std,
        orientation_std=0.0 if orientation == "known" else pr.orientation_std,
        bias_std=bias_std, va_stds=tuple(pr.va_stds), mask=MASKS[mask],
        n_samples=cfg.assoc_samples, n_trials=cfg.trials, seed=seed,
        perturb_prior_means=pr.perturb_means,
    )


def run_assoc_sweep(cfg: ExperimentConfig) -> ResultTable:
    """DA error probability per (orientation flag, bias std, mask) cell.

    Every cell sees the same measurement and prior realizations (trial t of
    seed s), so cells can be compared pairwise.
    """
    rows, detail = [], {}
    for orient in cfg.assoc.orientation:
        for bstd in cfg.assoc.bias_stds:
            for mask in cfg.assoc.masks:
                per_trial = []
                errors = total = 0
                for s in cfg.seeds:
                    tc = assoc_cell_config(cfg, orient, bstd, mask, s)
                    for t in range(cfg.trials):
                        e, n = run_assoc_trial(tc, t)
                        per_trial.append(e)
                        errors += e
                        total += n
                rows.append({"orientation": orient, "bias_std": float(bstd), "mask": mask,
                             "p_error": errors / total, "errors": errors, "measurements": total,
                             "trials": cfg.trials * len(cfg.seeds)})
                detail[f"{orient}/{bstd!r}/{mask}"] = per_trial
    rows.sort(key=lambda r: (r["orientation"], r["bias_std"], r["mask"]))
    return ResultTable("assoc-sweep", rows, provenance(cfg, cfg.seeds), detail)


# --------------------------------------------------------------------------- localization


def _run_streams(seed: int, run: int):
    meas, prior, assoc, bp = np.random.SeedSequence([seed, run]).generate_state(4)
    return int(meas), int(prior), int(assoc), int(bp)


def localize_once(cfg: ExperimentConfig, seed: int, run: int = 0) -> dict:
    """One draw of measurements and prior means, association, then BP.

    Returns per-iteration squared errors keyed by variable and the final
    beliefs' summaries. VAs are matched to the truth through the path that
    generated their measurement.
    """
    scen = cfg.scenario.build()
    pr = cfg.priors
    s_meas, s_prior, s_assoc, s_bp = _run_streams(seed, run)
    Z = generate_measurements(scen, cfg.noise.build(), s_meas)
    priors = centered_priors(scen, pr.ue_std, pr.orientation_std, pr.bias_std, pr.va_stds,
                             pr.new_va_box, rng=np.random.default_rng(s_prior) if pr.perturb_means else None)
    if cfg.perfect_association:
        sources = []
        for src in Z.truth_sources:
            if src is None:
                sources.append(LOS)
            elif src < len(priors.va_priors) and priors.va_priors[src] is not None:
                sources.append(src)
            else:
                sources.append(NEW_VA)
    else:
        S = build_cost_matrix(Z, priors, scen.bs, n_samples=cfg.assoc_samples, seed=s_assoc,
                              use_components=MASKS[cfg.assoc_mask], los_candidate=scen.los)
        sources = solve_assignment(S).resolved()
    graph = build_factor_graph(Z, sources, priors, scen.bs)
    bp_cfg = BPConfig(n_msg_samples=cfg.msg_samples)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        result = run_bp(graph, cfg.iterations, cfg.particles, s_bp, bp_cfg)

    truth_ue = scen.ue.position[:2]
    va_truth = {}
    for p in graph.paths:
        if not p.los:
            src = Z.truth_sources[p.index]
            va_truth[p.va_var] = (None if src is None else scen.vas[src][:2], p.source != NEW_VA)
    hist = []
    for h in result.history:
        e_ue = h[UE][0] - truth_ue
        try:
            nees = float(e_ue @ np.linalg.solve(h[UE][1], e_ue))
        except np.linalg.LinAlgError:
            nees = float("inf")
        rec = {
            "ue": float(e_ue @ e_ue),
            "ue_nees": nees,
            "bias": float((h[BIAS][0][0] - scen.ue.clock_bias) ** 2),
            "orientation": float(wrap_angle(h[ALPHA][0][0] - scen.ue.orientation) ** 2),
            "va_prior": [], "va_new": [],
        }
        for var, (truth, has_prior) in va_truth.items():
            # a LOS measurement mislabelled as NLOS has no VA truth; count it as lost
            err = np.inf if truth is None else float(np.sum((h[var][0] - truth) ** 2))
            rec["va_prior" if has_prior else "va_new"].append(err)
        hist.append(rec)
    final = {k: (v[0].tolist(), np.sqrt(np.diag(np.atleast_2d(v[1]))).tolist())
             for k, v in result.history[-1].items()}
    return {"run": run, "seed": seed, "history": hist, "final": final,
            "sources": [s if s != LOS else "los" for s in sources],
            "va_truth": {k: (None if t is None else list(t), hp) for k, (t, hp) in va_truth.items()}}


def _safe_localize(args):
    cfg, seed, run = args
    try:
        return localize_once(cfg, seed, run)
    except (ResampleError, GeometryError, FloatingPointError) as e:
        return {"run": run, "seed": seed, "error": f"{type(e).__name__}: {e}"}


def hybrid_reference(cfg: ExperimentConfig) -> dict:
    """Hybrid-FIM bounds at the truth under the configured priors.

    Heights are known (UE z and VA z get the large known-value precision);
    VAs without a prior get zero horizontal prior information.
    """
    scen = cfg.scenario.build()
    pr = cfg.priors
    ue = scen.ue
    zeta = fim.zeta_from_scene(ue.position, ue.orientation, ue.clock_bias, scen.vas)
    sig = cfg.noise.build().sigma
    va_stds = []
    for i in range(len(scen.vas)):
        s = pr.va_stds[i] if i < len(pr.va_stds) else None
        va_stds.append((np.inf, np.inf, 0.0) if s is None else (s, s, 0.0))
    jp = fim.prior_information(len(scen.vas), ue_std=(pr.ue_std, pr.ue_std, 0.0),
                               orientation_std=pr.orientation_std, bias_std=pr.bias_std, va_stds=va_stds)
    res = fim.analyze(zeta, [sig] * scen.n_paths, scen.bs, los=scen.los, j_prior=jp)
    has_prior = np.array([s[0] != np.inf for s in va_stds])

    def rms(x):
        return float(np.sqrt(np.mean(np.square(x)))) if len(x) else float("nan")

    return {"peb": res.peb, "beb": res.beb, "oeb": res.oeb,
            "vaeb_prior": rms(res.vaeb[has_prior]), "vaeb_new": rms(res.vaeb[~has_prior])}


def run_localization_mc(cfg: ExperimentConfig, workers: int = 1) -> ResultTable:
    """RMSE per BP iteration over ``trials`` runs per seed, with hybrid-bound columns.

    Aborts with HarnessError when more than ``max_failure_rate`` of the runs fail.
    """
    jobs = [(cfg, s, r) for s in cfg.seeds for r in range(cfg.trials)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            runs = list(ex.map(_safe_localize, jobs))
    else:
        runs = [_safe_localize(j) for j in jobs]
    runs.sort(key=lambda r: (r["seed"], r["run"]))
    failed = [r for r in runs if "error" in r]
    if len(failed) > cfg.max_failure_rate * len(runs):
        msgs = "; ".join(f"seed {r['seed']} run {r['run']}: {r['error']}" for r in failed[:5])
        raise HarnessError(f"{len(failed)}/{len(runs)} BP runs failed ({msgs})")
    ok = [r for r in runs if "error" not in r]
    ref = hybrid_reference(cfg)
    rows = []
    for it in range(cfg.iterations):
        recs = [r["history"][it] for r in ok]

        def rmse(key):
            vals = [v for rec in recs for v in (rec[key] if isinstance(rec[key], list) else [rec[key]])]
            return float(np.sqrt(np.mean(vals))) if vals else float("nan")

        rows.append({
            "iteration": it + 1, "rmse_ue": rmse("ue"), "rmse_bias": rmse("bias"),
            "rmse_orientation": rmse("orientation"), "rmse_va_prior": rmse("va_prior"),
            "rmse_va_new": rmse("va_new"), "peb_hybrid": ref["peb"], "beb_hybrid": ref["beb"],
            "oeb_hybrid": ref["oeb"], "vaeb_prior_hybrid": ref["vaeb_prior"],
            "vaeb_new_hybrid": ref["vaeb_new"], "runs": len(ok),
        })
    meta = provenance(cfg, cfg.seeds)
    meta["failed_runs"] = [{"seed": r["seed"], "run": r["run"], "error": r["error"]} for r in failed]
    return ResultTable("mc", rows, meta, detail=runs)


def run_localize(cfg: ExperimentConfig) -> ResultTable:
    """Single end-to-end run (seed ``seeds[0]``): final estimate per variable."""
    scen = cfg.scenario.build()
    out = localize_once(cfg, cfg.seeds[0], 0)
    rows = []
    truth = {UE: scen.ue.position[:2], BIAS: [scen.ue.clock_bias, np.nan],
             ALPHA: [scen.ue.orientation, np.nan]}
    for var, (t, _) in out["va_truth"].items():
        truth[var] = [np.nan, np.nan] if t is None else t
    for var in sorted(out["final"]):
        mean, std = out["final"][var]
        est = list(mean) + [np.nan] * (2 - len(mean))
        sd = list(std) + [np.nan] * (2 - len(std))
        tr = list(truth[var])
        if var == ALPHA:
            err = abs(float(wrap_angle(est[0] - tr[0])))
        elif len(mean) == 1:
            err = abs(est[0] - tr[0])
        else:
            err = float(np.hypot(est[0] - tr[0], est[1] - tr[1]))
        rows.append({"variable": var, "est_x": est[0], "est_y": est[1], "truth_x": tr[0],
                     "truth_y": tr[1], "error": err, "std_x": sd[0], "std_y": sd[1]})
    return ResultTable("localize", rows, provenance(cfg, cfg.seeds[:1]), detail=out)


DRIVERS = {
    "bounds": run_bounds_sweep,
    "assoc-sweep": run_assoc_sweep,
    "localize": run_localize,
    "mc": run_localization_mc,
}
