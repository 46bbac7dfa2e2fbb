"""Command-line entry point: ``vdrisk <subcommand> [options]``.

Every artifact is staged in a scratch directory inside the output directory
and moved into place only when the whole subcommand succeeds, so a failing
run leaves no partial files behind.  Each artifact gets a ``<name>.run.json``
sidecar holding the run configuration.

Exit codes: 0 success, 2 usage, 3 data validation, 4 numerical failure,
5 scorer protocol.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import shlex
import shutil
import sys
import tempfile
import time as _time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import score2 as s2
from .aggregation import (
    CLASSIFY_THRESHOLD,
    DEFAULT_AGE_BINS,
    STRATIFY_THRESHOLD,
    aggregate_all,
    read_predictions_csv,
    stratified_metrics,
    write_predictions_csv,
    write_report_csv,
)
from .cohort import (
    ENDPOINTS,
    SyntheticCohortConfig,
    cohort_columns,
    columns_to_records,
    load_cohort,
    make_splits,
    simulate_columns,
    write_cohort,
)
from .discrimination import group_compare, write_group_csv, write_ratio_csv, write_roc_csv
from .errors import InvalidInputError, VdriskError
from .pipeline import (
    FIVE_YEARS_DAYS,
    MODELS,
    attach_score2,
    classify_by_hazard,
    compare_models,
    fit_cox,
    km_strata,
    parse_covariates,
    survival_at,
    synthesize_clip_predictions,
)
from .survival import write_km_csv
from .svg import km_svg, roc_svg

OUTPUT_ENV = "VDRISK_OUTPUT_DIR"
EMIT_KINDS = ("csv", "json", "svg")


# --------------------------------------------------------------------------
# run configuration and artifact staging


@dataclass
class RunConfig:
    command: str
    inputs: dict = field(default_factory=dict)
    seed: int = 0
    thresholds: dict = field(default_factory=lambda: {
        "vd_classify": CLASSIFY_THRESHOLD, "vd_stratify": STRATIFY_THRESHOLD,
        "score2": s2.DEFAULT_THRESHOLD})
    covariates: dict = field(default_factory=dict)
    emit: list = field(default_factory=lambda: list(EMIT_KINDS))
    parameters: dict = field(default_factory=dict)
    version: str = __version__

    def validate(self) -> None:
        for name, value in self.thresholds.items():
            if not (0.0 <= value <= 1.0):
                raise InvalidInputError(f"threshold {name} = {value} outside [0, 1]")


def _clean(obj, digits: int = 10):
    """JSON-ready copy with floats rounded to ``digits`` significant digits."""
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return float(format(v, f".{digits}g")) if math.isfinite(v) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v, digits) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist(), digits)
    return obj


def dump_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class ArtifactWriter:
    """Collects artifacts in a staging directory and commits them together."""

    def __init__(self, out_dir, config: RunConfig):
        self.out_dir = Path(out_dir)
        self.config = config
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self.stage = Path(tempfile.mkdtemp(prefix=".vdrisk-stage-", dir=self.out_dir))
        except OSError as exc:
            raise InvalidInputError(f"output directory {self.out_dir} is not writable: {exc}") from None
        self.names: list[str] = []

    def wants(self, name: str) -> bool:
        kind = Path(name).suffix.lstrip(".")
        return kind not in EMIT_KINDS or kind in self.config.emit

    def path(self, name: str) -> Path | None:
        """Staging path for ``name``, or None when its kind is not emitted."""
        if not self.wants(name):
            return None
        if name in self.names:
            raise InvalidInputError(f"artifact {name} written twice")
        self.names.append(name)
        return self.stage / name

    def json(self, name: str, obj) -> None:
        p = self.path(name)
        if p is not None:
            dump_json(p, obj)

    def text(self, name: str, text: str) -> None:
        p = self.path(name)
        if p is not None:
            p.write_text(text, encoding="utf-8", newline="\n")

    def commit(self) -> list[str]:
        config = asdict(self.config)
        for name in self.names:
            dump_json(self.stage / f"{name}.run.json", {"artifact": name, "run": config})
        for name in self.names:
            for fname in (name, f"{name}.run.json"):
                os.replace(self.stage / fname, self.out_dir / fname)
        self.abort()
        return list(self.names)

    def abort(self) -> None:
        shutil.rmtree(self.stage, ignore_errors=True)


# --------------------------------------------------------------------------
# shared helpers


def _load_columns(path, coefficients=None) -> dict:
    cohort = load_cohort(path)
    if cohort.label_mismatches:
        shown = ", ".join(cohort.label_mismatches[:10])
        print(f"warning: {len(cohort.label_mismatches)} stored hypertension labels disagree "
              f"with the blood-pressure rule and were recomputed ({shown})", file=sys.stderr)
    cols = cohort_columns(cohort.records, cohort.outcomes)
    if not cols["age"].size:
        raise InvalidInputError(f"cohort {path} has no rows")
    attach_score2(cols, s2.load_coefficients(coefficients))
    return cols


def _check_endpoint(name: str) -> str:
    if name not in ENDPOINTS:
        raise InvalidInputError(f"unknown endpoint {name!r}; choose from {', '.join(ENDPOINTS)}")
    return name


def _slug(covariates) -> str:
    for name, covs in MODELS.items():
        if tuple(covs) == tuple(covariates):
            return name.replace("+", "_")
    return "_".join(c.replace("vd_confidence", "vd") for c in covariates)


def _score2_mask(cols, covariates):
    """Models using SCORE2 are restricted to eligible participants with
    complete inputs (NaN risk); others use the full cohort."""
    if "score2" in covariates:
        return np.isfinite(cols["score2"])
    return None


def _km_artifacts(w: ArtifactWriter, cols, endpoint, by, threshold, horizon) -> dict:
    curves = km_strata(cols, endpoint, by, threshold)
    for label, curve in curves.items():
        p = w.path(f"km_{by}_{endpoint}_{label.split()[0].lower()}.csv")
        if p is not None:
            write_km_csv(p, curve)
    title = f"{endpoint.replace('_', ' ')} by {by}"
    w.text(f"km_{by}_{endpoint}.svg", km_svg(list(curves.items()), title, horizon))
    return {"endpoint": endpoint, "strata": by, "horizon_days": horizon,
            "survival_at_horizon": survival_at(curves, horizon),
            "n": {label: int(c.n_at_risk[0]) for label, c in curves.items()},
            "events": {label: int(c.n_events.sum()) for label, c in curves.items()}}


def _cox_artifact(w: ArtifactWriter, cols, endpoint, covariates, ties="efron", horizon=None) -> dict:
    fitted = fit_cox(cols, endpoint, covariates, _score2_mask(cols, covariates), horizon, ties)
    doc = fitted.model.to_dict()
    doc["endpoint"] = endpoint
    w.json(f"cox_{endpoint}_{_slug(covariates)}.json", doc)
    return doc


def _roc_nri(w: ArtifactWriter, cols, endpoint, horizon, model_a, model_b, cutpoints=None,
             roc_files=True, nri_file=True) -> dict:
    mask_cols = tuple(model_a) + tuple(model_b)
    res = classify_by_hazard(cols, endpoint, horizon, model_a, model_b, cutpoints)
    a_name, b_name = _slug(model_a), _slug(model_b)
    summary = {
        "endpoint": endpoint, "horizon_days": horizon, "n": res["n"], "n_events": res["n_events"],
        "model_a": list(model_a), "model_b": list(model_b),
        "auc_a": res["roc_a"].auc, "auc_b": res["roc_b"].auc,
        "classifier_a": {"intercept": res["classifier_a"].intercept, "slope": res["classifier_a"].slope,
                         "converged": res["classifier_a"].converged,
                         "diagnosis": res["classifier_a"].diagnosis},
        "classifier_b": {"intercept": res["classifier_b"].intercept, "slope": res["classifier_b"].slope,
                         "converged": res["classifier_b"].converged,
                         "diagnosis": res["classifier_b"].diagnosis},
        "reclassification": {"reference": list(model_b), "new": list(model_a),
                             "cutpoints": None if cutpoints is None else list(cutpoints),
                             **res["reclass"].to_dict()},
        "shared_covariates": sorted(set(mask_cols)),
    }
    if roc_files:
        for tag, name in (("a", a_name), ("b", b_name)):
            p = w.path(f"roc_{endpoint}_{name}.csv")
            if p is not None:
                write_roc_csv(p, res[f"roc_{tag}"])
        w.text(f"roc_{endpoint}_{a_name}_vs_{b_name}.svg",
               roc_svg([(a_name, res["roc_a"]), (b_name, res["roc_b"])],
                       f"{endpoint.replace('_', ' ')} within {horizon} days"))
        w.json(f"roc_{endpoint}_{a_name}_vs_{b_name}.json", summary)
    if nri_file:
        w.json(f"nri_{endpoint}_{a_name}_vs_{b_name}.json", summary)
    return summary


def _group_artifacts(w: ArtifactWriter, cols, threshold) -> list:
    continuous = ("age", "sbp", "dbp", "total_chol", "hdl_chol", "vd_confidence", "score2")
    binary = ("male", "smoker", "diabetes", "prior_cvd", "antihypertensive_med") + tuple(
        f"{e}_event" for e in ENDPOINTS)
    groups = group_compare(cols, threshold, continuous, binary)
    p = w.path("groups.csv")
    if p is not None:
        write_group_csv(p, groups)
    p = w.path("group_ratios.csv")
    if p is not None:
        write_ratio_csv(p, groups)
    doc = [{"vd": g.key[0], "hypertensive": g.key[1], "n": g.n, "empty": g.empty,
            "quartiles": {k: list(v) for k, v in g.quartiles.items()},
            "prevalence": {k: {"count": c, "fraction": f} for k, (c, f) in g.prevalence.items()}}
           for g in groups]
    w.json("groups.json", {"vd_threshold": threshold, "groups": doc})
    return groups


def _report_doc(report) -> dict:
    return {"n": report.n, "balanced_accuracy": report.balanced_accuracy, "f1": report.f1,
            "auc": report.auc,
            "strata": [{"age_bin": list(s.age_bin), "sex": s.sex, "n": s.n, "tp": s.tp, "fp": s.fp,
                        "tn": s.tn, "fn": s.fn, **s.rates(),
                        "fraction_of_total": s.n / report.n if report.n else None}
                       for s in report.strata]}


def _write_individuals(w: ArtifactWriter, preds) -> None:
    p = w.path("individuals.csv")
    if p is None:
        return
    with open(p, "w", encoding="utf-8", newline="") as fh:
        fh.write("participant_id,n_videos,confidence,vd_high\n")
        for pr in preds:
            fh.write(f"{pr.participant_id},{len(pr.video_means)},{pr.confidence:.10g},{int(pr.label)}\n")


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args, w: ArtifactWriter):
    config = _synthetic_config(args)
    cols = simulate_columns(config)
    records, outcomes = columns_to_records(cols)
    p = w.path("cohort.csv")
    if p is not None:
        write_cohort(p, records, outcomes)
    w.json("cohort_config.json", config.to_dict())
    return {"n": len(records)}


def _synthetic_config(args) -> SyntheticCohortConfig:
    data = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"cannot read cohort config {args.config}: {exc}") from None
    if args.n is not None:
        data["n"] = args.n
    data["seed"] = args.seed
    config = SyntheticCohortConfig.from_dict(data)
    config.validate()
    return config


def cmd_split(args, w: ArtifactWriter):
    n = args.n
    if args.cohort:
        n = len(load_cohort(args.cohort).records)
    if n is None:
        raise InvalidInputError("give --n or --cohort")
    plan = make_splits(n, args.k, args.val_frac, args.seed)
    w.json("splits.json", plan.to_dict())
    return {"n": n, "k": args.k}


def cmd_score2(args, w: ArtifactWriter):
    cols = _load_columns(args.cohort, args.coefficients)
    thr = args.score2_threshold
    p = w.path("score2.csv")
    if p is not None:
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write("participant_id,eligible,linear_predictor,uncalibrated_risk,calibrated_risk,stratum\n")
            for i, pid in enumerate(cols["participant_id"]):
                risk = cols["score2"][i]
                if math.isfinite(risk):
                    fh.write(f"{pid},1,{cols['score2_lp'][i]:.10g},{cols['score2_uncalibrated'][i]:.10g},"
                             f"{risk:.10g},{s2.stratify_score2(risk, thr)}\n")
                else:
                    fh.write(f"{pid},{int(cols['score2_eligible'][i])},,,,\n")
    ok = np.isfinite(cols["score2"])
    summary = {"n": int(ok.size), "eligible": int(cols["score2_eligible"].sum()), "scored": int(ok.sum()),
               "high": int(np.sum(cols["score2"][ok] >= thr)), "threshold": thr}
    w.json("score2_summary.json", summary)
    return summary


def cmd_km(args, w: ArtifactWriter):
    cols = _load_columns(args.cohort, args.coefficients)
    endpoint = _check_endpoint(args.endpoint)
    threshold = args.threshold
    if threshold is None:
        threshold = args.score2_threshold if args.strata == "score2" else args.vd_stratify
    summary = _km_artifacts(w, cols, endpoint, args.strata, threshold, args.horizon)
    summary["threshold"] = threshold
    w.json(f"km_{args.strata}_{endpoint}.json", summary)
    return summary


def cmd_cox(args, w: ArtifactWriter):
    cols = _load_columns(args.cohort, args.coefficients)
    covariates = parse_covariates(args.covariates)
    return _cox_artifact(w, cols, _check_endpoint(args.endpoint), covariates, args.ties, args.horizon)


def cmd_compare_c(args, w: ArtifactWriter):
    cols = _load_columns(args.cohort, args.coefficients)
    a, b = parse_covariates(args.model_a), parse_covariates(args.model_b)
    res = compare_models(cols, _check_endpoint(args.endpoint), a, b, args.horizon, args.method,
                         args.n_perm, args.seed)
    w.json(f"compare_c_{args.endpoint}_{_slug(a)}_vs_{_slug(b)}.json", res)
    return res


def cmd_roc(args, w: ArtifactWriter):
    cols = _load_columns(args.cohort, args.coefficients)
    return _roc_nri(w, cols, _check_endpoint(args.endpoint), args.horizon,
                    parse_covariates(args.model_a), parse_covariates(args.model_b), nri_file=False)


def cmd_nri(args, w: ArtifactWriter):
    cols = _load_columns(args.cohort, args.coefficients)
    cuts = None
    if args.cutpoints:
        try:
            cuts = [float(c) for c in args.cutpoints.split(",")]
        except ValueError:
            raise InvalidInputError(f"bad cut-points {args.cutpoints!r}") from None
    return _roc_nri(w, cols, _check_endpoint(args.endpoint), args.horizon,
                    parse_covariates(args.model_a), parse_covariates(args.model_b), cuts,
                    roc_files=False)


def cmd_group_compare(args, w: ArtifactWriter):
    cols = _load_columns(args.cohort, args.coefficients)
    threshold = args.vd_classify if args.threshold is None else args.threshold
    groups = _group_artifacts(w, cols, threshold)
    return {"groups": [g.n for g in groups]}


def _parse_age_bins(text):
    if not text:
        return DEFAULT_AGE_BINS
    try:
        edges = [float(x) for x in text.split(",")]
    except ValueError:
        raise InvalidInputError(f"bad age bins {text!r}") from None
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise InvalidInputError("age bin edges must be increasing")
    return tuple(zip(edges[:-1], edges[1:]))


def cmd_aggregate(args, w: ArtifactWriter):
    nested = read_predictions_csv(args.predictions)
    preds = aggregate_all(nested, args.vd_classify)
    _write_individuals(w, preds)
    out = {"individuals": len(preds)}
    if args.cohort:
        cohort = load_cohort(args.cohort)
        by_id = {r.participant_id: r for r in cohort.records}
        missing = [p.participant_id for p in preds if p.participant_id not in by_id]
        if missing:
            raise InvalidInputError(f"participant {missing[0]} has predictions but no cohort row")
        recs = [by_id[p.participant_id] for p in preds]
        report = stratified_metrics([p.confidence for p in preds], [r.hypertension_label for r in recs],
                                    [r.age for r in recs], [r.sex for r in recs],
                                    _parse_age_bins(args.age_bins), args.vd_classify)
        p = w.path("vd_report.csv")
        if p is not None:
            write_report_csv(p, report)
        w.json("vd_report.json", _report_doc(report))
        out.update(balanced_accuracy=report.balanced_accuracy, f1=report.f1, auc=report.auc)
    return out


def cmd_occlude(args, w: ArtifactWriter):
    from .xai import (LinearScorer, MaskSpec, SubprocessScorer, dataset_mean, occlude,
                      read_vten, select_representative, summarize, write_vten)

    paths = list(args.videos)
    videos = [read_vten(p) for p in paths]
    indices = list(range(len(videos)))
    if args.representative is not None:
        indices = select_representative(videos, args.representative)
    baseline = dataset_mean(videos) if args.baseline == "mean" else float(args.baseline)
    spec = MaskSpec(args.variant, tuple(args.patch), tuple(args.stride), args.window,
                    args.temporal_stride, baseline)
    if args.scorer_cmd:
        scorer = SubprocessScorer(shlex.split(args.scorer_cmd), timeout=args.timeout)
    elif args.weights:
        scorer = LinearScorer(read_vten(args.weights), args.offset)
    else:
        raise InvalidInputError("give --scorer-cmd or --weights")
    maps = []
    with scorer:
        for i in indices:
            maps.append(occlude(videos[i], spec, scorer, video_path=os.path.abspath(paths[i])))
    for i, m in zip(indices, maps):
        p = w.path(f"attribution_{i:04d}.vten")
        if p is not None:
            write_vten(p, m if m.ndim == 3 else m[None])
    summary = summarize(maps, args.top_frac)
    for name in ("mean", "median", "top_positive", "top_negative"):
        arr = np.asarray(getattr(summary, name), dtype=np.float64)
        p = w.path(f"summary_{name}.vten")
        if p is not None:
            write_vten(p, arr if arr.ndim == 3 else arr[None])
    doc = {"videos": [str(paths[i]) for i in indices], "variant": args.variant,
           "patch": list(args.patch), "stride": list(args.stride), "window": args.window,
           "baseline": baseline, "count": summary.count,
           "top_positive_cells": int(summary.top_positive.sum()),
           "top_negative_cells": int(summary.top_negative.sum())}
    w.json("occlusion.json", doc)
    return doc


def run_replica(args, w: ArtifactWriter) -> dict:
    """Synthetic end-to-end analysis: cohort, clip aggregation, SCORE2,
    survival curves, Cox comparisons, discrimination and group tables."""
    t0 = _time.perf_counter()
    config = _synthetic_config(args)
    cols = simulate_columns(config)
    cols["sex"] = np.where(cols["male"], "male", "female").astype(object)
    for k in ("age", "sbp", "dbp") + tuple(f"{e}_time_days" for e in ENDPOINTS):
        cols[k] = cols[k].astype(np.float64)

    # per-clip predictions around each participant's simulated confidence,
    # aggregated back to one confidence per participant
    nested = synthesize_clip_predictions(cols["participant_id"], cols["vd_confidence"], config.seed)
    p = w.path("clip_predictions.csv")
    if p is not None:
        write_predictions_csv(p, nested)
    preds = aggregate_all(nested, args.vd_classify)
    cols["vd_confidence"] = np.array([pr.confidence for pr in preds])
    _write_individuals(w, preds)
    report = stratified_metrics(cols["vd_confidence"], cols["hypertension_label"], cols["age"],
                                cols["sex"], DEFAULT_AGE_BINS, args.vd_classify)
    p = w.path("vd_report.csv")
    if p is not None:
        write_report_csv(p, report)
    w.json("vd_report.json", _report_doc(report))

    # cohort as analysed (aggregated confidences)
    records, outcomes = columns_to_records(cols)
    p = w.path("cohort.csv")
    if p is not None:
        write_cohort(p, records, outcomes)
    w.json("cohort_config.json", config.to_dict())

    attach_score2(cols, s2.load_coefficients(args.coefficients))
    horizon = float(config.horizon_days)

    km = {}
    for endpoint in ENDPOINTS:
        km[f"vd/{endpoint}"] = _km_artifacts(w, cols, endpoint, "vd", args.vd_stratify, horizon)
    km["hypertension/all_cause_death"] = _km_artifacts(w, cols, "all_cause_death", "hypertension",
                                                       None, horizon)
    km["score2/all_cause_death"] = _km_artifacts(w, cols, "all_cause_death", "score2",
                                                 args.score2_threshold, horizon)

    cox = {}
    for endpoint in ENDPOINTS:
        for name in ("age", "age+vd", "score2", "score2+vd"):
            cox[f"{endpoint}/{name}"] = _cox_artifact(w, cols, endpoint, MODELS[name])

    eligible = np.isfinite(cols["score2"])
    single = {}
    for name in ("age", "vd", "score2", "age+vd+score2"):
        fitted = fit_cox(cols, "all_cause_death", MODELS[name], eligible)
        doc = fitted.model.to_dict()
        doc["endpoint"] = "all_cause_death"
        doc["subset"] = "score2_scored"
        w.json(f"cox_all_cause_death_{_slug(MODELS[name])}_score2_subset.json", doc)
        single[name] = fitted.model.c_index

    comparisons = {}
    for endpoint in ENDPOINTS:
        for a, b in (("age+vd", "age"), ("score2+vd", "score2")):
            res = compare_models(cols, endpoint, MODELS[a], MODELS[b])
            w.json(f"compare_c_{endpoint}_{_slug(MODELS[a])}_vs_{_slug(MODELS[b])}.json", res)
            comparisons[f"{endpoint}/{a} vs {b}"] = res

    disc = _roc_nri(w, cols, "cardiac_death", FIVE_YEARS_DAYS, MODELS["vd"], MODELS["score2"])
    groups = _group_artifacts(w, cols, args.vd_classify)

    main = comparisons["all_cause_death/age+vd vs age"]
    km_vd = km["vd/all_cause_death"]["survival_at_horizon"]
    combined = single["age+vd+score2"]
    criteria = {
        "a_c_index_gain": {
            "c_age_vd": main["c_a"], "c_age": main["c_b"], "delta": main["delta"],
            "p_value": main["p_value"],
            "pass": bool(main["delta"] >= 0.02 and main["p_value"] < 0.05)},
        "b_combined_model": {
            "c_index": single, "pass": bool(all(combined >= single[k] for k in ("age", "vd", "score2")))},
        "c_km_ordering": {
            "survival_high_vd": km_vd.get("high VD"), "survival_low_vd": km_vd.get("low VD"),
            "horizon_days": horizon,
            "pass": bool(km_vd.get("high VD", 1.0) < km_vd.get("low VD", 0.0))},
    }
    summary = {
        "n": int(config.n), "seed": int(config.seed), "endpoint": "all_cause_death",
        "vd_classification": _report_doc(report) | {"strata": None},
        "km": km,
        "cox_c_index": {k: v["c_index"] for k, v in cox.items()},
        "comparisons": comparisons,
        "discrimination": {k: disc[k] for k in ("endpoint", "horizon_days", "n", "n_events",
                                                "auc_a", "auc_b", "reclassification")},
        "groups": {f"vd_{g.key[0]}/{'hypertensive' if g.key[1] else 'normotensive'}": g.n for g in groups},
        "criteria": criteria,
        "all_pass": all(c["pass"] for c in criteria.values()),
    }
    w.json("replica_summary.json", summary)
    summary["elapsed_s"] = _time.perf_counter() - t0
    return summary


def cmd_scorer(args):
    from .xai import serve_linear
    return serve_linear(args.weights, args.offset)


COMMANDS = {
    "simulate": cmd_simulate, "split": cmd_split, "score2": cmd_score2, "km": cmd_km, "cox": cmd_cox,
    "compare-c": cmd_compare_c, "roc": cmd_roc, "nri": cmd_nri, "group-compare": cmd_group_compare,
    "aggregate": cmd_aggregate, "occlude": cmd_occlude, "replica": run_replica,
}


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _report(UsageError(message), 2)
        raise SystemExit(2)


class UsageError(Exception):
    pass


def _pair(text: str) -> tuple:
    try:
        parts = [int(x) for x in text.lower().replace("x", ",").split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ROWS,COLS, got {text!r}") from None
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected ROWS,COLS, got {text!r}")
    return tuple(parts)


def _emit(text: str) -> list:
    kinds = [k.strip() for k in text.split(",") if k.strip()]
    bad = [k for k in kinds if k not in EMIT_KINDS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown emit kind {bad[0]!r}; choose from {EMIT_KINDS}")
    return [k for k in EMIT_KINDS if k in kinds]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None,
                        help=f"output directory (default: ${OUTPUT_ENV} or the current directory)")
    common.add_argument("--seed", type=int, default=7)
    common.add_argument("--emit", type=_emit, default=list(EMIT_KINDS), help="comma list of csv,json,svg")
    common.add_argument("--vd-classify", type=float, default=CLASSIFY_THRESHOLD)
    common.add_argument("--vd-stratify", type=float, default=STRATIFY_THRESHOLD)
    common.add_argument("--score2-threshold", type=float, default=s2.DEFAULT_THRESHOLD)

    cohort_in = argparse.ArgumentParser(add_help=False)
    cohort_in.add_argument("--cohort", required=True, help="cohort CSV")
    cohort_in.add_argument("--coefficients", default=None, help="SCORE2 coefficient JSON (default: demo set)")

    def model_args(p, endpoint="all_cause_death", a="age+vd", b="age"):
        p.add_argument("--endpoint", default=endpoint, choices=ENDPOINTS)
        p.add_argument("--model-a", default=a, help="covariates of the new model, e.g. age+vd")
        p.add_argument("--model-b", default=b, help="covariates of the reference model")

    parser = _Parser(prog="vdrisk", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic cohort")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON overrides for the cohort generator")

    p = sub.add_parser("split", parents=[common], help="plan test/train/validation folds")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--cohort", default=None)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--val-frac", type=float, default=0.2)

    sub.add_parser("score2", parents=[common, cohort_in], help="SCORE2 risks and strata")

    p = sub.add_parser("km", parents=[common, cohort_in], help="Kaplan-Meier curves by stratum")
    p.add_argument("--endpoint", default="all_cause_death", choices=ENDPOINTS)
    p.add_argument("--strata", default="vd", choices=("vd", "hypertension", "score2"))
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--horizon", type=float, default=5479.0)

    p = sub.add_parser("cox", parents=[common, cohort_in], help="fit a Cox model")
    p.add_argument("--endpoint", default="all_cause_death", choices=ENDPOINTS)
    p.add_argument("--covariates", default="age+vd",
                   help="model name (" + ", ".join(MODELS) + ") or comma list of columns")
    p.add_argument("--ties", default="efron", choices=("efron", "breslow"))
    p.add_argument("--horizon", type=float, default=None, help="administrative censoring in days")

    p = sub.add_parser("compare-c", parents=[common, cohort_in], help="test a C-index difference")
    model_args(p)
    p.add_argument("--method", default="ustat", choices=("ustat", "permutation"))
    p.add_argument("--n-perm", type=int, default=10000)
    p.add_argument("--horizon", type=float, default=None)

    for name, helptext in (("roc", "ROC curves of hazard-based classifiers"),
                           ("nri", "net reclassification and integrated discrimination")):
        p = sub.add_parser(name, parents=[common, cohort_in], help=helptext)
        model_args(p, "cardiac_death", "vd", "score2")
        p.add_argument("--horizon", type=float, default=FIVE_YEARS_DAYS)
        if name == "nri":
            p.add_argument("--cutpoints", default=None, help="comma list for categorical NRI")

    p = sub.add_parser("group-compare", parents=[common, cohort_in], help="four-group parameter tables")
    p.add_argument("--threshold", type=float, default=None, help="VD threshold (default --vd-classify)")

    p = sub.add_parser("aggregate", parents=[common], help="aggregate clip confidences per individual")
    p.add_argument("--predictions", required=True, help="CSV participant_id,video_id,clip_index,confidence")
    p.add_argument("--cohort", default=None, help="cohort CSV for the stratified report")
    p.add_argument("--age-bins", default=None, help="comma list of bin edges, e.g. 35,45,55,65,75,85")

    p = sub.add_parser("occlude", parents=[common], help="occlusion attribution of a video scorer")
    p.add_argument("videos", nargs="+", help="VTEN video files")
    p.add_argument("--scorer-cmd", default=None, help="command speaking the JSON-lines scorer protocol")
    p.add_argument("--weights", default=None, help="VTEN weights for the in-process linear scorer")
    p.add_argument("--offset", type=float, default=0.5)
    p.add_argument("--variant", default="masked_sequence", choices=("masked_sequence", "spatiotemporal"))
    p.add_argument("--patch", type=_pair, default=(16, 16))
    p.add_argument("--stride", type=_pair, default=(16, 16))
    p.add_argument("--window", type=int, default=2)
    p.add_argument("--temporal-stride", type=int, default=None)
    p.add_argument("--baseline", default="0", help="fill value or 'mean' for the dataset mean")
    p.add_argument("--representative", type=int, default=None, help="keep the N most typical videos")
    p.add_argument("--top-frac", type=float, default=0.05)
    p.add_argument("--timeout", type=float, default=60.0)

    p = sub.add_parser("replica", parents=[common], help="end-to-end synthetic analysis")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--config", default=None)
    p.add_argument("--coefficients", default=None)

    p = sub.add_parser("scorer", help="reference linear scorer speaking the JSON-lines protocol")
    p.add_argument("--weights", required=True)
    p.add_argument("--offset", type=float, default=0.5)
    return parser


def _run_config(args) -> RunConfig:
    inputs = {}
    for key in ("cohort", "predictions", "config", "coefficients", "weights"):
        value = getattr(args, key, None)
        if value:
            inputs[key] = {"path": str(value), "sha256": file_digest(value) if os.path.isfile(value) else None}
    for i, v in enumerate(getattr(args, "videos", None) or []):
        inputs[f"video_{i}"] = {"path": str(v), "sha256": file_digest(v) if os.path.isfile(v) else None}
    covariates = {}
    for key in ("covariates", "model_a", "model_b"):
        value = getattr(args, key, None)
        if value:
            covariates[key] = list(parse_covariates(value))
    if args.command == "replica":
        covariates = {name: list(c) for name, c in MODELS.items()}
    skip = {"out", "seed", "emit", "vd_classify", "vd_stratify", "score2_threshold", "command",
            "cohort", "predictions", "config", "coefficients", "weights", "videos",
            "covariates", "model_a", "model_b"}
    params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())
              if k not in skip}
    return RunConfig(
        command=args.command, inputs=inputs, seed=args.seed,
        thresholds={"vd_classify": args.vd_classify, "vd_stratify": args.vd_stratify,
                    "score2": args.score2_threshold},
        covariates=covariates, emit=list(args.emit), parameters=params)


def _report(exc: BaseException, code: int) -> None:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("row", "column", "variable", "request_id"):
        if getattr(exc, attr, None) is not None:
            doc[attr] = getattr(exc, attr)
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)


def run(argv=None) -> int:
    """Parse ``argv``, run one subcommand and return its exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "scorer":
        return cmd_scorer(args)
    writer = None
    try:
        config = _run_config(args)
        config.validate()
        out = args.out or os.environ.get(OUTPUT_ENV) or "."
        writer = ArtifactWriter(out, config)
        result = COMMANDS[args.command](args, writer)
        names = writer.commit()
    except VdriskError as exc:
        if writer is not None:
            writer.abort()
        _report(exc, exc.exit_code)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        if writer is not None:
            writer.abort()
        _report(exc, 3)
        return 3
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        if writer is not None:
            writer.abort()
        _report(exc, 4)
        return 4
    except BaseException:
        if writer is not None:
            writer.abort()
        raise
    brief = {"command": args.command, "artifacts": len(names)}
    if args.command == "replica":
        brief["criteria"] = {k: v["pass"] for k, v in result["criteria"].items()}
        brief["elapsed_s"] = round(result["elapsed_s"], 2)
    print(json.dumps(brief, sort_keys=True))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
