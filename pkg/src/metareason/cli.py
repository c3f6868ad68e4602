"""Command-line pipeline: curate, consolidate, estimate, weights, loss, metrics, simulate.

Every subcommand reads JSONL, writes its outputs atomically into ``--out``
(default: ``$METAREASON_OUT_DIR`` or ``./out``) and prints a one-line JSON
summary. Exit status: 0 ok, 1 invalid input or usage, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import asdict, replace
from pathlib import Path

from . import io
from .consolidation import (
    Escalated,
    apply_adjudication,
    consolidate_trace,
    parse_annotation,
    segment_labels,
)
from .curation import DrawRecord, curate
from .errors import SchemaError, ValidationError
from .estimation import EMConfig, MatrixSet, estimate_partitioned
from .metrics import evaluate
from .reward import (
    ClipBounds,
    KTOParams,
    LogRatioRecord,
    WeightProfile,
    batch_loss,
    implicit_reward,
    subjective_value,
    unweighted_reward,
    update_baseline,
    weight_profile,
)
from .synthetic import GeneratorConfig, balanced_ground_truth, simulate_chains
from .taxonomy import STATE_NAMES, Polarity, ReasoningTrace, Segment

OUT_DIR_ENV = "METAREASON_OUT_DIR"
MATRIX_FILES = {"pooled": "P_all.json", "positive": "P_pos.json", "negative": "P_neg.json"}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    cfg = io.read_json(path)
    if not isinstance(cfg, dict):
        raise SchemaError(f"{path}: config must be a JSON object")
    return cfg


def _build(cls, fields: dict, section: str):
    try:
        return cls(**fields)
    except TypeError as exc:
        raise SchemaError(f"config section {section!r}: {exc}") from None


def _em_config(args, cfg: dict) -> EMConfig:
    base = dict(cfg.get("em", {}))
    for key in ("max_iter", "tol", "dp", "smoothing_alpha"):
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    return _build(EMConfig, base, "em")


def _clip(args, cfg: dict) -> ClipBounds:
    if getattr(args, "clip", None):
        return ClipBounds.parse(args.clip)
    c = cfg.get("clip", {})
    return ClipBounds(float(c.get("m", 0.2)), float(c.get("M", 5.0)))


def _kto_params(args, cfg: dict) -> KTOParams:
    base = dict(cfg.get("kto", {}))
    for key in ("beta", "lambda_c", "lambda_r", "lambda_y", "z0", "z0_decay"):
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    return _build(KTOParams, base, "kto")


def _read_traces(path) -> list[ReasoningTrace]:
    return io.read_records(path, ReasoningTrace.from_record)


def cmd_curate(args, out: Path) -> dict:
    traces = _read_traces(args.traces)
    draws = {}
    for lineno, rec in io.iter_jsonl(args.draws):
        try:
            draws[str(rec["id"])] = [DrawRecord.from_record(d) for d in rec["draws"]]
        except KeyError as exc:
            raise SchemaError(f"{args.draws}:{lineno}: missing field {exc.args[0]!r}") from None
        except ValidationError as exc:
            raise SchemaError(f"{args.draws}:{lineno}: {exc}") from None
    report = curate(traces, draws, length_filter=not args.no_length_filter)
    io.write_jsonl(out / "curated.jsonl", (t.to_record() for t in report.pool.traces))
    io.write_json(out / "curation_stats.json", report.summary())
    return {"kept": len(report.pool), "totals": report.pool.totals()}


def _annotations_by_id(path) -> dict:
    out = {}
    for lineno, rec in io.iter_jsonl(path):
        try:
            out[str(rec["id"])] = parse_annotation(rec)
        except KeyError:
            raise SchemaError(f"{path}:{lineno}: missing field 'id'") from None
        except ValidationError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from None
    return out


def cmd_consolidate(args, out: Path) -> dict:
    ann_a = _annotations_by_id(args.annotations_a)
    ann_b = _annotations_by_id(args.annotations_b)
    if set(ann_a) != set(ann_b):
        raise SchemaError("annotator files cover different trace ids")
    adjudications: dict[tuple[str, int], dict] = {}
    if args.adjudications:
        for lineno, rec in io.iter_jsonl(args.adjudications):
            try:
                step = rec["step"]
                adjudications[(str(rec["id"]), int(step["step_number"]))] = step
            except (KeyError, TypeError):
                raise SchemaError(f"{args.adjudications}:{lineno}: expected {{id, step}}") from None

    consolidated, escalations, labels_by_id = [], [], {}
    for tid in ann_a:
        outcomes, _ = consolidate_trace(ann_a[tid], ann_b[tid])
        resolved = []
        for o in outcomes:
            if isinstance(o, Escalated) and (tid, o.step_number) in adjudications:
                o = apply_adjudication(o, adjudications[(tid, o.step_number)])
            resolved.append(o)
        steps_a = {s.step_number: s for s in ann_a[tid]}
        steps_b = {s.step_number: s for s in ann_b[tid]}
        for o in resolved:
            if isinstance(o, Escalated):
                escalations.append({
                    "id": tid,
                    **o.to_record(),
                    "annotator_a": steps_a[o.step_number].to_record(),
                    "annotator_b": steps_b[o.step_number].to_record(),
                })
        consolidated.append({"id": tid, "steps": [o.to_record() for o in resolved]})
        labels_by_id[tid] = resolved

    result = {"traces": len(consolidated), "escalations": len(escalations)}
    io.write_jsonl(out / "consolidated.jsonl", consolidated)
    io.write_jsonl(out / "escalations.jsonl", escalations)
    if args.traces:
        labelled = []
        for trace in _read_traces(args.traces):
            outcomes = labels_by_id.get(trace.id)
            labels = None if outcomes is None else segment_labels(outcomes, len(trace.segments))
            labelled.append(replace(trace, labels=None if labels is None else tuple(labels)).to_record())
        io.write_jsonl(out / "labeled_traces.jsonl", labelled)
        result["labeled"] = sum(r["labels"] is not None for r in labelled)
    return result


def cmd_estimate(args, out: Path) -> dict:
    cfg = _em_config(args, _load_config(args.config))
    traces = [t for t in _read_traces(args.traces) if t.labels is not None or not args.skip_unlabeled]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        est = estimate_partitioned(traces, cfg)
    for name, fname in MATRIX_FILES.items():
        io.save_em_result(out / fname, getattr(est, name))
    return {
        "traces": len(traces),
        "iterations": {k: getattr(est, k).iterations_run for k in MATRIX_FILES},
        "warnings": [str(w.message) for w in caught],
    }


def _load_matrices(directory) -> tuple[MatrixSet, str]:
    d = Path(directory)
    paths = [d / MATRIX_FILES[k] for k in ("pooled", "positive", "negative")]
    results = [io.load_em_result(p) for p in paths]
    return MatrixSet(*(r.matrix for r in results)), io.fingerprint(*paths)


def cmd_weights(args, out: Path) -> dict:
    clip = _clip(args, _load_config(args.config))
    matrices, fp = _load_matrices(args.matrices)
    records = []
    for trace in _read_traces(args.traces):
        prof = weight_profile(trace, matrices, clip)
        records.append({
            "trace_id": prof.trace_id,
            "polarity": prof.polarity.value,
            "weights": list(prof.weights),
            "clip": {"m": clip.lower, "M": clip.upper},
            "matrices_fingerprint": fp,
        })
    io.write_jsonl(out / "weights.jsonl", records)
    return {"profiles": len(records), "matrices_fingerprint": fp}


def cmd_loss(args, out: Path) -> dict:
    params = _kto_params(args, _load_config(args.config))
    profiles = io.read_records(args.weights, WeightProfile.from_record)
    logs = {r.trace_id: r for r in io.read_records(args.logratios, LogRatioRecord.from_record)}
    per_record, values, kls = [], [], []
    for prof in profiles:
        rec = logs.get(prof.trace_id)
        if rec is None:
            raise SchemaError(f"no log-ratio record for trace {prof.trace_id!r}")
        reward = unweighted_reward(rec) if args.unweighted else implicit_reward(prof, rec)
        value = subjective_value(reward, prof.polarity, params)
        values.append(value)
        if rec.think_kl_estimate is not None:
            kls.append(rec.think_kl_estimate)
        per_record.append({"trace_id": prof.trace_id, "reward": reward, "value": value})
    loss = batch_loss(values, params)
    report = {
        "batch_size": len(values),
        "z0": params.z0,
        "loss": loss,
        "weighted": not args.unweighted,
        "params": asdict(params),
        "per_record": per_record,
    }
    if kls:
        report["z0_next"] = update_baseline(params, kls).z0
    io.write_json(out / "loss_report.json", report)
    return {"batch_size": len(values), "loss": loss}


def cmd_metrics(args, out: Path) -> dict:
    predictions = [rec for _, rec in io.iter_jsonl(args.predictions)] if args.predictions else []
    gold = {str(r["id"]): r["gold_answers"] for r in predictions if "gold_answers" in r}
    if args.gold:
        for lineno, rec in io.iter_jsonl(args.gold):
            if "id" not in rec or "gold_answers" not in rec:
                raise SchemaError(f"{args.gold}:{lineno}: expected {{id, gold_answers}}")
            gold[str(rec["id"])] = rec["gold_answers"]
    claims = [rec for _, rec in io.iter_jsonl(args.claims)] if args.claims else []
    try:
        report = evaluate(predictions, gold, claims, k=args.k, strict=args.strict)
    except KeyError as exc:
        raise SchemaError(f"record missing field {exc.args[0]!r}") from None
    doc = report.to_json()
    io.write_json(out / "metrics_report.json", doc)
    return {k: v for k, v in doc.items() if k != "per_record"}


def cmd_simulate(args, out: Path) -> dict:
    if args.matrix:
        truth = io.load_em_result(args.matrix).matrix
    else:
        truth = balanced_ground_truth(args.seed, mean_length=args.mean_length)
        io.write_json(out / "ground_truth.json", {
            "states": list(STATE_NAMES),
            "matrix": truth.values,
            "mask": truth.mask.astype(int),
        })
    gen = GeneratorConfig(args.seed, args.count, args.pair_probability, args.max_length)
    chains, truncated = simulate_chains(truth, gen)
    polarity = Polarity.parse(args.polarity)
    records = []
    for i, seq in enumerate(chains):
        labels = tuple(seq[1:-1])
        segments = tuple(Segment(t, "[" + "+".join(ls.names()) + "]", 1) for t, ls in enumerate(labels))
        trace = ReasoningTrace(
            id=f"sim-{args.seed}-{i}",
            question=f"synthetic question {i}",
            gold_answers=("synthetic",),
            segments=segments,
            labels=labels,
            polarity=polarity,
            source="synthetic",
        )
        records.append(trace.to_record())
    io.write_jsonl(out / "traces.jsonl", records)
    return {"traces": len(records), "truncated": truncated}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="metareason", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--out", help=f"output directory (default ${OUT_DIR_ENV} or ./out)")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("curate", cmd_curate, "label polarity from draws, dedupe, length-filter")
    sp.add_argument("--traces", required=True)
    sp.add_argument("--draws", required=True)
    sp.add_argument("--no-length-filter", action="store_true")

    sp = add("consolidate", cmd_consolidate, "merge two annotators' labels")
    sp.add_argument("--annotations-a", required=True, help="annotator A JSONL (its confidences win on agreement)")
    sp.add_argument("--annotations-b", required=True)
    sp.add_argument("--adjudications", help="JSONL of {id, step} answers for escalated steps")
    sp.add_argument("--traces", help="trace JSONL to attach consolidated labels to")

    sp = add("estimate", cmd_estimate, "fit pooled/positive/negative transition matrices")
    sp.add_argument("--traces", required=True)
    sp.add_argument("--config")
    sp.add_argument("--max-iter", dest="max_iter", type=int)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--dp", type=float)
    sp.add_argument("--smoothing", dest="smoothing_alpha", type=float)
    sp.add_argument("--skip-unlabeled", action="store_true")

    sp = add("weights", cmd_weights, "per-trace transition-advantage weights")
    sp.add_argument("--traces", required=True)
    sp.add_argument("--matrices", required=True)
    sp.add_argument("--clip", help="lower:upper, e.g. 0.2:5.0")
    sp.add_argument("--config")

    sp = add("loss", cmd_loss, "implicit rewards, values and batch loss")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--logratios", required=True)
    sp.add_argument("--config")
    sp.add_argument("--unweighted", action="store_true", help="ignore the weights (plain KTO reward)")
    sp.add_argument("--beta", type=float)
    sp.add_argument("--lambda-c", dest="lambda_c", type=float)
    sp.add_argument("--lambda-r", dest="lambda_r", type=float)
    sp.add_argument("--lambda-y", dest="lambda_y", type=float)
    sp.add_argument("--z0", type=float)
    sp.add_argument("--z0-decay", dest="z0_decay", type=float)

    sp = add("metrics", cmd_metrics, "EM flags, Acc, Mis and F1@K")
    sp.add_argument("--predictions")
    sp.add_argument("--gold", help="JSONL with {id, gold_answers}; trace files work")
    sp.add_argument("--claims", help="JSONL with {id, supported, total_claims}")
    sp.add_argument("--k", type=int)
    sp.add_argument("--strict", action="store_true", help="raw string equality for the answer flag")

    sp = add("simulate", cmd_simulate, "sample labelled traces from a known matrix")
    sp.add_argument("--matrix", help="matrix JSON; default is a generated balanced ground truth")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--count", type=int, default=1000)
    sp.add_argument("--pair-probability", type=float, default=0.0)
    sp.add_argument("--max-length", type=int, default=200)
    sp.add_argument("--mean-length", type=float, default=8.0)
    sp.add_argument("--polarity", choices=["positive", "negative"])
    return p


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _UsageError(parser.format_help())
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    out = Path(args.out or os.environ.get(OUT_DIR_ENV) or "out")
    try:
        summary = args.fn(args, out)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({"command": args.command, "status": "ok", "out": str(out), **summary}, sort_keys=True))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
