"""Command-line entry point. Verbs communicate only through files.

    apakit ingest --root so762/ --out corpus/
    apakit rater-qc --raters raters.jsonl
    apakit render-prompts --corpus corpus/test.jsonl --task full --out prompts.jsonl
    apakit infer --prompts prompts.jsonl --out records.jsonl [--dry-run] [--resume]
    apakit parse --responses records.jsonl --task full --out parsed.jsonl
    apakit gen-pairs --corpus corpus/train.jsonl --target word.accuracy --out pairs.jsonl
    apakit grad-check --seed 7
    apakit train-toy --steps 2000 --trace trace.csv
    apakit score --pred parsed.jsonl --gold corpus/test.jsonl --task full
    apakit report --metrics metrics.json --out-dir reports/
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ApaError

log = logging.getLogger("apakit")


def header(verb: str, seed=None, **extra) -> dict:
    h = {"tool": "apakit", "version": __version__, "verb": verb}
    if seed is not None:
        h["seed"] = seed
    h.update(extra)
    return h


def write_jsonl(path, records, head: dict) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"_header": head}, sort_keys=True) + "\n")
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
            n += 1
    return n


def read_jsonl(path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise ApaError(f"file not found: {path}")
    out = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ApaError(f"{path}:{n}: invalid JSON ({e.msg})") from None
        if isinstance(rec, dict) and "_header" in rec:
            continue
        out.append(rec)
    return out


def _values(args) -> dict:
    """Config file values overridden by any flag given on the command line."""
    from .config import KEYS, read_config

    values = read_config(args.config) if getattr(args, "config", None) else {}
    for key in KEYS:
        v = getattr(args, key.replace("-", "_") if key != "lambda" else "lam", None)
        if v is not None:
            values[key] = v
    return values


def _pipeline(args):
    from .config import PipelineConfig

    return PipelineConfig.from_values(_values(args))


# --------------------------------------------------------------------------
# verbs


def cmd_ingest(args):
    from .corpus import SchemaDescriptor, load_corpus, write_canonical

    values = _values(args)
    root = args.root or values.get("corpus_root")
    if not root:
        raise ApaError("ingest needs --root (or corpus_root in the config file)")
    schema = SchemaDescriptor.from_mapping(json.loads(args.schema)) if args.schema else SchemaDescriptor()
    out = Path(args.out or values.get("output_dir", "out"))
    splits = load_corpus(root, schema)
    quarantine = []
    for name, split in splits.items():
        n = write_canonical(split.utterances, out / f"{name}.jsonl", header(f"ingest:{name}"))
        print(f"{name}: {n} utterances, {len(split.speakers)} speakers, {len(split.quarantine)} quarantined")
        quarantine += [{"split": name, "utterance_id": u, "violations": v} for u, v in split.quarantine]
    write_jsonl(out / "quarantine.jsonl", quarantine, header("ingest:quarantine"))


def cmd_rater_qc(args):
    from .corpus import QcThresholds, load_rater_sets, rater_qc

    t = QcThresholds(args.sentence_pcc_min, args.sentence_scc_min, args.word_pcc_min, args.word_scc_min,
                     strict=not args.inclusive)
    report = rater_qc(load_rater_sets(args.raters), t)

    def f(v):
        return "-" if v is None else f"{v:.3f}"

    print(f"{'pair':<20} {'sent PCC':>9} {'sent SCC':>9} {'word PCC':>9} {'word SCC':>9}  status")
    for p in report.pairs:
        status = "FLAGGED " + ",".join(p.failures) if p.flagged else "ok"
        print(f"{p.rater_a + '/' + p.rater_b:<20} {f(p.sentence_pcc):>9} {f(p.sentence_scc):>9} "
              f"{f(p.word_pcc):>9} {f(p.word_scc):>9}  {status}")
    print("QC " + ("PASS" if report.passed else "FAIL"))
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict() | {"_header": header("rater-qc")}, indent=2) + "\n")


def cmd_render_prompts(args):
    from .corpus import read_canonical
    from .promptgen import render

    cfg = _pipeline(args)
    recs = []
    for ann in read_canonical(args.corpus):
        p = render(ann, cfg.task)
        recs.append({"utterance_id": ann.utterance_id, "prompt": p.text, "audio_path": ann.audio_path})
    n = write_jsonl(args.out, recs, header("render-prompts", task=str(cfg.task)))
    print(f"rendered {n} prompts")


def cmd_infer(args):
    from . import client

    cfg = _pipeline(args)
    items = [client.PromptItem(r["utterance_id"], r["prompt"], r.get("audio_path")) for r in read_jsonl(args.prompts)]
    out = Path(args.out)
    if args.resume:
        records = client.resume(out, items, cfg.endpoint, dry_run=args.dry_run, transport=TRANSPORT,
                                 audio_root=args.audio_root)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps({"_header": header("infer")}) + "\n")
        records = client.submit_batch(items, cfg.endpoint, dry_run=args.dry_run, record_path=out,
                                      transport=TRANSPORT, audio_root=args.audio_root)
    ok = failed = 0
    for r in records:
        ok += r.error is None
        failed += r.error is not None
    print(f"submitted {ok + failed}: {ok} ok, {failed} failed")


# Swappable transport for `infer`; tests install an httpx.MockTransport here.
TRANSPORT = None


def cmd_parse(args):
    from .errors import ParseError
    from .promptgen import TaskSpec
    from .respparse import parse

    cfg = _pipeline(args)
    parsed, errors = [], []
    latest: dict[str, dict] = {}
    for r in read_jsonl(args.responses):
        uid = str(r["utterance_id"])
        if "raw_text" in r:
            latest[uid] = {"text": r["raw_text"]}
        elif r.get("error") is None and not r.get("dry_run"):
            latest[uid] = {"text": r.get("response", "")}
        elif uid not in latest or "error" in latest[uid]:
            latest[uid] = {"error": f"inference: {r.get('error') or 'dry run'}"}
    for uid, r in latest.items():
        if "error" in r:
            errors.append({"utterance_id": uid, "error": r["error"]})
            continue
        try:
            resp = parse(r["text"], cfg.task, strict=not args.lenient)
        except ParseError as e:
            errors.append({"utterance_id": uid, "error": str(e), "line": e.line, "column": e.column,
                           "fragment": e.fragment})
            continue
        parsed.append({"utterance_id": uid, "response": resp.to_dict(), "warnings": resp.warnings})
    write_jsonl(args.out, parsed, header("parse", task=str(cfg.task)))
    err_path = args.errors or str(Path(args.out).with_suffix("")) + ".errors.jsonl"
    write_jsonl(err_path, errors, header("parse:errors"))
    print(f"parsed {len(parsed)}, failed {len(errors)} (errors in {err_path})")


def cmd_gen_pairs(args):
    from .corpus import read_canonical
    from .prefsim import GenerationStats, generate_dataset

    cfg = _pipeline(args)
    stats = GenerationStats()
    pairs = generate_dataset(read_canonical(args.corpus), cfg.task, cfg.perturb, args.n, stats)
    n = write_jsonl(args.out, (p.to_record(cfg.task) for p in pairs),
                    header("gen-pairs", cfg.seed, task=str(cfg.task), target=".".join(cfg.perturb.target)))
    print(f"{n} pairs from {stats.utterances} utterances; skipped {stats.skipped_missing_target} "
          f"without target, {stats.skipped_degenerate} degenerate")


def cmd_grad_check(args):
    from .simpo import grad_check

    seed = args.seed if args.seed is not None else 0
    res = grad_check(seed=seed, n_configs=args.configs, tolerance=args.tol)
    print(f"max rel err {res.max_rel_err:.1e} {'PASS' if res.passed else 'FAIL'}")
    return 0 if res.passed else 1


def cmd_train_toy(args):
    from .simpo import CharTokenizer, ToyScorer, corrupted_pairs, trace_csv, train_toy

    cfg = _pipeline(args)
    rng = np.random.default_rng(cfg.seed)
    if args.pairs:
        tok = CharTokenizer()
        pairs = [(tok.encode(r["chosen"]), tok.encode(r["rejected"])) for r in read_jsonl(args.pairs)]
        vocab = tok.vocab_size
    else:
        vocab = args.vocab
        pairs = corrupted_pairs(rng, vocab, args.n_pairs)
    if not pairs:
        raise ApaError("no training pairs")
    scorer = ToyScorer.random(vocab, rng, 0.1)
    _, trace = train_toy(pairs, scorer, cfg.simpo, args.steps, args.lr)
    first, last = trace[0], trace[-1]
    print(f"loss {first.total:.6f} -> {last.total:.6f}; reward gap {first.reward_gap:.4f} -> {last.reward_gap:.4f} "
          f"(gamma {cfg.simpo.gamma})")
    if args.trace:
        Path(args.trace).parent.mkdir(parents=True, exist_ok=True)
        Path(args.trace).write_text(trace_csv(trace, json.dumps(header("train-toy", cfg.seed))))
    if args.figure:
        from .plotting import plot_loss_trace

        plot_loss_trace(trace, args.figure)


def _load_predictions(path):
    from .respparse import AssessmentResponse

    responses, failures = {}, {}
    for r in read_jsonl(path):
        uid = str(r["utterance_id"])
        if r.get("response") is not None:
            responses[uid] = AssessmentResponse.from_dict(r["response"])
        else:
            failures[uid] = r.get("error", "unparsed")
    return responses, failures


def cmd_score(args):
    from .corpus import read_canonical
    from .metrics import evaluate, render_report

    cfg = _pipeline(args)
    responses, failures = _load_predictions(args.pred)
    if args.errors:
        for r in read_jsonl(args.errors):
            failures.setdefault(str(r["utterance_id"]), r.get("error", "parse error"))
    report = evaluate(responses, read_canonical(args.gold), cfg.task, cfg.phone_rmse_scale, failures)
    print(render_report(report, "json" if args.json else "text", label=args.label), end="")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(report.to_dict() | {"_header": header("score", task=str(cfg.task))},
                                             indent=2, sort_keys=True) + "\n")


def cmd_report(args):
    from . import plotting
    from .corpus import Bucket, CorpusSplit, distribution_report, read_canonical
    from .metrics import MetricReport, render_report
    from .simpo import TraceRow

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.metrics:
        report = MetricReport.from_dict(json.loads(Path(args.metrics).read_text(encoding="utf-8")))
        stamp = f"# apakit {__version__} report\n"
        (out / "metrics.txt").write_text(stamp + render_report(report, "text", label=args.label))
        (out / "metrics.csv").write_text(stamp + render_report(report, "csv"))
        written += [out / "metrics.txt", out / "metrics.csv",
                    plotting.plot_metric_report(report, out / "metrics.png")]
        print(render_report(report, args.format, label=args.label), end="")
    if args.corpus:
        split = CorpusSplit(Path(args.corpus).stem, read_canonical(args.corpus))
        buckets = [Bucket.parse(b) for b in args.buckets]
        hist = distribution_report(split, args.aspect, buckets, args.granularity)
        lines = [f"# apakit {__version__} distribution", "bucket,count"] + [f"{b},{n}" for b, n in hist]
        (out / "distribution.csv").write_text("\n".join(lines) + "\n")
        for b, n in hist:
            print(f"{args.granularity} {args.aspect} {b}: {n}")
        written += [out / "distribution.csv", plotting.plot_distribution(
            hist, out / "distribution.png", f"{split.name}: {args.granularity} {args.aspect}")]
    if args.trace:
        import csv

        with open(args.trace, encoding="utf-8") as fh:
            rows = [r for r in csv.DictReader(line for line in fh if not line.startswith("#"))]
        trace = [TraceRow(int(r["step"]), float(r["simpo"]), float(r["ce"]), float(r["total"]),
                          float(r["reward_gap"])) for r in rows]
        written.append(plotting.plot_loss_trace(trace, out / "loss_trace.png"))
    if not written:
        raise ApaError("report needs --metrics, --corpus or --trace")
    for p in written:
        log.info("wrote %s", p)


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    task = argparse.ArgumentParser(add_help=False)
    task.add_argument("--task", help="'full' or e.g. 'sentence:accuracy,fluency;word:total'")

    p = argparse.ArgumentParser(prog="apakit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"apakit {__version__}")
    sub = p.add_subparsers(dest="verb", required=True, metavar="VERB")

    s = sub.add_parser("ingest", parents=[common], help="load a raw corpus into canonical JSON-Lines")
    s.add_argument("--root")
    s.add_argument("--out")
    s.add_argument("--schema", help="JSON object of field renames, e.g. '{\"prosody\": \"prosody\"}'")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("rater-qc", parents=[common], help="inter-rater PCC/SCC quality gates")
    s.add_argument("--raters", required=True)
    s.add_argument("--sentence-pcc-min", type=float, default=0.6)
    s.add_argument("--sentence-scc-min", type=float, default=0.6)
    s.add_argument("--word-pcc-min", type=float, default=0.6)
    s.add_argument("--word-scc-min", type=float, default=0.5)
    s.add_argument("--inclusive", action="store_true", help="accept values equal to a threshold")
    s.add_argument("--out")
    s.set_defaults(func=cmd_rater_qc)

    s = sub.add_parser("render-prompts", parents=[common, task], help="render prompts for a canonical corpus")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render_prompts)

    s = sub.add_parser("infer", parents=[common], help="submit prompts to a scoring endpoint")
    s.add_argument("--prompts", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dry-run", action="store_true")
    s.add_argument("--resume", action="store_true")
    s.add_argument("--audio-root", help="directory that relative audio paths are resolved against")
    s.add_argument("--base-url")
    s.add_argument("--token-env")
    s.add_argument("--timeout", type=float)
    s.add_argument("--max-retries", type=int)
    s.add_argument("--backoff", type=float)
    s.add_argument("--rps", type=float)
    s.add_argument("--max-in-flight", type=int)
    s.add_argument("--response-field")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("parse", parents=[common, task], help="parse raw model responses")
    s.add_argument("--responses", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--errors")
    s.add_argument("--lenient", action="store_true", help="skip stray text instead of failing")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("gen-pairs", parents=[common, task], help="simulate SimPO preference pairs")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--target", help="granularity.aspect, e.g. word.accuracy")
    s.add_argument("--n", type=int, default=1, help="pairs per utterance")
    s.add_argument("--delta-min", type=float)
    s.add_argument("--delta-max", type=float)
    s.add_argument("--direction", choices=("random", "up", "down"))
    s.add_argument("--scope", choices=("one", "all"))
    s.add_argument("--positive-mode", choices=("gold", "updown"))
    s.set_defaults(func=cmd_gen_pairs)

    s = sub.add_parser("grad-check", parents=[common], help="finite-difference check of the SimPO+CE gradient")
    s.add_argument("--configs", type=int, default=100)
    s.add_argument("--tol", type=float, default=1e-5)
    s.set_defaults(func=cmd_grad_check)

    s = sub.add_parser("train-toy", parents=[common], help="train the bigram toy scorer on preference pairs")
    s.add_argument("--pairs", help="gen-pairs output; omitted -> synthetic corrupted-copy pairs")
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--lr", type=float, default=5.0)
    s.add_argument("--vocab", type=int, default=8)
    s.add_argument("--n-pairs", type=int, default=64)
    s.add_argument("--beta", type=float)
    s.add_argument("--gamma", type=float)
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--trace", help="loss trace CSV path")
    s.add_argument("--figure", help="loss trace PNG path")
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("score", parents=[common, task], help="PCC/SCC/RMSE of parsed predictions against gold")
    s.add_argument("--pred", required=True)
    s.add_argument("--gold", required=True)
    s.add_argument("--errors", help="parse-error file, to label exclusions")
    s.add_argument("--phone-rmse-scale", choices=("0-2", "0-10"))
    s.add_argument("--json", action="store_true")
    s.add_argument("--out", help="write the machine report (JSON) here")
    s.add_argument("--label", default="model")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("report", parents=[common], help="render reports and figures")
    s.add_argument("--metrics", help="JSON written by score --out")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--format", choices=("text", "json", "csv"), default="text")
    s.add_argument("--label", default="model")
    s.add_argument("--corpus", help="canonical corpus file for a score histogram")
    s.add_argument("--granularity", default="sentence")
    s.add_argument("--aspect", default="completeness")
    s.add_argument("--buckets", nargs="+", default=["[0,8)", "[8,10]"])
    s.add_argument("--trace", help="loss trace CSV from train-toy")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = args.func(args)
    except ApaError as e:
        print(f"apakit: {e.module}: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"apakit: {args.verb}: {e}", file=sys.stderr)
        return 1
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
