"""Command line entry point: ``emollama {synth,train,eval,annotate,fuse}``.

Exit codes: 0 ok, 2 config, 3 io, 4 missing input artifact,
5 shape/kind mismatch, 6 every annotation sample failed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections import Counter
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import config as configmod
from . import metrics, mmef

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_MISSING, EXIT_MISMATCH, EXIT_TOTAL_FAILURE = 0, 2, 3, 4, 5, 6

log = logging.getLogger("emollama")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load_config(args) -> configmod.RunConfig:
    try:
        cfg = configmod.load(args.config)
        if getattr(args, "seed", None) is not None:
            cfg = configmod.override(cfg, "run", seed=args.seed)
        if getattr(args, "threads", None) is not None:
            cfg = configmod.override(cfg, "run", threads=args.threads)
        if getattr(args, "parallelism", None) is not None:
            cfg = configmod.override(cfg, "run", parallelism=args.parallelism)
    except configmod.ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    return cfg


def _manifest(cfg) -> list[mmef.SampleRecord]:
    path = cfg.corpus_dir / "manifest.tsv"
    if not path.exists():
        raise CliError(EXIT_MISSING, f"no corpus manifest at {path}; run `emollama synth` first")
    try:
        return mmef.read_manifest(path)
    except mmef.FormatError as exc:
        raise CliError(EXIT_IO, str(exc)) from None


# -- synth ----------------------------------------------------------------


def cmd_synth(args) -> int:
    from .synthgen import SynthError, generate

    cfg = _load_config(args)
    out = Path(args.out) if args.out else cfg.corpus_dir
    try:
        records = generate(cfg.synth_config(), out)
    except SynthError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    splits = Counter(r.split for r in records)
    labels = Counter(r.label for r in records)
    print(f"wrote {len(records)} records to {out / 'manifest.tsv'}")
    print("splits: " + ", ".join(f"{k}={v}" for k, v in splits.items()))
    print("labels: " + ", ".join(f"{k}={v}" for k, v in labels.items()))
    return EXIT_OK


# -- train ----------------------------------------------------------------


def _clips(cfg, records, split):
    from .backbone.training import load_clip

    try:
        return [load_clip(r, cfg.pipeline) for r in records if r.split == split]
    except (OSError, mmef.FormatError) as exc:
        raise CliError(EXIT_IO, f"cannot load features: {exc}") from None
    except ValueError as exc:
        raise CliError(EXIT_MISMATCH, f"feature shape mismatch: {exc}") from None


def cmd_train(args) -> int:
    import torch

    from .backbone import training as tr

    cfg = _load_config(args)
    out_dir = cfg.output_dir
    try:
        tcfg = cfg.train_config(stage=args.stage, steps=args.steps)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    torch.set_num_threads(tcfg.threads)
    if args.stage == 2 and (not args.init or not Path(args.init).exists()):
        raise CliError(EXIT_MISSING, "stage 2 needs an existing stage-1 checkpoint (--init)")
    records = _manifest(cfg)
    clips = _clips(cfg, records, "train")
    if not clips:
        raise CliError(EXIT_MISSING, "corpus has no train split")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create {out_dir}: {exc.strerror}") from None
    ckpt = Path(args.out) if args.out else out_dir / f"stage{args.stage}.mmef"

    if args.stage == 1:
        spec = cfg.model_spec()
        model = tr.EmotionModel(spec, tr.build_tokenizer(records, spec.labels), seed=tcfg.seed)
        base_trace = tr.pretrain_base(model, clips, tcfg)
        tr.write_trace(out_dir / "base_loss.tsv", base_trace)
        model.freeze_base(tcfg.seed)
        trace = tr.train_stage1(model, clips, tcfg)
    else:
        try:
            model, meta = tr.load_checkpoint(args.init)
        except (OSError, KeyError, ValueError) as exc:
            raise CliError(EXIT_MISSING, f"cannot load checkpoint {args.init}: {exc}") from None
        trace = tr.train_stage2(model, clips, tcfg)

    try:
        tr.save_checkpoint(ckpt, model, {"stage": args.stage, "step": tcfg.steps, "seed": tcfg.seed,
                                         "train": asdict(tcfg)})
        tr.write_trace(out_dir / f"stage{args.stage}_loss.tsv", trace)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write checkpoint: {exc}") from None
    print(f"trainable parameters: {model.trainable_count()}")
    print(f"final loss: {trace[-1].loss:.6f}" if trace else "final loss: n/a (0 steps)")
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


# -- eval -----------------------------------------------------------------

LABEL_METRICS = ("hit_rate", "accuracy", "waf", "set_f")


def read_predictions(path: Path) -> list[tuple[str, str, list[float] | None]]:
    rows = []
    for lineno, line in enumerate(path.read_text("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise CliError(EXIT_MISMATCH, f"{path}:{lineno}: expected id, prediction[, scores]")
        scores = None
        if len(parts) == 3 and parts[2].strip():
            try:
                scores = [float(x) for x in parts[2].split(",")]
            except ValueError:
                raise CliError(EXIT_MISMATCH, f"{path}:{lineno}: bad score list") from None
        rows.append((parts[0], parts[1], scores))
    return rows


def write_predictions(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sid, pred, scores in rows:
            tail = "\t" + ",".join(f"{s:.6f}" for s in scores) if scores else ""
            fh.write(f"{sid}\t{' '.join(pred.split())}{tail}\n")


def score_dataset(rows, truth: dict[str, mmef.SampleRecord], metric: str, labels) -> float:
    missing = [sid for sid, _, _ in rows if sid not in truth]
    if missing:
        raise CliError(EXIT_MISMATCH, f"predictions for unknown ids: {missing[:3]}")
    try:
        if metric == "hit_rate":
            return metrics.hit_rate((p, truth[s].label) for s, p, _ in rows)
        if metric == "accuracy":
            return metrics.accuracy((p, truth[s].label) for s, p, _ in rows)
        if metric == "waf":
            return metrics.weighted_f1([(p, truth[s].label) for s, p, _ in rows], labels)
        if metric == "set_f":
            return float(np.mean([metrics.set_f_score(p.split(","), truth[s].labels) for s, p, _ in rows]))
        if metric == "map":
            if any(sc is None or len(sc) != len(labels) for _, _, sc in rows):
                raise CliError(EXIT_MISMATCH, "mAP needs one score per label for every prediction")
            scores = np.array([sc for _, _, sc in rows])
            norm = [metrics.normalize_label(x) for x in labels]
            gold = np.array([[lab in {metrics.normalize_label(t) for t in truth[s].labels} for lab in norm]
                             for s, _, _ in rows])
            return metrics.mean_ap(scores, gold)
    except metrics.MetricError as exc:
        raise CliError(EXIT_MISMATCH, f"{metric}: {exc}") from None
    raise CliError(EXIT_CONFIG, f"unknown metric {metric!r}")


def parse_groups(spec: str | None) -> dict[str, list[str]]:
    groups = {}
    for part in filter(None, (spec or "").split(";")):
        name, sep, members = part.partition("=")
        if not sep:
            raise CliError(EXIT_CONFIG, f"bad group spec {part!r}; use name=a,b")
        groups[name.strip()] = [m.strip() for m in members.split(",") if m.strip()]
    return groups


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    records = _manifest(cfg)
    truth = {r.id: r for r in records}
    labels = cfg.synth_config().labels
    datasets: dict[str, list] = {}
    if args.checkpoint:
        from .backbone import training as tr

        if not Path(args.checkpoint).exists():
            raise CliError(EXIT_MISSING, f"no checkpoint at {args.checkpoint}")
        model, _ = tr.load_checkpoint(args.checkpoint)
        clips = _clips(cfg, records, args.split)
        results = tr.predict(model, clips, args.task, seed=cfg.run.seed, parallelism=cfg.run.parallelism)
        rows = [(c.record.id, r.answer or "", None) for c, r in zip(clips, results)]
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        write_predictions(cfg.output_dir / f"predictions_{args.split}.tsv", rows)
        datasets[f"synth-{args.split}"] = rows
        if args.task == "reasoning":
            valid = sum(r.valid_reasoning for r in results) / max(len(results), 1)
            print(f"well-formed <think>/<answer>: {valid:.4f}")
    for spec in args.predictions or []:
        name, sep, path = spec.partition("=")
        path = Path(path if sep else name)
        name = name if sep else path.stem
        if not path.exists():
            raise CliError(EXIT_MISSING, f"no predictions file {path}")
        datasets[name] = read_predictions(path)
    if not datasets:
        raise CliError(EXIT_CONFIG, "nothing to evaluate: pass --predictions or --checkpoint")
    values = {}
    for name, rows in datasets.items():
        if not rows:
            raise CliError(EXIT_MISMATCH, f"{name}: no prediction rows")
        values[name] = {args.metric: score_dataset(rows, truth, args.metric, labels)}
    try:
        report = metrics.aggregate(values, parse_groups(args.groups))
    except metrics.MetricError as exc:
        raise CliError(EXIT_MISMATCH, str(exc)) from None
    out = Path(args.report) if args.report else cfg.output_dir / "report.json"
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report.to_json() + "\n", encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write report: {exc.strerror}") from None
    print(report.table())
    return EXIT_OK


# -- annotate -------------------------------------------------------------


def cmd_annotate(args) -> int:
    from .annotate import DescriberClient, endpoints_from_env, run_pipeline, write_failures

    cfg = _load_config(args)
    records = mmef.read_manifest(args.manifest) if args.manifest else _manifest(cfg)
    if args.limit:
        records = records[: args.limit]
    client = DescriberClient(endpoints_from_env(cfg.endpoint_table()))
    out_dir = cfg.output_dir
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        out = out_dir / "annotations.jsonl"
        out.unlink(missing_ok=True)
        result = run_pipeline(records, client, cfg.run.parallelism, out)
        write_failures(out_dir / "annotation_failures.tsv", result.failures)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write annotations: {exc}") from None
    print(f"annotated {len(result.records)} of {len(records)} samples ({client.retries_used} retries)")
    for sid, reason in result.failures:
        print(f"failed {sid}: {reason}")
    if records and not result.records:
        return EXIT_TOTAL_FAILURE
    return EXIT_OK


# -- fuse -----------------------------------------------------------------


def cmd_fuse(args) -> int:
    from .prefusion import PreFusionParams, fuse

    try:
        streams = [mmef.load_tensor(p) for p in (args.audio, args.global_, args.temporal)]
        params = PreFusionParams.from_named(mmef.load_container(args.params))
    except (OSError, mmef.FormatError) as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    except ValueError as exc:
        raise CliError(EXIT_MISMATCH, str(exc)) from None
    try:
        out = fuse(*streams, params)
    except (ValueError, FloatingPointError) as exc:
        raise CliError(EXIT_MISMATCH, str(exc)) from None
    try:
        mmef.save_container(args.out, {"u_f": out.u_f, "F_attn": out.F_attn, "F_conv": out.F_conv,
                                       "weights": np.atleast_1d(out.weights)})
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    print("modality weights (audio, global, temporal): " + ", ".join(f"{w:.6f}" for w in np.ravel(out.weights)))
    return EXIT_OK


# -- entry point ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emollama", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="run configuration file (defaults apply when omitted)")
        sp.add_argument("--seed", type=int)

    s = sub.add_parser("synth", help="generate the synthetic corpus")
    common(s)
    s.add_argument("--out", help="corpus directory (overrides run.corpus_dir)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="run one curriculum stage")
    common(s)
    s.add_argument("--stage", type=int, choices=(1, 2), default=1)
    s.add_argument("--init", help="stage-1 checkpoint (stage 2 only)")
    s.add_argument("--steps", type=int, help="override train.steps")
    s.add_argument("--threads", type=int)
    s.add_argument("--out", help="checkpoint path")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score predictions or a checkpoint")
    common(s)
    s.add_argument("--predictions", action="append", help="[name=]path of an id<TAB>prediction file")
    s.add_argument("--checkpoint")
    s.add_argument("--split", default="test")
    s.add_argument("--task", choices=("recognition", "reasoning"), default="recognition")
    s.add_argument("--metric", choices=(*LABEL_METRICS, "map"), default="hit_rate")
    s.add_argument("--groups", help="macro-average groups, e.g. 'avg2=a,b;avg1=a'")
    s.add_argument("--report")
    s.add_argument("--parallelism", type=int)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("annotate", help="run the annotation pipeline")
    common(s)
    s.add_argument("--manifest")
    s.add_argument("--limit", type=int)
    s.add_argument("--parallelism", type=int)
    s.set_defaults(func=cmd_annotate)

    s = sub.add_parser("fuse", help="run the pre-fusion module on three stream tensors")
    s.add_argument("--params", required=True, help="container holding prefusion.* tensors")
    s.add_argument("--audio", required=True)
    s.add_argument("--global", dest="global_", required=True)
    s.add_argument("--temporal", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fuse)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
