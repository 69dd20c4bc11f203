"""Command-line entry point: ``avcap <command> [flags]``.

Every command resolves its configuration (defaults < ``--config`` JSON file <
explicit flags), writes ``config.resolved.json`` into the output directory
before doing any work and a ``DONE`` marker after the last output.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import ArsTable, CorpusError, FreqTable, Normalized, ars_corpus, attention_rollout, normalize, saliency, scr
from .analysis.text import read_corpus
from .autograd import NumericError, no_grad
from .checkpoint import CheckpointError, check_compatible, load_checkpoint
from .data import DataError, TaskSpec, dumps_canonical, generate, read_jsonl, split, vocab_dict, write_jsonl
from .estimator import AudioVisualCaptioner
from .fusion import joint_attention, parse_kind
from .model import ModelConfig
from .plot import MetricsError, plot_metrics
from .training import METRIC_COLUMNS
from .validation import check_dataset, check_modality, strip_caption

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SPLITS = ("train", "val", "test")
CHECKPOINT_DIR = "checkpoint"
DIM_KEYS = ("dim", "heads", "fusion_layers", "decoder_layers", "ffn_mult")


class UsageError(Exception):
    """Invalid flag combination or value."""


# ---------------------------------------------------------------------------
# configuration and output helpers


def _on_off(value):
    if value in ("on", "off"):
        return value == "on"
    raise argparse.ArgumentTypeError(f"expected 'on' or 'off', got {value!r}")


def _fusion(value):
    try:
        return parse_kind(value).value
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def resolve(args, defaults):
    """``defaults`` overridden by the ``--config`` file, then by explicit flags."""
    config = dict(defaults)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"config file {args.config}: invalid JSON ({exc.msg})") from None
        if not isinstance(loaded, dict):
            raise DataError(f"config file {args.config} must hold a JSON object")
        unknown = sorted(set(loaded) - set(defaults))
        if unknown:
            raise UsageError(f"unknown config keys: {unknown}")
        config.update(loaded)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    if not config.get("out"):
        raise UsageError("--out is required")
    return config


def start_run(config):
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    done = out / "DONE"
    if done.exists():
        done.unlink()
    write_json(out / "config.resolved.json", config)
    return out


def finish_run(out):
    (Path(out) / "DONE").write_text("ok\n", encoding="utf-8")


def write_json(path, obj):
    Path(path).write_text(dumps_canonical(obj), encoding="utf-8")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class MetricsWriter:
    """Append-only metrics CSV; the header is written once, rows flushed per step."""

    def __init__(self, path):
        self.fh = open(path, "w", newline="", encoding="utf-8")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(METRIC_COLUMNS)
        self.last_step = 0

    def __call__(self, metrics):
        if metrics["step"] <= self.last_step:
            raise ValueError("metrics rows must be monotone in step")
        self.last_step = metrics["step"]
        self.writer.writerow([_cell(metrics.get(c)) for c in METRIC_COLUMNS])
        self.fh.flush()

    def close(self):
        self.fh.close()


def write_matrix(path, matrix, labels):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["token"] + labels)
        for label, row in zip(labels, matrix):
            w.writerow([label] + [repr(float(v)) for v in row])


def load_split(data_dir, name):
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"data directory not found: {data_dir}")
    path = data_dir / f"{name}.jsonl"
    if not path.exists():
        raise DataError(f"missing data file {path}")
    spec = None
    spec_path = data_dir / "spec.json"
    if spec_path.exists():
        spec = TaskSpec.from_dict(json.loads(spec_path.read_text(encoding="utf-8")))
    return read_jsonl(path, spec)


def _final_metrics(history):
    return {k: v for k, v in history[-1].items()} if history else {}


def _train(est, data, out, extra):
    writer = MetricsWriter(out / "metrics.csv")
    try:
        est.fit(data, callback=writer)
    finally:
        writer.close()
    est.save(out / CHECKPOINT_DIR, extra=extra)
    summary = {"final": _final_metrics(est.history_), "steps": len(est.history_)}
    if est.mbp_state_ is not None:
        summary["mbp_state"] = {"w_a": est.mbp_state_.w_a, "w_v": est.mbp_state_.w_v, "t": est.mbp_state_.t}
    write_json(out / "summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# commands

GENERATE_DEFAULTS = dict(spec=None, n=1000, out=None, seed=None, fractions=[0.8, 0.1, 0.1])


def cmd_generate(args):
    config = resolve(args, GENERATE_DEFAULTS)
    spec_fields = {}
    if config["spec"]:
        try:
            spec_fields = json.loads(Path(config["spec"]).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"spec file not found: {config['spec']}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"spec file {config['spec']}: invalid JSON ({exc.msg})") from None
        if not isinstance(spec_fields, dict):
            raise DataError("spec file must hold a JSON object")
    if config["seed"] is not None:
        spec_fields["seed"] = config["seed"]
    try:
        spec = TaskSpec.from_dict(spec_fields)
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid spec: {exc}") from None
    if config["n"] < 1:
        raise DataError(f"need at least one sample, got --n {config['n']}")
    config["resolved_spec"] = spec.to_dict()
    out = start_run(config)

    parts = split(generate(spec, config["n"]), config["fractions"])
    for name, part in zip(SPLITS, parts):
        write_jsonl(part, out / f"{name}.jsonl")
    (out / "vocab.json").write_text(dumps_canonical(vocab_dict(spec)), encoding="utf-8")
    write_json(out / "spec.json", spec.to_dict())
    finish_run(out)
    return {name: len(part) for name, part in zip(SPLITS, parts)}


PRETRAIN_DEFAULTS = dict(
    data=None, out=None, split="train", fusion="local_global_merged", mbp=True, pnc=True,
    steps=2000, batch_size=32, lr=None, warmup_frac=0.1, alpha=10.0, beta=0.99, seed=0,
    dim=64, heads=4, fusion_layers=2, decoder_layers=2, ffn_mult=4,
)


def cmd_pretrain(args):
    config = resolve(args, PRETRAIN_DEFAULTS)
    if not config["data"]:
        raise UsageError("--data is required")
    config["fusion"] = _fusion(config["fusion"])
    data = load_split(config["data"], config["split"])
    out = start_run(config)
    est = AudioVisualCaptioner(
        fusion=config["fusion"], mode="pretrain", mbp=config["mbp"], pnc=config["pnc"],
        steps=config["steps"], batch_size=config["batch_size"], lr=config["lr"],
        warmup_frac=config["warmup_frac"], alpha=config["alpha"], beta=config["beta"],
        seed=config["seed"], **{k: config[k] for k in DIM_KEYS},
    )
    summary = _train(est, data, out, extra={"mode": "pretrain", "mbp": config["mbp"], "pnc": config["pnc"]})
    finish_run(out)
    return summary["final"]


FINETUNE_DEFAULTS = dict(
    checkpoint=None, from_scratch=False, data=None, out=None, split="train", steps=500,
    batch_size=32, lr=None, warmup_frac=0.1, seed=0, fusion=None,
    dim=None, heads=None, fusion_layers=None, decoder_layers=None, ffn_mult=None,
)


def cmd_finetune(args):
    config = resolve(args, FINETUNE_DEFAULTS)
    if not config["data"]:
        raise UsageError("--data is required")
    if bool(config["checkpoint"]) == bool(config["from_scratch"]):
        raise UsageError("give exactly one of --checkpoint or --from-scratch")
    if config["fusion"] is not None:
        config["fusion"] = _fusion(config["fusion"])
    data = load_split(config["data"], config["split"])
    out = start_run(config)
    train = dict(
        mode="finetune", steps=config["steps"], batch_size=config["batch_size"], lr=config["lr"],
        warmup_frac=config["warmup_frac"], seed=config["seed"],
    )
    overrides = {k: config[k] for k in DIM_KEYS if config[k] is not None}
    if config["from_scratch"]:
        dims = {k: PRETRAIN_DEFAULTS[k] for k in DIM_KEYS}
        dims.update(overrides)
        est = AudioVisualCaptioner(fusion=config["fusion"] or PRETRAIN_DEFAULTS["fusion"], **dims, **train)
    else:
        est = AudioVisualCaptioner.from_checkpoint(config["checkpoint"], **train)
        requested = dict(est.model_.config.to_dict())
        requested.update(overrides)
        if config["fusion"] is not None:
            requested["fusion_kind"] = config["fusion"]
        check_compatible(est.model_, ModelConfig.from_dict(requested))
        check_dataset(data, est.model_.config)
    summary = _train(est, data, out, extra={"mode": "finetune"})
    finish_run(out)
    return summary["final"]


EVAL_DEFAULTS = dict(checkpoint=None, data=None, out=None, split="test", modality="av", beam=5, greedy=False)


def cmd_eval(args):
    config = resolve(args, EVAL_DEFAULTS)
    if not config["checkpoint"] or not config["data"]:
        raise UsageError("--checkpoint and --data are required")
    check_modality(config["modality"])
    if config["beam"] < 1:
        raise UsageError("--beam must be at least 1")
    data = load_split(config["data"], config["split"])
    out = start_run(config)
    est = AudioVisualCaptioner.from_checkpoint(config["checkpoint"])
    metrics, decodes = est.evaluate(data, config["modality"], config["beam"], config["greedy"])
    report = dict(metrics, n=len(data), modality=config["modality"], beam=config["beam"], greedy=config["greedy"])
    write_json(out / "eval.json", report)
    with open(out / "decodes.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for i, ((hyp, logp), cap) in enumerate(zip(decodes, data.caption)):
            row = {"index": i, "hypothesis": hyp, "reference": strip_caption(cap), "mean_logprob": logp}
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")
    finish_run(out)
    return metrics


ANALYZE_DEFAULTS = dict(
    captions=None, transcripts=None, audio_captions=None, image_captions=None, out=None, pseudo_count=1.0
)


def _normalized_corpus(path, label):
    sentences = [Normalized(normalize(s)) for s in read_corpus(path)]
    if not any(sentences):
        raise CorpusError(f"{label} corpus is empty after normalization")
    return sentences


def cmd_analyze(args):
    config = resolve(args, ANALYZE_DEFAULTS)
    want_scr = config["captions"] is not None or config["transcripts"] is not None
    want_ars = config["audio_captions"] is not None or config["image_captions"] is not None
    if not want_scr and not want_ars:
        raise UsageError("give --captions/--transcripts and/or --audio-captions/--image-captions")
    if want_scr and not (config["captions"] and config["transcripts"]):
        raise UsageError("--captions and --transcripts go together")
    if want_ars and not (config["audio_captions"] and config["image_captions"]):
        raise UsageError("--audio-captions and --image-captions go together")
    out = start_run(config)

    summary = {"scr": None, "ars_corpus": None}
    captions = None
    if want_scr:
        captions = _normalized_corpus(config["captions"], "captions")
        transcripts = [Normalized(normalize(s)) for s in read_corpus(config["transcripts"])]
        if len(captions) != len(transcripts):
            raise CorpusError(
                f"line-count mismatch: {len(captions)} captions vs {len(transcripts)} transcripts"
            )
        summary["scr"] = scr(captions, transcripts)
    if want_ars:
        audio = _normalized_corpus(config["audio_captions"], "audio captions")
        image = _normalized_corpus(config["image_captions"], "image captions")
        table = ArsTable.build(FreqTable.from_corpus(audio), FreqTable.from_corpus(image), config["pseudo_count"])
        scored = [s for s in (captions if captions is not None else audio) if s]
        summary["ars_corpus"] = ars_corpus(scored, table)
        summary["ars_corpus_sentences"] = len(scored)
        with open(out / "ars.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["word", "ars"])
            for word, score in table.ranked():
                w.writerow([word, repr(score)])
    write_json(out / "summary.json", summary)
    finish_run(out)
    return summary


ROLLOUT_DEFAULTS = dict(checkpoint=None, data=None, out=None, split="test", sample=0, modality="av")


def cmd_rollout(args):
    config = resolve(args, ROLLOUT_DEFAULTS)
    if not config["checkpoint"] or not config["data"]:
        raise UsageError("--checkpoint and --data are required")
    check_modality(config["modality"])
    data = load_split(config["data"], config["split"])
    if not 0 <= config["sample"] < len(data):
        raise DataError(f"sample index {config['sample']} outside 0..{len(data) - 1}")
    out = start_run(config)
    model = load_checkpoint(config["checkpoint"])
    check_dataset(data, model.config)
    cfg = model.config
    i = config["sample"]
    store = []
    with no_grad():
        model.fused(data.audio[i:i + 1], data.video[i:i + 1], config["modality"], store=store)
    kind = parse_kind(cfg.fusion_kind)
    layers = []
    for record in store:
        single = {k: [np.asarray(v[0])[0]] for k, v in record.items()}
        layers.append(joint_attention(single, cfg.n_audio, cfg.n_video, kind))
    cumulative, history = attention_rollout(layers, return_layers=True)

    labels = [f"a{j}" for j in range(cfg.n_audio)] + [f"v{j}" for j in range(cfg.n_video)]
    if kind.uses_global:
        labels += ["G_a", "G_v"]
    for k, (att, cum) in enumerate(zip(layers, history), start=1):
        write_matrix(out / f"attention_layer{k}.csv", att, labels)
        write_matrix(out / f"rollout_layer{k}.csv", cum, labels)
    write_matrix(out / "rollout.csv", cumulative, labels)

    audio_cols = range(cfg.n_audio)
    video_cols = range(cfg.n_audio, cfg.n_audio + cfg.n_video)
    rows = range(len(labels))
    sal_a = saliency(cumulative, rows, audio_cols)
    sal_v = saliency(cumulative, rows, video_cols)
    with open(out / "saliency.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["token", "audio", "video"])
        for label, a, v in zip(labels, sal_a, sal_v):
            w.writerow([label, repr(float(a)), repr(float(v))])
    finish_run(out)
    return {"layers": len(layers), "size": len(labels)}


PLOT_DEFAULTS = dict(metrics=None, out=None)


def cmd_plot(args):
    config = resolve(args, PLOT_DEFAULTS)
    if not config["metrics"]:
        raise UsageError("--metrics is required")
    svg = Path(config["out"])
    if not Path(config["metrics"]).exists():
        raise DataError(f"metrics file not found: {config['metrics']}")
    # the output is a file: run metadata goes beside it
    meta = dict(config, out=str(svg.parent / (svg.stem + ".run")))
    run_dir = start_run(meta)
    plot_metrics(config["metrics"], svg)
    finish_run(run_dir)
    return {"svg": str(svg)}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(prog="avcap", description="Audio-visual captioning experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, argument_default=None)
        p.add_argument("--config", help="JSON file of flag values (flags given explicitly win)")
        p.add_argument("--out", help="output directory (plot: output SVG file)")
        p.set_defaults(func=func)
        return p

    def dims(p, defaults_note=""):
        p.add_argument("--dim", type=int)
        p.add_argument("--heads", type=int)
        p.add_argument("--fusion-layers", dest="fusion_layers", type=int)
        p.add_argument("--decoder-layers", dest="decoder_layers", type=int)
        p.add_argument("--ffn-mult", dest="ffn_mult", type=int)

    def train_flags(p):
        p.add_argument("--data", help="directory written by 'generate'")
        p.add_argument("--split", choices=SPLITS)
        p.add_argument("--steps", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--warmup-frac", dest="warmup_frac", type=float)
        p.add_argument("--seed", type=int)

    p = add("generate", cmd_generate, "write a synthetic caption task as JSONL splits")
    p.add_argument("--spec", help="JSON file of task-spec fields (defaults fill the rest)")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--fractions", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))

    p = add("pretrain", cmd_pretrain, "pretrain a captioner (MBP and PNC on by default)")
    train_flags(p)
    p.add_argument("--fusion", type=_fusion, help="merged, cross, global, lg-merged or lg-cross")
    p.add_argument("--mbp", type=_on_off, metavar="on|off")
    p.add_argument("--pnc", type=_on_off, metavar="on|off")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    dims(p)

    p = add("finetune", cmd_finetune, "fine-tune on current captions only")
    p.add_argument("--checkpoint", help="checkpoint directory to start from")
    p.add_argument("--from-scratch", dest="from_scratch", action="store_const", const=True,
                   help="start from freshly initialised weights (baseline)")
    train_flags(p)
    p.add_argument("--fusion", type=_fusion)
    dims(p)

    p = add("eval", cmd_eval, "decode a split and score it")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--split", choices=SPLITS)
    p.add_argument("--modality", choices=("av", "a", "v"))
    p.add_argument("--beam", type=int)
    p.add_argument("--greedy", action="store_const", const=True)

    p = add("analyze", cmd_analyze, "speech coverage rate and audio relevance scores")
    p.add_argument("--captions")
    p.add_argument("--transcripts")
    p.add_argument("--audio-captions", dest="audio_captions")
    p.add_argument("--image-captions", dest="image_captions")
    p.add_argument("--pseudo-count", dest="pseudo_count", type=float)

    p = add("rollout", cmd_rollout, "attention rollout of one sample through the fusion encoder")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--split", choices=SPLITS)
    p.add_argument("--sample", type=int)
    p.add_argument("--modality", choices=("av", "a", "v"))

    p = add("plot", cmd_plot, "SVG charts of a metrics CSV")
    p.add_argument("--metrics")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except NumericError as exc:
        print(f"avcap: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, CorpusError, MetricsError, OSError, ValueError) as exc:
        print(f"avcap: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
