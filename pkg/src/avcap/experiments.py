"""Desk-scale reproduction of modality overspecialization and its downstream effect.

Run as ``python -m avcap.experiments --out results.json``. Pretrains one model
per (seed, MBP on/off) on the audio-dominant default task, reports held-out
per-modality losses, then fine-tunes every model on the video-critical task
and reports token accuracy.
"""
from __future__ import annotations

import argparse
import statistics
import time
from dataclasses import asdict, dataclass, field

from .data import DEFAULT_DOWNSTREAM_SPEC, DEFAULT_PRETRAIN_SPEC, dumps_canonical, generate, split
from .estimator import AudioVisualCaptioner


@dataclass
class ExperimentConfig:
    seeds: tuple = (0, 1, 2)
    fusion: str = "merged"
    pretrain_steps: int = 2000
    pretrain_lr: float = 1e-3
    finetune_steps: int = 500
    finetune_lr: float = 1e-5
    batch_size: int = 32
    dim: int = 64
    n_pretrain: int = 2000
    n_downstream: int = 1000
    n_eval: int = 200
    beam_width: int = 5


@dataclass
class RunResult:
    seed: int
    mbp: bool
    loss_av: float
    loss_a: float
    loss_v: float
    token_accuracy: float | None = None
    finetune_loss: float | None = None
    seconds: float = 0.0
    history_tail: dict = field(default_factory=dict)


def _datasets(spec, n_train, n_eval):
    data = generate(spec, n_train + n_eval)
    train, held_out = split(data, (n_train / len(data), n_eval / len(data)))
    return train, held_out


def pretrain_run(cfg, seed, mbp, train, held_out, progress=None):
    start = time.perf_counter()
    est = AudioVisualCaptioner(
        fusion=cfg.fusion, dim=cfg.dim, mode="pretrain", mbp=mbp, steps=cfg.pretrain_steps,
        batch_size=cfg.batch_size, lr=cfg.pretrain_lr, seed=seed, beam_width=cfg.beam_width,
    )
    est.fit(train, callback=progress)
    result = RunResult(
        seed=seed, mbp=mbp,
        loss_av=est.mean_loss(held_out, "av"),
        loss_a=est.mean_loss(held_out, "a"),
        loss_v=est.mean_loss(held_out, "v"),
        history_tail={k: v for k, v in est.history_[-1].items() if v is not None},
    )
    result.seconds = time.perf_counter() - start
    return est, result


def finetune_run(cfg, pretrained, result, train, test):
    start = time.perf_counter()
    est = AudioVisualCaptioner(**dict(
        pretrained.get_params(), mode="finetune", mbp=None, pnc=None, steps=cfg.finetune_steps,
        lr=cfg.finetune_lr, warm_start=True,
    ))
    est.model_ = pretrained.model_
    est.fit(train)
    result.finetune_loss = est.mean_loss(test)
    result.token_accuracy = est.score(test)
    result.seconds += time.perf_counter() - start
    return result


def _median(results, key, mbp):
    return statistics.median(getattr(r, key) for r in results if r.mbp == mbp)


def summarize(results):
    off = [r for r in results if not r.mbp]
    summary = {
        "median": {
            name: {key: _median(results, key, flag) for key in ("loss_av", "loss_a", "loss_v", "token_accuracy")}
            for name, flag in (("mbp_on", True), ("mbp_off", False))
        },
        "checks": {},
    }
    on_m, off_m = summary["median"]["mbp_on"], summary["median"]["mbp_off"]
    summary["checks"] = {
        "off_video_exceeds_audio_every_seed": all(r.loss_v > r.loss_a for r in off),
        "mbp_lowers_median_video_loss": on_m["loss_v"] < off_m["loss_v"],
        "mbp_av_loss_within_0.05": on_m["loss_av"] <= off_m["loss_av"] + 0.05,
        "mbp_raises_median_downstream_accuracy": on_m["token_accuracy"] > off_m["token_accuracy"],
    }
    return summary


def run_experiment(cfg=None, log=print):
    cfg = cfg or ExperimentConfig()
    pre_train, pre_eval = _datasets(DEFAULT_PRETRAIN_SPEC, cfg.n_pretrain, cfg.n_eval)
    down_train, down_test = _datasets(DEFAULT_DOWNSTREAM_SPEC, cfg.n_downstream, cfg.n_eval)
    results = []
    for seed in cfg.seeds:
        for mbp in (False, True):
            est, result = pretrain_run(cfg, seed, mbp, pre_train, pre_eval)
            finetune_run(cfg, est, result, down_train, down_test)
            log(
                f"seed={seed} mbp={'on' if mbp else 'off'} L_av={result.loss_av:.4f} L_a={result.loss_a:.4f} "
                f"L_v={result.loss_v:.4f} acc={result.token_accuracy:.4f} ({result.seconds:.0f}s)"
            )
            results.append(result)
    return {"config": asdict(cfg), "runs": [asdict(r) for r in results], **summarize(results)}


def main(argv=None):
    parser = argparse.ArgumentParser(description="Overspecialization and downstream reproduction.")
    parser.add_argument("--out", help="write the results JSON here")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--fusion", default="merged")
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--finetune-steps", type=int, default=500)
    args = parser.parse_args(argv)
    cfg = ExperimentConfig(
        seeds=tuple(args.seeds), fusion=args.fusion, pretrain_steps=args.steps, finetune_steps=args.finetune_steps
    )
    report = run_experiment(cfg)
    text = dumps_canonical(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text)


if __name__ == "__main__":
    main()
