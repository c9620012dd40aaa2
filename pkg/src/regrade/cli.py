"""Command-line pipeline: generate | train | run | evaluate | report.

Each command reads one flat config file, applies optional flag overrides,
writes its artifacts plus the effective config into its output directory,
and exits non-zero with a one-line JSON error record on any failure. All
randomness funnels through the single config seed; stage seeds are derived
from it by stable hashing, so identical config + seed reproduces every
artifact byte for byte.
"""

from __future__ import annotations

import argparse
import json
import sys
from functools import partial
from pathlib import Path

import numpy as np

from . import encoder as enc
from . import engine, evaluation, inpaint, reporting, training
from .errors import MissingArtifactError
from .imutil import load_gray, load_mask, load_rgb
from .runconfig import RunConfig, load_config, write_effective_config
from .seeds import derive_seed
from .synthgen import LESION_TYPES, SynthConfig, generate_dataset, load_dataset, save_dataset
from .textenc import default_description_set, encode_text, load_description_file
from .vessels import ColorParams


def _text_embeddings(cfg: RunConfig):
    if cfg.descriptions_file:
        descriptions = load_description_file(cfg.descriptions_file, embedding_dim=cfg.dim)
    else:
        descriptions = default_description_set(embedding_dim=cfg.dim)
    return encode_text(descriptions)


def _color_params(cfg: RunConfig) -> ColorParams:
    return ColorParams(
        beta_dark=cfg.beta_dark,
        gamma_distance=cfg.gamma_distance,
        delta_noise=cfg.delta_noise,
        alpha_vessel=cfg.alpha_vessel,
        alpha_inter=cfg.alpha_inter,
    )


def _load_eval_dataset(cfg: RunConfig):
    return load_dataset(Path(cfg.data_dir) / "eval")


# ---------------------------------------------------------------- commands


def cmd_generate(cfg: RunConfig) -> str:
    root = Path(cfg.data_dir)
    counts = {"train": cfg.per_grade_train, "eval": cfg.per_grade_eval}
    for split, per_grade in counts.items():
        synth = SynthConfig(
            image_size=cfg.image_size,
            seed=derive_seed(cfg.seed, "dataset", split),
            vessel_count=cfg.vessel_count,
            disc_radius=cfg.disc_radius,
        )
        samples = generate_dataset(synth, [per_grade] * 5)
        save_dataset(samples, root / split)
    write_effective_config(cfg, root)
    return (
        f"generate: wrote {5 * counts['train']} train + {5 * counts['eval']} eval "
        f"samples to {root}"
    )


def cmd_train(cfg: RunConfig) -> str:
    pairs = load_dataset(Path(cfg.data_dir) / "train")
    images = np.stack([s.image for _, s in pairs])
    targets = np.stack([training.build_target(s.grade, s.lesion_flags) for _, s in pairs])
    text = _text_embeddings(cfg)
    params = enc.init_params(
        patch_size=cfg.patch_size,
        dim=cfg.dim,
        n_layers=cfg.layers,
        n_heads=cfg.heads,
        image_size=cfg.image_size,
        seed=derive_seed(cfg.seed, "init"),
        tau_init=cfg.tau_init,
    )
    train_cfg = training.TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        seed=derive_seed(cfg.seed, "train"),
        optimizer=cfg.optimizer,
        augment=cfg.augment,
        warmup_epochs=cfg.warmup_epochs,
    )
    params, history = training.train(images, targets, params, text, train_cfg)

    ckpt = Path(cfg.checkpoint)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    training.save_checkpoint(params, ckpt)
    log = {
        "initial_loss": history.initial_loss,
        "epoch_losses": history.epoch_losses,
        "final_loss": history.final_loss,
        "samples": len(pairs),
    }
    (ckpt.parent / "train_log.json").write_text(json.dumps(log, sort_keys=True, indent=2) + "\n")
    write_effective_config(cfg, ckpt.parent)
    return (
        f"train: {len(pairs)} samples, loss {history.initial_loss:.4f} -> "
        f"{history.final_loss:.4f}, checkpoint {ckpt}"
    )


def cmd_run(cfg: RunConfig) -> str:
    pairs = _load_eval_dataset(cfg)
    params = training.load_checkpoint(cfg.checkpoint)
    model = engine.EncoderGrader(params=params, text=_text_embeddings(cfg))
    run_dir = Path(cfg.run_dir)

    if cfg.external_command:
        inpainter = engine.ExternalInpainter(
            command=cfg.external_command,
            workdir=run_dir / "external",
            timeout=cfg.external_timeout,
        )
    else:
        backend = None if cfg.inpaint_backend == "auto" else cfg.inpaint_backend
        inpainter = partial(inpaint.inpaint, backend=backend)

    if cfg.vessel_source == "truth":
        vessel_provider = engine.DirectoryVesselProvider(Path(cfg.data_dir) / "eval")
    else:
        vessel_provider = engine.RidgeVesselProvider()

    loop_params = engine.LoopParams(
        color=_color_params(cfg), dilate_mask=cfg.dilate_mask, seed=cfg.seed,
    )
    records = engine.run_batch(
        [(sid, sample.image) for sid, sample in pairs],
        model,
        inpainter,
        vessel_provider,
        loop_params,
        max_iterations=cfg.max_iterations,
        workers=cfg.workers,
    )

    summary = []
    for record in records:
        entry = {"image_id": record.image_id, "ok": record.ok, "error": record.error}
        if record.ok:
            result = record.result
            engine.write_trace_dir(result, run_dir / "traces" / record.image_id)
            entry.update(
                iterations_performed=result.iterations_performed,
                termination_reason=result.termination_reason,
                entry_grade=result.entry_prediction.grade,
                final_grade=result.final_prediction.grade,
            )
        summary.append(entry)
    run_dir.mkdir(parents=True, exist_ok=True)
    payload = {"max_iterations": cfg.max_iterations, "images": summary}
    (run_dir / "run.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    write_effective_config(cfg, run_dir)
    n_ok = sum(1 for r in records if r.ok)
    return f"run: {n_ok}/{len(records)} images looped, traces in {run_dir / 'traces'}"


def _load_run_summary(cfg: RunConfig) -> dict:
    path = Path(cfg.run_dir) / "run.json"
    if not path.is_file():
        raise MissingArtifactError(f"run summary not found: {path} (run the 'run' command first)")
    return json.loads(path.read_text())


def cmd_evaluate(cfg: RunConfig) -> str:
    samples = dict(_load_eval_dataset(cfg))
    run_summary = _load_run_summary(cfg)
    traces_root = Path(cfg.run_dir) / "traces"

    per_image_seg = []
    per_image_counts = []
    predictions = []
    labels = []
    flip_records = []
    final_grades = []
    n_failed = 0
    for entry in run_summary["images"]:
        if not entry["ok"]:
            n_failed += 1
            continue
        sid = entry["image_id"]
        if sid not in samples:
            raise MissingArtifactError(f"run references image {sid!r} missing from the dataset")
        sample = samples[sid]
        trace_dir = traces_root / sid
        trace = engine.load_trace_json(trace_dir)
        accumulated = load_mask(trace_dir / "accumulated_mask.png")

        masks = {name: sample.lesion_masks[k] for k, name in enumerate(LESION_TYPES)}
        per_image_seg.append(evaluation.lesion_attribution(accumulated, masks))
        per_image_counts.append(evaluation.coverage_counts(accumulated, masks))
        entry_rec = trace["entry"]
        predictions.append(
            enc.PredictionRecord(
                scores=np.array(entry_rec["scores"]),
                probs=np.array(entry_rec["probs"]),
                grade=int(entry_rec["grade"]),
                lesions=np.array(entry_rec["lesions"]),
            )
        )
        labels.append((sample.grade, tuple(int(v) for v in sample.lesion_flags)))
        flip_records.append(
            evaluation.flip_record(
                entry_grade=int(entry_rec["grade"]),
                final_grade=int(trace["final"]["grade"]),
                iterations_performed=int(trace["iterations_performed"]),
                reason=trace["termination_reason"],
            )
        )
        final_grades.append(int(trace["final"]["grade"]))

    report = evaluation.build_report(
        per_image_seg,
        predictions,
        labels,
        flip_records,
        final_grades,
        max_iterations=int(run_summary["max_iterations"]),
        n_failed=n_failed,
        per_image_counts=per_image_counts,
    )
    eval_dir = Path(cfg.eval_dir)
    eval_dir.mkdir(parents=True, exist_ok=True)
    evaluation.write_metrics_csv(report, eval_dir / "metrics.csv")
    evaluation.write_report_json(report, eval_dir / "report.json")
    write_effective_config(cfg, eval_dir)
    rate = report.curve.final_rate
    rate_text = "undefined" if rate is None else f"{100 * rate:.1f}%"
    return f"evaluate: {report.n_images} images, final reduction rate {rate_text}, wrote {eval_dir}"


def cmd_report(cfg: RunConfig) -> str:
    report_path = Path(cfg.eval_dir) / "report.json"
    if not report_path.is_file():
        raise MissingArtifactError(
            f"report.json not found: {report_path} (run the 'evaluate' command first)"
        )
    report = json.loads(report_path.read_text())
    run_summary = _load_run_summary(cfg)
    report_dir = Path(cfg.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)

    reporting.plot_reduction_curve(report["reduction_curve"]["values"], report_dir / "reduction_curve.png")
    reporting.plot_transition_flow(
        np.array(report["transition_flow"]), report_dir / "transition_flow.png"
    )

    rows = []
    traces_root = Path(cfg.run_dir) / "traces"
    eval_dir = Path(cfg.data_dir) / "eval"
    for entry in run_summary["images"]:
        if len(rows) == 4:
            break
        if not entry["ok"] or entry["iterations_performed"] < 1:
            continue
        sid = entry["image_id"]
        original = load_rgb(eval_dir / f"img_{sid}.png")
        rows.append(
            {
                "original": original,
                "saliency": load_gray(traces_root / sid / "iter_1_saliency.png"),
                "contours": reporting.contour_overlay(
                    original, load_mask(traces_root / sid / "accumulated_mask.png")
                ),
                "inpainted": load_rgb(traces_root / sid / "final.png"),
            }
        )
    made_montage = False
    if rows:
        reporting.montage(rows, report_dir / "montage.png")
        made_montage = True
    write_effective_config(cfg, report_dir)
    parts = "curve + flow" + (" + montage" if made_montage else " (no iterated images for a montage)")
    return f"report: wrote {parts} to {report_dir}"


# ---------------------------------------------------------------- driver

_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "run": cmd_run,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}

# which path each command's --output overrides
_OUTPUT_ATTR = {
    "generate": "data_dir",
    "train": None,  # special-cased: checkpoint keeps its file name
    "run": "run_dir",
    "evaluate": "eval_dir",
    "report": "report_dir",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regrade",
        description="Synthetic fundus grading, lesion regression loops, and their evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="flat key-value config file")
        p.add_argument("--output", default=None, help="override this command's output location")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--workers", type=int, default=None, help="override loop.workers")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides: dict[str, object] = {"seed": args.seed, "workers": args.workers}
        if args.output is not None:
            attr = _OUTPUT_ATTR[args.command]
            if attr is None:
                overrides["checkpoint"] = str(Path(args.output) / "checkpoint.bin")
            else:
                overrides[attr] = args.output
        cfg = load_config(args.config, overrides)
        message = _COMMANDS[args.command](cfg)
    except Exception as exc:  # every failure becomes a machine-readable record
        record = {
            "error": type(exc).__name__,
            "message": str(exc),
            "problems": list(getattr(exc, "problems", [])),
        }
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1
    print(message)
    return 0


if __name__ == "__main__":
    sys.exit(main())
