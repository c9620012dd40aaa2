"""The iterative severity regression loop.

Each cycle grades the working image; while the grade stays referable (2-4)
it localizes the grade's saliency, cuts a binary mask, harmonically fills
it, repairs any vessel segments the fill erased, and re-grades. Masks from
earlier cycles are never re-inpainted; they are only accumulated by union
into the final lesion attribution mask. The loop stops on a non-referable
grade, after max_iterations completed cycles, or when a degenerate mask
makes filling impossible. T_i counts completed inpaint cycles, so the entry
prediction alone (grade already non-referable) gives T_i = 0.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import encoder as enc
from . import inpaint as inp
from . import saliency as sal
from . import vessels as ves
from .errors import DegenerateMaskError, LoopIterationError, MissingArtifactError
from .imutil import load_gray, save_mask, save_rgb
from .seeds import derive_seed
from .textenc import TextEmbeddings

REFERABLE = frozenset({2, 3, 4})


def classify_referable(c_hat: int) -> bool:
    """Grades 2-4 (moderate and worse) require referral; 0-1 do not."""
    if c_hat not in range(5):
        raise ValueError(f"grade {c_hat} out of range 0..4")
    return c_hat in REFERABLE


# ---------------------------------------------------------------- models


@dataclass
class EncoderGrader:
    """Trained encoder plus frozen text rows, exposing the two calls the
    loop needs: predict and saliency."""

    params: enc.EncoderParams
    text: TextEmbeddings

    def predict(self, image) -> enc.PredictionRecord:
        return enc.predict_image(image, self.params, self.text)

    def saliency(self, image) -> sal.SaliencyMap:
        return sal.guided_backprop(image, self.params, self.text)


# ---------------------------------------------------------------- vessels


@dataclass
class TruthVesselProvider:
    """Serves stored vessel maps keyed by image id."""

    maps: dict[str, np.ndarray]

    def __call__(self, image_id: str, image: np.ndarray) -> np.ndarray:
        try:
            return self.maps[image_id]
        except KeyError:
            raise MissingArtifactError(f"no vessel map for image {image_id!r}") from None


@dataclass
class DirectoryVesselProvider:
    """Reads vessel_{id}.png lazily from a dataset directory."""

    root: Path

    def __call__(self, image_id: str, image: np.ndarray) -> np.ndarray:
        path = Path(self.root) / f"vessel_{image_id}.png"
        if not path.is_file():
            raise MissingArtifactError(f"vessel map not found: {path}")
        return load_gray(path)


class RidgeVesselProvider:
    """Detects vessels from the image itself; needs no stored maps."""

    def __call__(self, image_id: str, image: np.ndarray) -> np.ndarray:
        return ves.ridge_vessel_map(image)


@dataclass
class ExternalInpainter:
    """Adapter turning the file-protocol inpainter into a loop inpainter."""

    command: str
    workdir: Path
    timeout: float = 60.0

    def __call__(self, image: np.ndarray, mask: np.ndarray) -> inp.InpaintResult:
        out = inp.run_external_inpainter(image, mask, self.command, self.workdir, self.timeout)
        return inp.InpaintResult(image=out, sweeps=0, converged=True, backend="external")


# ---------------------------------------------------------------- loop


@dataclass
class LoopParams:
    color: ves.ColorParams = field(default_factory=ves.ColorParams)
    dilate_mask: bool = False
    seed: int = 0
    image_id: str = "image"


@dataclass
class IterationTrace:
    iteration: int  # 1-based cycle index
    grade: int  # referable grade that triggered this cycle
    probs: np.ndarray
    saliency: sal.SaliencyMap
    mask: np.ndarray  # this cycle's binary mask
    accumulated: np.ndarray  # union of masks up to this cycle
    inpainted: np.ndarray  # post-repair image fed to the next grading
    inpaint_sweeps: int
    inpaint_converged: bool
    repair_skipped: bool


@dataclass
class LoopResult:
    image_id: str
    final_image: np.ndarray
    accumulated_mask: np.ndarray
    termination_reason: str  # nonreferable | max_iterations | inpaint_degenerate
    traces: list[IterationTrace]
    predictions: list[enc.PredictionRecord]  # entry prediction plus one per cycle
    events: list[dict] = field(default_factory=list)

    @property
    def iterations_performed(self) -> int:
        return len(self.traces)

    @property
    def entry_prediction(self) -> enc.PredictionRecord:
        return self.predictions[0]

    @property
    def final_prediction(self) -> enc.PredictionRecord:
        return self.predictions[-1]


def run_loop(
    image: np.ndarray,
    model,
    inpainter,
    vessel_provider,
    params: LoopParams,
    max_iterations: int = 10,
) -> LoopResult:
    """Run the regression loop on one image.

    model must expose predict(image) and saliency(image); inpainter maps
    (image, mask) to an InpaintResult; vessel_provider maps (image_id,
    original image) to a raw vessel map. Faults from any of them re-raise
    as LoopIterationError carrying the 1-based cycle index.
    """
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    original = np.asarray(image, dtype=np.uint8)
    working = original.copy()
    accumulated = np.zeros(original.shape[:2], dtype=bool)
    traces: list[IterationTrace] = []
    predictions: list[enc.PredictionRecord] = []
    events: list[dict] = []
    reason = None

    while True:
        t = len(traces) + 1
        try:
            pred = model.predict(working)
        except Exception as exc:
            raise LoopIterationError(t, exc) from exc
        predictions.append(pred)
        if not classify_referable(pred.grade):
            reason = "nonreferable"
            break
        if len(traces) == max_iterations:
            reason = "max_iterations"
            break

        try:
            smap = model.saliency(working)
            smap.iteration = t
            mask = sal.binarize(smap.values, dilate=params.dilate_mask)
            if not mask.mask.any():
                events.append({"type": "no_progress", "iteration": t, "detail": "empty saliency mask"})
                reason = "max_iterations"
                break
            accumulated = accumulated | mask.mask

            filled = inpainter(working, mask.mask)
            raw_vessels = vessel_provider(params.image_id, original)
            repaired = ves.repair(
                inpainted_image=filled.image,
                original_image=original,
                raw_vessel_mask=raw_vessels,
                lesion_mask=mask.mask,
                params=params.color,
                seed=derive_seed(params.seed, "loop", params.image_id, t),
            )
        except DegenerateMaskError:
            events.append({"type": "degenerate_mask", "iteration": t})
            reason = "inpaint_degenerate"
            break
        except LoopIterationError:
            raise
        except Exception as exc:
            raise LoopIterationError(t, exc) from exc

        working = repaired.image
        traces.append(
            IterationTrace(
                iteration=t,
                grade=pred.grade,
                probs=pred.probs,
                saliency=smap,
                mask=mask.mask,
                accumulated=accumulated.copy(),
                inpainted=working,
                inpaint_sweeps=filled.sweeps,
                inpaint_converged=filled.converged,
                repair_skipped=repaired.skipped,
            )
        )

    return LoopResult(
        image_id=params.image_id,
        final_image=working,
        accumulated_mask=accumulated,
        termination_reason=reason,
        traces=traces,
        predictions=predictions,
        events=events,
    )


# ---------------------------------------------------------------- batch


@dataclass
class BatchRecord:
    image_id: str
    result: LoopResult | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.result is not None


def _run_one(args) -> BatchRecord:
    image_id, image, model, inpainter, vessel_provider, params, max_iterations = args
    loop_params = LoopParams(
        color=params.color, dilate_mask=params.dilate_mask, seed=params.seed, image_id=image_id,
    )
    try:
        result = run_loop(image, model, inpainter, vessel_provider, loop_params, max_iterations)
        return BatchRecord(image_id=image_id, result=result)
    except Exception as exc:
        return BatchRecord(image_id=image_id, result=None, error=f"{type(exc).__name__}: {exc}")


def run_batch(
    items,
    model,
    inpainter,
    vessel_provider,
    params: LoopParams,
    max_iterations: int = 10,
    workers: int = 1,
) -> list[BatchRecord]:
    """Loop over (image_id, image) pairs, order-preserving, one failure per
    image at most. Image loops share no state, so worker count cannot change
    the results, only the wall time."""
    jobs = [
        (image_id, image, model, inpainter, vessel_provider, params, max_iterations)
        for image_id, image in items
    ]
    if workers <= 1:
        return [_run_one(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


# ---------------------------------------------------------------- traces


def write_trace_dir(result: LoopResult, out_dir) -> Path:
    """Persist one loop's artifacts: per-cycle saliency/mask/inpainted PNGs
    plus a trace.json with the predictions and cycle records."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    iterations = []
    for trace in result.traces:
        t = trace.iteration
        sal.save_saliency_png(trace.saliency, out_dir / f"iter_{t}_saliency.png")
        save_mask(out_dir / f"iter_{t}_mask.png", trace.mask)
        save_rgb(out_dir / f"iter_{t}_inpainted.png", trace.inpainted)
        iterations.append(
            {
                "t": t,
                "grade": trace.grade,
                "probs": [float(p) for p in trace.probs],
                "reason": "referable",
                "mask_pixels": int(trace.mask.sum()),
                "accumulated_pixels": int(trace.accumulated.sum()),
                "inpaint_sweeps": trace.inpaint_sweeps,
                "inpaint_converged": trace.inpaint_converged,
                "repair_skipped": trace.repair_skipped,
            }
        )
    save_mask(out_dir / "accumulated_mask.png", result.accumulated_mask)
    save_rgb(out_dir / "final.png", result.final_image)

    def _pred_record(pred: enc.PredictionRecord, reason: str) -> dict:
        return {
            "grade": pred.grade,
            "scores": [float(s) for s in pred.scores],
            "probs": [float(p) for p in pred.probs],
            "lesions": [int(v) for v in pred.lesions],
            "reason": reason,
        }

    payload = {
        "image_id": result.image_id,
        "iterations_performed": result.iterations_performed,
        "termination_reason": result.termination_reason,
        "iterations": iterations,
        "entry": _pred_record(result.entry_prediction, "entry"),
        "final": _pred_record(result.final_prediction, result.termination_reason),
        "events": result.events,
    }
    (out_dir / "trace.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return out_dir


def load_trace_json(trace_dir) -> dict:
    path = Path(trace_dir) / "trace.json"
    if not path.is_file():
        raise MissingArtifactError(f"trace.json not found in {trace_dir}")
    return json.loads(path.read_text())
