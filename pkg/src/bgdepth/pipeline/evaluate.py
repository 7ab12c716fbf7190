"""Dataset evaluation and the four-mode ablation harness."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from ..fusion import AblationMode
from ..imageio import DepthMap
from ..metrics import MetricReport, evaluate_pair
from .checkpoint import Checkpoint, CheckpointError
from .config import TrainConfig
from .data import Sample
from .train import Model, train

ABLATION_ORDER = (AblationMode.RGB_SEG_EDGE, AblationMode.RGB_SEG, AblationMode.RGB_EDGE, AblationMode.FULL)


@dataclass
class EvalResult:
    ids: list[str]
    reports: list[MetricReport]
    mean: MetricReport

    def to_tsv(self) -> str:
        lines = [MetricReport.tsv_header("id")]
        lines += [r.to_tsv(i) for i, r in zip(self.ids, self.reports)]
        lines.append(self.mean.to_tsv("mean"))
        return "\n".join(lines) + "\n"


def evaluate_predictions(samples: list[Sample], preds: list[DepthMap]) -> EvalResult:
    if len(samples) != len(preds):
        raise ValueError("one prediction per sample is required")
    if not samples:
        raise ValueError("nothing to evaluate")
    reports = [evaluate_pair(s.depth, p) for s, p in zip(samples, preds)]
    return EvalResult([s.id for s in samples], reports, MetricReport.mean(reports))


def check_dims(cfg: TrainConfig, samples: list[Sample]) -> None:
    for s in samples:
        h, w = s.rgb.data.shape[:2]
        try:
            if cfg.kind == "bg" or cfg.fusion.mode.uses_geometry:
                cfg.bg.check_dims(cfg.bg.grid_params.dims(w, h))
            if cfg.kind == "fusion":
                step = 2 ** cfg.fusion.stages
                if h % step or w % step:
                    raise ValueError(f"{w}x{h} not divisible by 2^stages = {step}")
        except ValueError as e:
            raise CheckpointError(f"{s.id}: checkpoint incompatible with sample size: {e}") from e


def evaluate(model: Model | Checkpoint, samples: list[Sample], batch: int = 8) -> EvalResult:
    if isinstance(model, Checkpoint):
        model = Model.from_checkpoint(model)
    check_dims(model.cfg, samples)
    preds: list[DepthMap] = []
    for i in range(0, len(samples), batch):
        preds += model.predict(samples[i:i + batch])
    return evaluate_predictions(samples, preds)


# --------------------------------------------------------------------------
# ablation


@dataclass
class AblationReport:
    rows: list[tuple[AblationMode, MetricReport]]

    def to_tsv(self) -> str:
        lines = [MetricReport.tsv_header("mode")]
        lines += [r.to_tsv(m.label) for m, r in self.rows]
        return "\n".join(lines) + "\n"

    def by_mode(self) -> dict[AblationMode, MetricReport]:
        return dict(self.rows)


def run_ablation(cfg: TrainConfig, train_set: list[Sample], test_set: list[Sample],
                 bg_steps: int, fusion_steps: int, log=None) -> AblationReport:
    """Train the grid network once, then each refinement mode under the same seed and budget."""
    bg_cfg = cfg.replace(kind="bg", max_steps=bg_steps)
    geometry = train(bg_cfg, train_set, log=log).checkpoint
    rows = []
    for mode in ABLATION_ORDER:
        mcfg = cfg.replace(kind="fusion", max_steps=fusion_steps,
                           fusion=dataclasses.replace(cfg.fusion, mode=mode))
        res = train(mcfg, train_set, geometry=geometry if mode.uses_geometry else None, log=log)
        rows.append((mode, evaluate(res.model, test_set).mean))
        if log is not None:
            log(f"{mode.label}: {rows[-1][1].to_tsv()}")
    return AblationReport(rows)
