"""Model bundles, Adam, and the deterministic training loop."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .. import bgunet, fusion
from ..autodiff.layers import f32, load_state
from ..imageio import DepthMap, ImageGray, ImageRGB, to_gray
from . import rng as rngmod
from .checkpoint import Checkpoint, CheckpointError
from .config import AdamConfig, TrainConfig, arch_mismatch
from .data import Sample


class NumericalError(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


# --------------------------------------------------------------------------
# model bundle


def _seg_edge(s: Sample, k: int = 8) -> tuple[ImageRGB, ImageGray]:
    """The sample's own maps, or the k-means / Sobel stand-ins when absent."""
    seg = s.seg
    if seg is None:
        distinct = len(np.unique(s.rgb.data.reshape(-1, 3), axis=0))
        seg = fusion.pseudo_segmentation(s.rgb, min(k, max(distinct, 2))) if distinct >= 2 else s.rgb
    edge = s.edge if s.edge is not None else fusion.edge_map(to_gray(s.rgb))
    return seg, edge


class Model:
    """The networks a config needs, under ``bg.`` and ``fusion.`` name prefixes.

    ``kind=bg`` holds the grid network alone. ``kind=fusion`` holds the
    refinement network plus, for the geometry-bearing mode, the grid network
    that produces its geometry channel (frozen unless ``fusion.joint``).
    """

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        need_bg = cfg.kind == "bg" or cfg.fusion.mode.uses_geometry
        self.bg = bgunet.build(cfg.bg, rngmod.derive_seed(cfg.seed, "bg_init")) if need_bg else None
        self.fusion = (fusion.build(cfg.fusion, rngmod.derive_seed(cfg.seed, "fusion_init"))
                       if cfg.kind == "fusion" else None)

    @property
    def joint(self) -> bool:
        return self.cfg.kind == "fusion" and self.bg is not None and self.cfg.fusion.joint

    def _parts(self):
        if self.bg is not None:
            yield "bg.", self.bg
        if self.fusion is not None:
            yield "fusion.", self.fusion

    def named_parameters(self):
        for prefix, m in self._parts():
            for name, p in m.named_parameters():
                yield prefix + name, p

    def named_buffers(self):
        for prefix, m in self._parts():
            for name, b in m.named_buffers():
                yield prefix + name, b

    def trainable(self) -> list[tuple[str, ad.Param]]:
        if self.cfg.kind == "bg" or self.joint:
            return list(self.named_parameters())
        return [(n, p) for n, p in self.named_parameters() if n.startswith("fusion.")]

    def train(self, mode: bool = True):
        for _, m in self._parts():
            m.train(mode)
        # a frozen geometry network always runs with its running statistics
        if self.cfg.kind == "fusion" and self.bg is not None and not self.joint:
            self.bg.eval()
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.zero_grad()

    def load(self, params: dict, buffers: dict, prefix: str | None = None):
        for pre, m in self._parts():
            if prefix is not None and pre != prefix:
                continue
            sub_p = {k[len(pre):]: v for k, v in params.items() if k.startswith(pre)}
            sub_b = {k[len(pre):]: v for k, v in buffers.items() if k.startswith(pre)}
            try:
                load_state(m, sub_p, sub_b)
            except ValueError as e:
                raise CheckpointError(str(e)) from e

    def state(self) -> tuple[dict, dict]:
        return ({n: p.data.copy() for n, p in self.named_parameters()},
                {n: b.copy() for n, b in self.named_buffers()})

    # -- inputs --------------------------------------------------------------

    def bg_inputs(self, samples) -> np.ndarray:
        return bgunet.input_tensor([s.rgb for s in samples], self.cfg.bg).data

    def fusion_inputs(self, samples) -> np.ndarray:
        """(N, C, H, W) refinement inputs; geometry from the current grid network."""
        mode = self.cfg.fusion.mode
        geo = [None] * len(samples)
        if mode.uses_geometry:
            was = self.bg.training
            self.bg.eval()
            geo = bgunet.predict_geometry(self.bg, [s.rgb for s in samples])
            self.bg.train(was)
        out = []
        for s, g in zip(samples, geo):
            seg, edge = _seg_edge(s)
            out.append(fusion.assemble_array(fusion.FusionInput(g, seg, edge, s.rgb), mode))
        return np.stack(out)

    def fusion_inputs_without_geometry(self, samples) -> np.ndarray:
        """Segmentation and edge channels, for joint training where geometry stays on the tape."""
        out = []
        for s in samples:
            seg, edge = _seg_edge(s)
            out.append(np.concatenate([seg.data.transpose(2, 0, 1), edge.data[None]]))
        return np.stack(out)

    # -- outputs -------------------------------------------------------------

    def normalized(self, samples) -> np.ndarray:
        """(N, H, W) predictions in normalized depth units with the model as-is."""
        if self.cfg.kind == "bg":
            geo = bgunet.predict_geometry(self.bg, [s.rgb for s in samples])
            return np.stack([g.data for g in geo])
        x = ad.Tensor(self.fusion_inputs(samples))
        return self.fusion(x).data[:, 0]

    def predict(self, samples) -> list[DepthMap]:
        was = [m.training for _, m in self._parts()]
        self.eval()
        y = self.normalized(samples)
        for (_, m), w in zip(self._parts(), was):
            m.train(w)
        return [DepthMap(y[i] * self.cfg.depth_norm) for i in range(len(samples))]

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint) -> "Model":
        m = cls(ck.config)
        m.load(ck.params, ck.buffers)
        return m


def _targets(samples, depth_norm):
    t = np.stack([np.where(s.depth.mask, s.depth.data / depth_norm, 0.0) for s in samples])[:, None]
    m = np.stack([s.depth.mask for s in samples])[:, None]
    return t, m


def batch_loss(model: Model, samples, cache=None) -> ad.Tensor:
    """Masked MSE of one batch, recorded on the active tape."""
    cfg = model.cfg
    if cfg.kind == "bg":
        x = ad.Tensor(cache if cache is not None else model.bg_inputs(samples))
        return bgunet.loss(model.bg, x, [s.rgb for s in samples], [s.depth for s in samples], cfg.depth_norm)
    t, m = _targets(samples, cfg.depth_norm)
    if model.joint:
        images = [s.rgb for s in samples]
        out = model.bg(ad.Tensor(model.bg_inputs(samples)))
        geo = bgunet.geometry_tensor(out, images, cfg.bg)
        aux = ad.Tensor(cache if cache is not None else model.fusion_inputs_without_geometry(samples))
        x = ad.concat([geo, aux], axis=1)
    else:
        x = ad.Tensor(cache if cache is not None else model.fusion_inputs(samples))
    return ad.mse(model.fusion(x), t, m)


def masked_mse(model: Model, samples, training: bool = False) -> float:
    """Objective value on ``samples`` without updating anything.

    ``training=True`` uses batch statistics (as during a step) but leaves the
    running statistics untouched.
    """
    saved = [b.copy() for _, b in model.named_buffers()]
    was = [m.training for _, m in model._parts()]
    model.train(training)
    try:
        return float(batch_loss(model, samples).item())
    finally:
        for (_, b), s in zip(model.named_buffers(), saved):
            b[...] = s
        for (_, m), w in zip(model._parts(), was):
            m.train(w)


# --------------------------------------------------------------------------
# optimizer


class Adam:
    def __init__(self, cfg: AdamConfig, params: list[tuple[str, ad.Param]]):
        self.cfg = cfg
        self.params = params
        self.m = {n: np.zeros_like(p.data) for n, p in params}
        self.v = {n: np.zeros_like(p.data) for n, p in params}
        self.t = 0

    def step(self):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for n, p in self.params:
            g = p.grad
            m = self.m[n] = c.beta1 * self.m[n] + (1.0 - c.beta1) * g
            v = self.v[n] = c.beta2 * self.v[n] + (1.0 - c.beta2) * g * g
            step = c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)
            p.data = f32(p.data - step)

    def load(self, m: dict, v: dict, t: int):
        if set(m) != set(self.m) or set(v) != set(self.v):
            raise CheckpointError("optimizer state does not match the trainable parameters")
        self.m = {k: np.array(m[k], dtype=np.float64) for k in self.m}
        self.v = {k: np.array(v[k], dtype=np.float64) for k in self.v}
        self.t = t


# --------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    model: Model
    epoch_loss: list[float]
    step_loss: list[float]


def total_steps(cfg: TrainConfig, n: int) -> int:
    per_epoch = math.ceil(n / cfg.batch_size)
    total = cfg.epochs * per_epoch
    return min(total, cfg.max_steps) if cfg.max_steps else total


def epoch_order(seed: int, epoch: int, n: int) -> tuple[np.ndarray, str]:
    g = rngmod.stream(seed, "shuffle", epoch)
    return g.permutation(n), rngmod.state_json(g)


def train(cfg: TrainConfig, dataset: list[Sample], resume: Checkpoint | None = None,
          geometry: Checkpoint | None = None, stop_at: int | None = None, log=None) -> TrainResult:
    """Run Adam on the masked-MSE objective.

    ``geometry`` supplies trained grid-network weights for the refinement
    network's geometry channel; ``resume`` continues an interrupted run and
    ``stop_at`` ends this call early at the given global step.
    """
    if not dataset:
        raise ValueError("training needs a non-empty dataset")
    model = Model(cfg)
    if geometry is not None:
        if model.bg is None:
            raise CheckpointError(f"mode {cfg.fusion.mode.value} has no geometry channel")
        if geometry.config.kind != "bg":
            raise CheckpointError("geometry checkpoint must come from a grid-network run")
        diff = _bg_mismatch(geometry.config, cfg)
        if diff:
            raise CheckpointError("geometry checkpoint conflicts with config: " + "; ".join(diff))
        model.load(geometry.params, geometry.buffers, prefix="bg.")
    elif cfg.kind == "fusion" and model.bg is not None and not cfg.fusion.joint and resume is None:
        raise ValueError("frozen geometry mode needs a trained grid-network checkpoint")

    opt = Adam(cfg.optim, model.trainable())
    epoch_loss: list[float] = []
    step_loss: list[float] = []
    step = 0
    if resume is not None:
        resume.check_compatible(cfg)
        model.load(resume.params, resume.buffers)
        opt.load(resume.adam_m, resume.adam_v, resume.step)
        step = resume.step
        epoch_loss = list(resume.epoch_loss)
        step_loss = list(resume.step_loss)

    n = len(dataset)
    per_epoch = math.ceil(n / cfg.batch_size)
    end = total_steps(cfg, n)
    if stop_at is not None:
        end = min(end, stop_at)
    # inputs that do not depend on trainable weights are computed once
    frozen_inputs = cfg.kind == "bg" or not model.joint
    cache = None
    if frozen_inputs:
        cache = model.bg_inputs(dataset) if cfg.kind == "bg" else model.fusion_inputs(dataset)
    elif cfg.kind == "fusion":
        cache = model.fusion_inputs_without_geometry(dataset)

    model.train(True)
    rng_state = resume.rng_state if resume is not None else "{}"
    while step < end:
        epoch, pos = divmod(step, per_epoch)
        order, gen_state = epoch_order(cfg.seed, epoch, n)
        rng_state = json.dumps({"seed": cfg.seed, "epoch": epoch, "generator": json.loads(gen_state)},
                               sort_keys=True)
        idx = order[pos * cfg.batch_size:(pos + 1) * cfg.batch_size]
        batch = [dataset[i] for i in idx]
        model.zero_grad()
        with ad.Tape() as tape:
            loss = batch_loss(model, batch, None if cache is None else cache[idx])
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(step, value)
            tape.backward(loss)
        opt.step()
        step += 1
        step_loss.append(value)
        if step % per_epoch == 0:
            # step_loss carries over on resume, so a split epoch averages the same values
            epoch_loss.append(float(np.mean(step_loss[-per_epoch:])))
            if log is not None:
                log(f"epoch {epoch + 1} step {step} loss {epoch_loss[-1]:.6e}")

    params, buffers = model.state()
    ck = Checkpoint(
        config=cfg, params=params, buffers=buffers,
        adam_m={k: v.copy() for k, v in opt.m.items()}, adam_v={k: v.copy() for k, v in opt.v.items()},
        rng_state=rng_state, step=step, epoch_loss=epoch_loss, step_loss=step_loss,
    )
    return TrainResult(ck, model, epoch_loss, step_loss)


def _bg_mismatch(a: TrainConfig, b: TrainConfig) -> list[str]:
    return [d for d in arch_mismatch(a.replace(kind="bg"), b.replace(kind="bg")) if d.startswith("bg.")]
