"""Gradient-descent training and parameter serialization."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..errors import TrainingDiverged
from .features import SceneFeatures
from .model import ModelParams, loss_and_grad, param_shapes, scene_loss

log = logging.getLogger(__name__)

PARAMS_FORMAT = "primetraj-evaluator-params"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class TrainingExample:
    features: SceneFeatures
    labels: np.ndarray  # psi
    scenario_id: str = ""


def dataset_loss(params: ModelParams, examples: Sequence[TrainingExample]) -> float:
    return float(np.mean([scene_loss(params, e.features, e.labels) for e in examples]))


def batch_gradient(params: ModelParams, examples: Sequence[TrainingExample]):
    """Mean loss and mean gradient over a batch of scenes."""
    total = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    losses = []
    for ex in examples:
        loss, g = loss_and_grad(params, ex.features, ex.labels)
        losses.append(loss)
        for k in total:
            total[k] += g[k]
    n = len(examples)
    return float(np.mean(losses)), {k: v / n for k, v in total.items()}


class Adam:
    """Adam update rule with bias correction."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            m = self.m.get(k, 0.0) * self.b1 + (1.0 - self.b1) * g
            v = self.v.get(k, 0.0) * self.b2 + (1.0 - self.b2) * g * g
            self.m[k], self.v[k] = m, v
            params.arrays[k] = params.arrays[k] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class GradientDescent:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            params.arrays[k] = params.arrays[k] - self.lr * g


OPTIMIZERS = {"gd": GradientDescent, "adam": Adam}
SCHEDULES = ("constant", "cosine")


def train(examples: Sequence[TrainingExample], params: ModelParams, epochs: int, lr: float,
          seed: int = 0, batch_size: int | None = None, max_grad_norm: float | None = None,
          optimizer: str = "gd", schedule: str = "constant",
          callback: Callable[[int, float, ModelParams], None] | None = None):
    """(Mini-)batch gradient descent on the mean cross-entropy.

    ``optimizer`` is "gd" (plain steps of size lr) or "adam"; ``schedule``
    "cosine" anneals the step size from lr to 0 over the epochs. Returns the
    trained copy of ``params`` and the loss history (length epochs + 1): the
    dataset loss at initialization, then per epoch the dataset loss after the
    step (full batch) or the running mean of the mini-batch losses seen
    during the epoch, each taken just before its step (mini-batch). Mini-batch
    order is shuffled with ``seed``; ``batch_size=None`` means full-batch.
    Raises TrainingDiverged if the loss stops being finite.
    """
    if optimizer not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer {optimizer!r}; expected one of {sorted(OPTIMIZERS)}")
    if schedule not in SCHEDULES:
        raise ValueError(f"unknown schedule {schedule!r}; expected one of {SCHEDULES}")
    if not examples:
        raise ValueError("training needs at least one example")
    if epochs < 0 or lr < 0:
        raise ValueError("epochs and lr must be non-negative")
    params = params.copy()
    opt = OPTIMIZERS[optimizer](lr)
    rng = np.random.default_rng(seed)
    n = len(examples)
    bs = n if batch_size is None else max(1, min(batch_size, n))
    full = bs == n
    # full batch: the gradient pass at the new parameters also yields the
    # epoch loss, so the next epoch reuses it instead of a second pass
    if full:
        loss, grads = batch_gradient(params, examples)
    else:
        loss, grads = dataset_loss(params, examples), None
    history = [loss]
    if not math.isfinite(loss):
        raise TrainingDiverged(0, None)
    for epoch in range(1, epochs + 1):
        if schedule == "cosine":
            opt.lr = 0.5 * lr * (1.0 + math.cos(math.pi * (epoch - 1) / epochs))
        order = np.arange(n) if full else rng.permutation(n)
        running = 0.0
        for start in range(0, n, bs):
            if grads is None:
                batch = [examples[i] for i in order[start:start + bs]]
                batch_loss, grads = batch_gradient(params, batch)
                running += batch_loss * len(batch)
            if max_grad_norm is not None:
                norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if norm > max_grad_norm:
                    grads = {k: g * (max_grad_norm / norm) for k, g in grads.items()}
            opt.step(params, grads)
            grads = None
        if not full:
            loss = running / n
        elif epoch < epochs:
            loss, grads = batch_gradient(params, examples)
        else:
            loss = dataset_loss(params, examples)
        if not math.isfinite(loss) or not all(np.all(np.isfinite(a)) for a in params.arrays.values()):
            raise TrainingDiverged(epoch, history[-1])
        history.append(loss)
        log.debug("epoch %d loss %.6f", epoch, loss)
        if callback is not None:
            callback(epoch, loss, params)
    return params, history


# -------------------------------------------------------------------------- I/O

def params_to_dict(params: ModelParams) -> dict:
    return {
        "format": PARAMS_FORMAT,
        "version": PARAMS_VERSION,
        "width": params.width,
        "seed": params.seed,
        "shapes": {k: list(s) for k, s in param_shapes(params.width).items()},
        "arrays": {k: params.arrays[k].tolist() for k in params.names},
    }


def params_from_dict(doc) -> ModelParams:
    if not isinstance(doc, dict) or doc.get("format") != PARAMS_FORMAT:
        raise ValueError("not an evaluator parameter document")
    if doc.get("version") != PARAMS_VERSION:
        raise ValueError(f"unsupported parameter version {doc.get('version')!r}")
    width = doc.get("width")
    if not isinstance(width, int) or width < 1:
        raise ValueError("parameter document has an invalid width")
    shapes = param_shapes(width)
    header = {k: tuple(v) for k, v in doc.get("shapes", {}).items()}
    if header != shapes:
        raise ValueError("parameter shape header does not match the declared width")
    arrays = {}
    for k, shape in shapes.items():
        a = np.asarray(doc["arrays"].get(k), dtype=float)
        if a.shape != shape:
            raise ValueError(f"parameter {k} has shape {a.shape}, expected {shape}")
        arrays[k] = a
    return ModelParams(width, arrays, doc.get("seed"))


def save_params(params: ModelParams, destination: str | os.PathLike) -> None:
    Path(destination).write_text(json.dumps(params_to_dict(params)) + "\n")


def load_params(source: str | os.PathLike) -> ModelParams:
    try:
        doc = json.loads(Path(source).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{source}: JSON parse error at line {exc.lineno}: {exc.msg}") from None
    return params_from_dict(doc)
