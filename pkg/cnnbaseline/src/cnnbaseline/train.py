"""Training and inference for the encoder-decoder baseline.

Inputs are unit-mean normalized depth rasters; the loss is soft-max cross
entropy with median-frequency class weights, optimized with Adam at a small
learning rate, with random flip/translate/scale augmentation and early
stopping on validation mIoU.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from gloveseg import evalkit
from gloveseg.imaging import DepthFrame

from .net import SegNet

Corpus = Sequence[tuple[DepthFrame, np.ndarray]]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    lr: float = 1e-4  # Adam; keep within [1e-6, 1e-4]
    batch_size: int = 8
    val_fraction: float = 0.2
    patience: int = 30  # early-stopping epochs without val mIoU improvement
    augment: bool = True
    weighted_loss: bool = True
    seed: int = 0

    def __post_init__(self):
        if not (1e-6 <= self.lr <= 1e-4):
            raise ValueError("learning rate must stay within [1e-6, 1e-4]")


def prepare_input(depth: DepthFrame) -> torch.Tensor:
    """(1, H, W) float32 tensor of unit-mean-normalized depth."""
    return torch.from_numpy(evalkit.normalize_depth(depth).astype(np.float32)).unsqueeze(0)


def predict(model: SegNet, depth: DepthFrame) -> np.ndarray:
    """Per-pixel argmax label mask; invalid-depth pixels stay background."""
    model.eval()
    with torch.no_grad():
        logits = model(prepare_input(depth).unsqueeze(0))
    mask = logits.argmax(dim=1)[0].numpy().astype(np.uint8)
    mask[depth.values == 0] = 0
    return mask


def _corpus_miou(model: SegNet, corpus: Corpus) -> float:
    cm = evalkit.empty_confusion()
    for depth, label in corpus:
        cm = evalkit.accumulate(cm, label, predict(model, depth))
    return evalkit.iou_report(cm).miou


def _augmented(depth: DepthFrame, label: np.ndarray, rng: np.random.Generator):
    spec = evalkit.sample_augment_spec(rng)
    values, mask = evalkit.augment(depth.values, label, spec)
    if not (values > 0).any():  # augmentation pushed everything out of frame
        return depth, label
    return DepthFrame(values), mask


def train(
    model: SegNet,
    corpus: Corpus,
    class_weights: Optional[np.ndarray] = None,
    config: TrainConfig = TrainConfig(),
    val_corpus: Optional[Corpus] = None,
) -> dict:
    """Train in place; returns a history dict with per-epoch loss and the best
    validation mIoU. When no validation corpus is given one is split off."""
    if not corpus:
        raise ValueError("empty training corpus")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    if class_weights is None and config.weighted_loss:
        class_weights = evalkit.class_weights([label for _, label in corpus])
    weight = (
        torch.tensor(np.asarray(class_weights), dtype=torch.float32)
        if class_weights is not None
        else None
    )

    if val_corpus is None:
        n_val = max(1, int(round(len(corpus) * config.val_fraction))) if len(corpus) > 1 else 0
        val_corpus = corpus[len(corpus) - n_val:]
        train_corpus = list(corpus[: len(corpus) - n_val]) or list(corpus)
    else:
        train_corpus = list(corpus)

    criterion = nn.CrossEntropyLoss(weight=weight)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)

    best_miou = -1.0
    best_state = copy.deepcopy(model.state_dict())
    stale = 0
    history = {"loss": [], "val_miou": []}

    for _ in range(config.epochs):
        model.train()
        order = rng.permutation(len(train_corpus))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [train_corpus[i] for i in order[start:start + config.batch_size]]
            inputs, targets = [], []
            for depth, label in batch:
                if config.augment:
                    depth, label = _augmented(depth, label, rng)
                inputs.append(prepare_input(depth))
                targets.append(torch.from_numpy(np.ascontiguousarray(label)).long())
            x = torch.stack(inputs)
            y = torch.stack(targets)
            optimizer.zero_grad()
            loss = criterion(model(x), y)
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach()) * len(batch)
        history["loss"].append(epoch_loss / len(train_corpus))

        if val_corpus:
            miou = _corpus_miou(model, val_corpus)
            history["val_miou"].append(miou)
            if miou > best_miou + 1e-6:
                best_miou = miou
                best_state = copy.deepcopy(model.state_dict())
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break

    if val_corpus:
        model.load_state_dict(best_state)
    history["best_val_miou"] = best_miou if val_corpus else None
    return history


def segmentation_loss(
    logits: torch.Tensor,
    target: torch.Tensor,
    class_weights: Optional[np.ndarray] = None,
) -> torch.Tensor:
    """Weighted soft-max cross entropy; exposed for the gradient checks."""
    weight = None
    if class_weights is not None:
        weight = torch.tensor(np.asarray(class_weights), dtype=logits.dtype)
    return nn.functional.cross_entropy(logits, target, weight=weight)
