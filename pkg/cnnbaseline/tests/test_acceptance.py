"""Acceptance for the network baseline: shape contract, 10-frame memorization
and the finite-difference gradient check, each printing one PASS line."""

import time

import numpy as np
import torch

from cnnbaseline import NetSpec, TrainConfig, build_network, predict, train
from cnnbaseline.train import segmentation_loss
from gloveseg import evalkit


def report(name, elapsed, detail=""):
    print(f"ACCEPTANCE PASS {name} ({elapsed:.1f}s) {detail}".rstrip())


def test_forward_pass_shape():
    t0 = time.perf_counter()
    model = build_network(NetSpec(input_size=(64, 64)))
    logits = model(torch.zeros(1, 1, 64, 64))
    assert tuple(logits.shape) == (1, 3, 64, 64)
    report("cnn-forward-shape", time.perf_counter() - t0, "64x64 -> 64x64x3 logits")


def test_memorizes_ten_frames():
    t0 = time.perf_counter()
    scene = evalkit.SynthParams(width=64, height=64)
    corpus = [(d, m) for d, _, m in (evalkit.synth_scene(s, scene) for s in range(10))]
    model = build_network(NetSpec(input_size=(64, 64)))
    cfg = TrainConfig(epochs=150, lr=1e-4, batch_size=1, val_fraction=0.0,
                      patience=10**9, augment=False, seed=1)
    history = train(model, corpus, config=cfg, val_corpus=[])

    cm = evalkit.empty_confusion()
    for depth, mask in corpus:
        cm = evalkit.accumulate(cm, mask, predict(model, depth))
    miou = evalkit.iou_report(cm).miou
    final_loss = history["loss"][-1]
    assert final_loss < 0.01, f"training loss {final_loss:.4f}"
    assert miou >= 0.95, f"training mIoU {miou:.4f}"
    report("cnn-memorization", time.perf_counter() - t0, f"loss {final_loss:.4f}, train mIoU {miou:.4f}")


def test_gradient_against_central_differences():
    t0 = time.perf_counter()
    torch.manual_seed(7)
    model = build_network(NetSpec(input_size=(8, 8), channels=(2,), stem_channels=2)).double()
    x = torch.randn(1, 1, 8, 8, dtype=torch.float64)
    y = torch.randint(0, 3, (1, 8, 8))

    loss = segmentation_loss(model(x), y)
    loss.backward()
    params = list(model.parameters())
    probes = [(params[0], (0, 0, 0, 0)), (params[1], (1,)), (params[-1], (2,))]
    worst = 0.0
    h = 1e-6
    for tensor, index in probes:
        analytic = float(tensor.grad[index])
        with torch.no_grad():
            original = float(tensor[index])
            tensor[index] = original + h
            f_plus = float(segmentation_loss(model(x), y))
            tensor[index] = original - h
            f_minus = float(segmentation_loss(model(x), y))
            tensor[index] = original
        numeric = (f_plus - f_minus) / (2 * h)
        rel = abs(analytic - numeric) / max(1e-8, abs(numeric))
        worst = max(worst, rel)
        assert rel <= 1e-3
    report("cnn-gradient-check", time.perf_counter() - t0, f"worst relative error {worst:.2e}")
