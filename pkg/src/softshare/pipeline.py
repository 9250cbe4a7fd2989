"""End-to-end orchestration: pretrain, retrain under the prior, post-process,
encode, evaluate, report.

Artifacts land in the configured output directory under fixed names:

    pretrained.swsc   plain pretrained network
    model.swsc        retrained network with the mixture block appended
    trace.csv         per-epoch retraining trace
    quantized.bin     assignments + mean table + biases
    weights.swsb      bit-packed sparse encoding of the quantized weights
    report.json       compression accounting plus before/after test error

Stage failures raise with the stage name prefixed; artifacts written by
earlier stages stay on disk. Reported error_before evaluates the loaded
pretrained checkpoint; error_after evaluates the network rebuilt from the
decoded blob plus the stored biases, so the report measures exactly what a
consumer of the artifacts would see.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .codec import decode_network, encode_network
from .config import ExperimentConfig
from .data import MnistDataset, load_mnist, synthetic_digits
from .errors import ConfigurationError, SoftShareError
from .mixture import init_mixture
from .net import Batch, Layer, Network, error_loss_and_grad, evaluate, \
    flat_weights, iter_batches, make_network
from .postprocess import load_quantized, merge_pass, quantize, save_quantized
from .train import AdamState, TraceRow, retrain, trace_to_csv


@dataclass
class PipelineResult:
    report: dict
    output_dir: Path


def load_dataset(cfg: ExperimentConfig) -> MnistDataset:
    if cfg.dataset == "synthetic":
        return synthetic_digits(cfg.synthetic_train, cfg.synthetic_test,
                                seed=cfg.seed, noise=cfg.synthetic_noise)
    if cfg.dataset == "mnist":
        return load_mnist(cfg.data_dir)
    return load_mnist(cfg.data_dir, expected_counts=None)


def pretrain_network(cfg: ExperimentConfig, data: MnistDataset,
                     on_epoch: Optional[Callable[[int, float], None]] = None,
                     ) -> Network:
    """Adam training on the error loss with L2 weight decay."""
    net = make_network(cfg.layer_sizes, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    adams = [
        (AdamState(l.weights.shape, cfg.pretrain_lr),
         AdamState(l.biases.shape, cfg.pretrain_lr))
        for l in net.layers
    ]
    for epoch in range(1, cfg.pretrain_epochs + 1):
        for batch in iter_batches(data.train.inputs, data.train.labels,
                                  cfg.pretrain_batch_size, rng):
            _, grads = error_loss_and_grad(net, batch)
            for layer, (aw, ab), (dw, db) in zip(net.layers, adams, grads):
                if cfg.weight_decay:
                    dw = dw + cfg.weight_decay * layer.weights
                layer.weights += aw.step(dw)
                layer.biases += ab.step(db)
        if on_epoch is not None:
            on_epoch(epoch, evaluate(net, data.test))
    return net


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except SoftShareError as e:
        msg = e.args[0] if e.args else ""
        e.args = (f"stage {name}: {msg}",) + e.args[1:]
        raise


def run_pipeline(cfg: ExperimentConfig,
                 log: Optional[Callable[[str], None]] = None) -> PipelineResult:
    emit = log or (lambda s: None)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    data = _stage("load-data", load_dataset, cfg)

    if cfg.pretrained_checkpoint:
        net, _, _ = _stage("load-pretrained", load_checkpoint,
                           cfg.pretrained_checkpoint)
    else:
        existing = out / "pretrained.swsc"
        if existing.exists():
            net, _, _ = _stage("load-pretrained", load_checkpoint, existing)
        else:
            emit("pretraining")
            net = _stage(
                "pretrain", pretrain_network, cfg, data,
                lambda ep, err: emit(f"pretrain epoch {ep}: test error {err:.4f}"))
            save_checkpoint(net, existing)
    error_before = _stage("evaluate-before", evaluate, net, data.test)
    emit(f"pretrained test error {error_before:.4f}")

    mixture = _stage("init-mixture", init_mixture, flat_weights(net),
                     cfg.n_components, cfg.pi0, cfg.weight_decay,
                     tau=cfg.tau, pi0_trainable=cfg.pi0_trainable)
    hyper = cfg.hyper_config()

    def log_epoch(row: TraceRow):
        emit(f"retrain epoch {row.epoch}: error loss {row.error_loss:.4f} "
             f"complexity {row.complexity_loss:.1f} test error {row.test_error:.4f}")

    net, mixture, trace = _stage("retrain", retrain, net, mixture, data.train,
                                 cfg.train_config(), hyper, data.test,
                                 on_epoch=log_epoch)
    save_checkpoint(net, out / "model.swsc", mixture, hyper)
    (out / "trace.csv").write_text(trace_to_csv(trace))

    merged = _stage("merge", merge_pass, mixture, cfg.merge_config())
    emit(f"components after merging: {merged.n_components}")
    q = _stage("quantize", quantize, net, merged)
    save_quantized(q, out / "quantized.bin")

    blob, report = _stage("encode", encode_network, q, cfg.p_fc, cfg.p_conv)
    (out / "weights.swsb").write_bytes(blob)

    matrices = _stage("decode", decode_network, blob)
    decoded = Network([
        Layer(w, ql.biases.copy(), ql.activation)
        for w, ql in zip(matrices, q.layers)
    ])
    error_after = _stage("evaluate-after", evaluate, decoded, data.test)
    emit(f"compression rate {report.compression_rate:.2f}, "
         f"test error {error_before:.4f} -> {error_after:.4f}")

    report.error_before = float(error_before)
    report.error_after = float(error_after)
    report_dict = report.as_dict()
    report_dict["n_components_final"] = merged.n_components
    (out / "report.json").write_text(
        json.dumps(report_dict, sort_keys=True, indent=2) + "\n")
    return PipelineResult(report=report_dict, output_dir=out)


def evaluate_blob(blob_path, quantized_path, test: Batch) -> float:
    """Test error of the network rebuilt from an encoded blob plus the
    biases and activations stored alongside the quantized model."""
    q = load_quantized(quantized_path)
    matrices = decode_network(Path(blob_path).read_bytes())
    if len(matrices) != len(q.layers):
        raise ConfigurationError(
            "blob and quantized model disagree on layer count")
    net = Network([
        Layer(w, ql.biases.copy(), ql.activation)
        for w, ql in zip(matrices, q.layers)
    ])
    return evaluate(net, test)
