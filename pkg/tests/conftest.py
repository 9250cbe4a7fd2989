"""Shared helpers: a tiny synthetic experiment that runs in milliseconds."""
import pytest

TINY_SETTINGS = {
    "dataset": "synthetic",
    "synthetic_train": 240,
    "synthetic_test": 120,
    "layer_sizes": (784, 6, 10),
    "seed": 0,
    "pretrain_epochs": 2,
    "pretrain_batch_size": 64,
    "pretrain_lr": 1e-3,
    "weight_decay": 0.0,
    "retrain_epochs": 2,
    "batch_size": 64,
    "lr_weights": 1e-3,
    "lr_means": 1e-3,
    "lr_log_vars": 1e-3,
    "lr_logits": 1e-3,
    "n_components": 4,
    "pi0": 0.9,
    "tau": 1e-5,
    "kl_threshold": 1e-2,
}


@pytest.fixture
def tiny_config(tmp_path):
    """ExperimentConfig factory writing artifacts under tmp_path."""
    from softshare.config import ExperimentConfig

    def build(**overrides):
        values = dict(TINY_SETTINGS)
        values.setdefault("output_dir", str(tmp_path / "out"))
        values.update(overrides)
        return ExperimentConfig(**values)

    return build


@pytest.fixture
def tiny_config_file(tmp_path):
    """The same tiny experiment as a key=value file for CLI runs."""
    lines = []
    for key, value in TINY_SETTINGS.items():
        if key == "layer_sizes":
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    lines.append(f"output_dir = {tmp_path / 'out'}")
    path = tmp_path / "tiny.cfg"
    path.write_text("\n".join(lines) + "\n")
    return path
