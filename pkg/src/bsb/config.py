"""Flat INI-style configuration for experiment runs.

Every knob lives in one of a fixed set of sections with string values;
command line flags override individual keys before the typed
ExperimentConfig is built. Unknown sections or keys are rejected so a
typo'd config fails loudly instead of silently using a default.
"""

import configparser
from pathlib import Path

from .attacks import BoundaryConfig, HsjConfig
from .harness import ExperimentConfig
from .nn import TrainConfig

DEFAULTS = {
    "experiment": {
        "dataset": "synth",
        "data_dir": "",
        "seed": "0",
        "out_dir": "out",
        "samples_per_attack": "100",
        "workers": "1",
        "families": "lenet5",
        "bayesian": "false,true",
    },
    "synth": {
        "n": "600",
        "classes": "4",
        "side": "16",
        "noise": "0.1",
    },
    "model": {
        "mc_samples": "30",
        "dropout_rate": "0.5",
    },
    "train": {
        "learning_rate": "0.01",
        "batch_size": "64",
        "max_epochs": "50",
        "early_stop_patience": "5",
    },
    "boundary": {
        "max_queries": "5000",
        "rel_orth_step": "0.1",
        "rel_source_step": "0.1",
        "adapt_every": "30",
        "target_orth_success": "0.5",
        "init_trials": "200",
        "distance_budget": "3.0",
    },
    "hsj": {
        "norm": "l2",
        "max_queries": "5000",
        "bin_search_tol": "0.001",
        "grad_batch_init": "20",
        "max_outer_iters": "20",
        "distance_budget": "",
    },
    "mi": {
        "frac": "0.5",
        "k": "3",
        "t": "30",
    },
}


def load_settings(path=None):
    """Defaults, with the INI file at `path` (if given) layered on top."""
    settings = {sec: dict(kv) for sec, kv in DEFAULTS.items()}
    if path is None:
        return settings
    if not Path(path).is_file():
        raise ValueError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ValueError(f"malformed config file {path}: {exc}") from exc
    for sec in cp.sections():
        if sec not in settings:
            raise ValueError(f"unknown config section [{sec}] in {path}")
        for key, value in cp.items(sec):
            if key not in settings[sec]:
                raise ValueError(f"unknown config key {key!r} in section [{sec}] of {path}")
            settings[sec][key] = value
    return settings


def apply_override(settings, dotted_key, value):
    """Set one `section.key` to a new value, as a CLI flag does."""
    sec, _, key = dotted_key.partition(".")
    if sec not in settings or key not in settings[sec]:
        raise ValueError(f"unknown config key {dotted_key!r}")
    settings[sec][key] = str(value)


def _int(settings, sec, key):
    raw = settings[sec][key]
    try:
        return int(raw)
    except ValueError as exc:
        raise ValueError(f"config {sec}.{key} must be an integer, got {raw!r}") from exc


def _float(settings, sec, key):
    raw = settings[sec][key]
    try:
        return float(raw)
    except ValueError as exc:
        raise ValueError(f"config {sec}.{key} must be a number, got {raw!r}") from exc


def _bool(raw, where):
    low = str(raw).strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"config {where} must be a boolean, got {raw!r}")


def _list(raw):
    return [item.strip() for item in str(raw).split(",") if item.strip()]


def build_config(settings) -> ExperimentConfig:
    """Convert a validated settings mapping into a typed ExperimentConfig."""
    seed = _int(settings, "experiment", "seed")
    hsj_budget = settings["hsj"]["distance_budget"].strip()
    train = TrainConfig(
        learning_rate=_float(settings, "train", "learning_rate"),
        batch_size=_int(settings, "train", "batch_size"),
        max_epochs=_int(settings, "train", "max_epochs"),
        early_stop_patience=_int(settings, "train", "early_stop_patience"),
        seed=seed,
    )
    boundary = BoundaryConfig(
        max_queries=_int(settings, "boundary", "max_queries"),
        rel_orth_step=_float(settings, "boundary", "rel_orth_step"),
        rel_source_step=_float(settings, "boundary", "rel_source_step"),
        adapt_every=_int(settings, "boundary", "adapt_every"),
        target_orth_success=_float(settings, "boundary", "target_orth_success"),
        init_trials=_int(settings, "boundary", "init_trials"),
        distance_budget=_float(settings, "boundary", "distance_budget"),
        seed=seed,
    )
    hsj = HsjConfig(
        norm=settings["hsj"]["norm"].strip(),
        max_queries=_int(settings, "hsj", "max_queries"),
        bin_search_tol=_float(settings, "hsj", "bin_search_tol"),
        grad_batch_init=_int(settings, "hsj", "grad_batch_init"),
        max_outer_iters=_int(settings, "hsj", "max_outer_iters"),
        distance_budget=None if not hsj_budget else _float(settings, "hsj", "distance_budget"),
        seed=seed,
    )
    flags = [_bool(b, "experiment.bayesian") for b in _list(settings["experiment"]["bayesian"])]
    return ExperimentConfig(
        dataset=settings["experiment"]["dataset"].strip(),
        data_dir=settings["experiment"]["data_dir"].strip() or None,
        synth_n=_int(settings, "synth", "n"),
        synth_classes=_int(settings, "synth", "classes"),
        synth_side=_int(settings, "synth", "side"),
        synth_noise=_float(settings, "synth", "noise"),
        families=tuple(_list(settings["experiment"]["families"])),
        bayesian_flags=tuple(flags),
        train=train,
        boundary=boundary,
        hsj=hsj,
        samples_per_attack=_int(settings, "experiment", "samples_per_attack"),
        mi_frac=_float(settings, "mi", "frac"),
        mi_k=_int(settings, "mi", "k"),
        mi_T=_int(settings, "mi", "t"),
        mc_samples=_int(settings, "model", "mc_samples"),
        dropout_rate=_float(settings, "model", "dropout_rate"),
        seed=seed,
        out_dir=settings["experiment"]["out_dir"].strip() or "out",
        workers=_int(settings, "experiment", "workers"),
    )


def load_config(path=None, overrides=None) -> ExperimentConfig:
    """One-call convenience: file (optional) + overrides -> ExperimentConfig."""
    settings = load_settings(path)
    for dotted_key, value in (overrides or {}).items():
        apply_override(settings, dotted_key, value)
    return build_config(settings)
