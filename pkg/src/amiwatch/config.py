"""Run configuration: built-in defaults, a JSON file, then flag overrides.

The file is a JSON object of sections; every key is optional::

    {"inputs":    {"meter": "meter.csv", "weather": null, "holiday": null,
                   "meter_id": null, "site_id": null,
                   "synthetic_rows": 50000, "synthetic_seed": 1},
     "split":     {"train_end": 30000, "test_end": 40000},
     "ingest":    {"cap": 425.0, "mice_iters": 10, "mice_tol": 1e-4, "mice_seed": 0},
     "stats":     {"column": "consumption"},
     "gbdt":      {"n_trees": 200, "learning_rate": 0.05, ..., "cv_folds": 5},
     "md":        {"features": [...], "lam": null, "q": 0.95, "w": 24,
                   "buffer": 720, "threshold_mode": "global",
                   "split": "both"},
     "ae":        {"features": [...], "k": 2.0, "batch_size": 256, "max_epochs": 200,
                   "patience": 10, "lr": 0.001, "seed": 0,
                   "monitor_split": "test"},
     "cluster":   {"source": "md", "split": "test", "height": null},
     "bootstrap": {"B": 1000, "level": 0.95, "seed": 0, "split": "test"},
     "sweep":     {"k_values": [0.0, 0.5, ..., 5.0]}}

Unknown sections or keys are rejected rather than ignored.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, fields
from pathlib import Path

from . import autoenc, gbdt, mdscore
from .errors import ConfigError
from .ingest import CONSUMPTION_CAP, DEFAULT_BOUNDARIES

SPLITS = ("train", "test", "validation")
DETECT_SPLITS = ("test", "validation", "both", "all")


def defaults() -> dict:
    g = asdict(gbdt.GbdtConfig())
    g["cv_folds"] = 5
    return {
        "inputs": {"meter": None, "weather": None, "holiday": None, "meter_id": None,
                   "site_id": None, "synthetic_rows": None, "synthetic_seed": 1},
        "split": {"train_end": DEFAULT_BOUNDARIES[0], "test_end": DEFAULT_BOUNDARIES[1]},
        "ingest": {"cap": CONSUMPTION_CAP, "mice_iters": 10, "mice_tol": 1e-4,
                   "mice_seed": 0},
        "stats": {"column": "consumption"},
        "gbdt": g,
        "md": {"features": list(mdscore.SCORE_FEATURES), "lam": None,
               "q": mdscore.QUANTILE, "w": mdscore.WINDOW,
               "buffer": mdscore.THRESHOLD_BUFFER, "threshold_mode": "global",
               "split": "both"},
        "ae": {"features": list(autoenc.AE_FEATURES), "k": autoenc.DEFAULT_K,
               "batch_size": 256, "max_epochs": 200, "patience": 10, "lr": 1e-3,
               "seed": 0, "monitor_split": "test"},
        "cluster": {"source": "md", "split": "test", "height": None},
        "bootstrap": {"B": 1000, "level": 0.95, "seed": 0, "split": "test"},
        "sweep": {"k_values": [0.5 * i for i in range(11)]},
    }


def merge(base: dict, overrides: dict, origin: str) -> dict:
    out = copy.deepcopy(base)
    if not isinstance(overrides, dict):
        raise ConfigError(f"{origin}: top level must be an object")
    for section, values in overrides.items():
        if section not in out:
            raise ConfigError(f"{origin}: unknown section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"{origin}: section {section!r} must be an object")
        for key, value in values.items():
            if key not in out[section]:
                raise ConfigError(f"{origin}: unknown key {section}.{key}")
            out[section][key] = value
    return out


def load(path=None, overrides=None) -> dict:
    """Defaults, updated by the file at ``path``, then by ``overrides``."""
    cfg = defaults()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        try:
            cfg = merge(cfg, json.loads(text), str(path))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if overrides:
        cfg = merge(cfg, overrides, "command line")
    try:
        validate(cfg)
    except TypeError as exc:
        raise ConfigError(f"wrongly typed config value: {exc}") from exc
    return cfg


def _check(cond, msg):
    if not cond:
        raise ConfigError(msg)


def validate(cfg: dict) -> None:
    for key in ("meter", "weather", "holiday"):
        p = cfg["inputs"][key]
        _check(p is None or Path(p).is_file(), f"inputs.{key}: file {p} does not exist")
    rows = cfg["inputs"]["synthetic_rows"]
    _check(rows is None or (isinstance(rows, int) and rows >= 1000),
           "inputs.synthetic_rows must be an integer >= 1000")
    g = {k: v for k, v in cfg["gbdt"].items() if k != "cv_folds"}
    try:
        gbdt.GbdtConfig(**g)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"gbdt: {exc}") from exc
    _check(cfg["gbdt"]["cv_folds"] == 0 or cfg["gbdt"]["cv_folds"] >= 2,
           "gbdt.cv_folds must be 0 (off) or at least 2")
    md = cfg["md"]
    _check(0.0 <= md["q"] <= 1.0, "md.q must lie in [0, 1]")
    _check(int(md["w"]) >= 1 and int(md["buffer"]) >= 1, "md.w and md.buffer must be >= 1")
    _check(md["threshold_mode"] in ("global", "trailing"),
           "md.threshold_mode must be 'global' or 'trailing'")
    _check(md["split"] in DETECT_SPLITS, f"md.split must be one of {DETECT_SPLITS}")
    _check(md["lam"] is None or md["lam"] >= 0, "md.lam must be non-negative")
    _check(len(md["features"]) >= 1, "md.features must not be empty")
    ae = cfg["ae"]
    _check(ae["k"] >= 0, "ae.k must be non-negative")
    _check(ae["batch_size"] >= 1 and ae["max_epochs"] >= 1 and ae["patience"] >= 0,
           "ae.batch_size and ae.max_epochs must be >= 1, ae.patience >= 0")
    _check(ae["lr"] > 0, "ae.lr must be positive")
    _check(ae["monitor_split"] in SPLITS[1:], "ae.monitor_split must be 'test' or 'validation'")
    _check(len(ae["features"]) >= 2, "ae.features needs at least two columns")
    cl = cfg["cluster"]
    _check(cl["source"] in ("md", "ae"), "cluster.source must be 'md' or 'ae'")
    _check(cl["split"] in SPLITS[1:], "cluster.split must be 'test' or 'validation'")
    bs = cfg["bootstrap"]
    _check(int(bs["B"]) >= 2, "bootstrap.B must be at least 2")
    _check(0 < bs["level"] < 1, "bootstrap.level must lie in (0, 1)")
    _check(bs["split"] in SPLITS, "bootstrap.split must name a split")
    _check(len(cfg["sweep"]["k_values"]) >= 1, "sweep.k_values must not be empty")


def gbdt_config(cfg: dict) -> gbdt.GbdtConfig:
    names = {f.name for f in fields(gbdt.GbdtConfig)}
    return gbdt.GbdtConfig(**{k: v for k, v in cfg["gbdt"].items() if k in names})
