"""Run configuration documents (JSON) and run manifests."""
from dataclasses import asdict, dataclass, field, fields
import hashlib
import json
import os
import platform

import numpy as np

from .adapt import AdaptConfig
from .exceptions import ConfigError, FormatError
from .nn import ArchSpec

__all__ = ["RunConfig", "load_run_config", "file_sha256", "write_manifest"]

_ARCH_KEYS = {"input_dim", "hidden_dims", "embedding_dim", "num_classes", "activation"}
_DATA_KEYS = {"source", "target", "target_labels"}
_SYNTH_KEYS = {"task", "n", "noise", "shift", "seed", "k", "separation", "d"}
_TOP_KEYS = {"arch", "adapt", "data", "synth", "output_dir", "baseline"}


@dataclass
class RunConfig:
    """Architecture, adaptation settings and file locations for one run.

    ``arch`` may leave ``input_dim`` and ``num_classes`` out; they are filled
    from the source data by :meth:`resolve_arch`. Data either comes from files
    (``data``) or from a synthetic generator (``synth``).
    """

    arch: dict = field(default_factory=dict)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    data: dict = None
    synth: dict = None
    output_dir: str = None
    baseline: bool = False
    base_dir: str = "."

    def path(self, p):
        if p is None:
            return None
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(self.base_dir, p))

    def resolve_arch(self, input_dim, num_classes):
        doc = {"input_dim": input_dim, "num_classes": num_classes}
        doc.update({k: v for k, v in self.arch.items() if v is not None})
        return ArchSpec.from_dict(doc)

    def to_dict(self, arch=None):
        doc = {
            "arch": (arch.to_dict() if arch is not None else dict(self.arch)),
            "adapt": asdict(self.adapt),
            "output_dir": self.output_dir,
            "baseline": self.baseline,
        }
        if self.data is not None:
            doc["data"] = dict(self.data)
        if self.synth is not None:
            doc["synth"] = dict(self.synth)
        return doc


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")


def parse_run_config(doc, base_dir="."):
    _check_keys(doc, _TOP_KEYS, "config")
    arch = doc.get("arch", {})
    _check_keys(arch, _ARCH_KEYS, "arch")
    defaults = {f.name: f.default for f in fields(ArchSpec)
                if f.name in ("hidden_dims", "embedding_dim", "activation")}
    arch = {**defaults, **arch}
    arch["hidden_dims"] = list(arch["hidden_dims"])
    adapt = AdaptConfig.from_dict(doc.get("adapt", {}))
    data = doc.get("data")
    synth = doc.get("synth")
    if data is not None:
        _check_keys(data, _DATA_KEYS, "data")
    if synth is not None:
        _check_keys(synth, _SYNTH_KEYS, "synth")
        synth = {"task": "twomoons", "n": 1000, "noise": 0.1, "shift": "rot:35", "seed": adapt.seed,
                 "k": 3, "separation": 5.0, "d": 2, **synth}
        if synth["task"] not in ("twomoons", "blobs"):
            raise ConfigError(f"synth.task must be twomoons or blobs, got {synth['task']!r}")
    return RunConfig(arch, adapt, data, synth, doc.get("output_dir"), bool(doc.get("baseline", False)),
                     base_dir)


def load_run_config(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return parse_run_config(doc, os.path.dirname(os.path.abspath(path)))


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, resolved_config, inputs, outputs=()):
    """Record everything needed to reproduce a run; no timestamps, so reruns match."""
    from . import __version__

    doc = {
        "config": resolved_config,
        "seed": resolved_config.get("adapt", {}).get("seed"),
        "inputs": {os.path.basename(p): file_sha256(p) for p in inputs},
        "outputs": sorted(outputs),
        "versions": {
            "imuda": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    write_json(path, doc)
    return doc


def write_json(path, doc):
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=False, allow_nan=True)
        f.write("\n")


def read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc.msg}", line=exc.lineno) from None
