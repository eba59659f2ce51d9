"""Network checkpoints.

A checkpoint is an uncompressed ``.npz`` archive (readable without pickle):

* ``header`` -- a 0-d unicode array holding JSON::

      {"format": "ganmanifold-checkpoint", "version": 1, "seed": 0, "step": 2000,
       "networks": {"generator": {"layer_widths": [...], "hidden_activation": "relu",
                                  "output_activation": "identity", "leaky_slope": 0.2}, ...},
       "meta": {...}}

* ``net_<name>`` -- the float64 flat parameter vector of each network, laid out
  layer by layer as ``W0.ravel(), b0, W1.ravel(), b1, ...`` with ``W`` stored
  ``(in, out)`` in C order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .nn import Mlp, MlpParams, MlpSpec

FORMAT = "ganmanifold-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    networks: dict[str, Mlp]
    seed: int = 0
    step: int = 0
    meta: dict = field(default_factory=dict)

    def require(self, *names: str) -> None:
        missing = [n for n in names if n not in self.networks]
        if missing:
            raise CheckpointError(f"checkpoint lacks network(s) {', '.join(missing)}; "
                                  f"has {', '.join(sorted(self.networks)) or 'none'}")


def save_checkpoint(path, networks: dict[str, Mlp], seed: int = 0, step: int = 0,
                    meta: dict | None = None) -> Path:
    path = Path(path)
    header = {
        "format": FORMAT,
        "version": VERSION,
        "seed": int(seed),
        "step": int(step),
        "networks": {name: net.spec.to_dict() for name, net in sorted(networks.items())},
        "meta": meta or {},
    }
    arrays = {f"net_{name}": net.params.flatten() for name, net in networks.items()}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        archive = np.load(path, allow_pickle=False)
    except (ValueError, OSError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise CheckpointError(f"{path}: not a checkpoint archive ({exc})") from exc
    with archive:
        if "header" not in archive.files:
            raise CheckpointError(f"{path}: missing header")
        header = json.loads(str(archive["header"]))
        if header.get("format") != FORMAT:
            raise CheckpointError(f"{path}: unknown format {header.get('format')!r}")
        if header.get("version") != VERSION:
            raise CheckpointError(f"{path}: unsupported version {header.get('version')!r}")
        nets = {}
        for name, spec_d in header["networks"].items():
            spec = MlpSpec.from_dict(spec_d)
            key = f"net_{name}"
            if key not in archive.files:
                raise CheckpointError(f"{path}: parameters for {name!r} missing")
            try:
                params = MlpParams.unflatten(spec, archive[key])
            except ValueError as exc:
                raise CheckpointError(f"{path}: {name}: {exc}") from exc
            nets[name] = Mlp(spec, params)
    return Checkpoint(nets, header.get("seed", 0), header.get("step", 0), header.get("meta", {}))
