"""Checkpoint serialization.

Binary layout (all integers little-endian):

    bytes 0-3   magic b"FSCC"
    bytes 4-7   format version (u32), currently 1
    bytes 8-11  header length in bytes (u32)
    header      UTF-8 JSON: network spec, alpha variant/shape, training
                config echo, iteration count, theta length
    payload     theta as float32 LE, then alpha values as float32 LE
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .metagrad import AlphaState
from .network import NetworkParams, NetworkSpec

MAGIC = b"FSCC"
VERSION = 1


@dataclass
class Checkpoint:
    params: NetworkParams
    alpha: AlphaState
    config: dict = field(default_factory=dict)
    iterations: int = 0

    @property
    def spec(self) -> NetworkSpec:
        return self.params.spec


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    header = {
        "spec": ckpt.spec.to_dict(),
        "alpha_variant": ckpt.alpha.variant,
        "alpha_shape": list(ckpt.alpha.value.shape),
        "config": ckpt.config,
        "iterations": ckpt.iterations,
        "theta_len": int(ckpt.params.theta.size),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(header_bytes)))
        f.write(header_bytes)
        f.write(ckpt.params.theta.astype("<f4").tobytes())
        f.write(ckpt.alpha.value.astype("<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    version, header_len = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    spec = NetworkSpec.from_dict(header["spec"])
    theta_len = header["theta_len"]
    offset = 12 + header_len
    theta = np.frombuffer(blob, dtype="<f4", count=theta_len, offset=offset).copy()
    offset += 4 * theta_len
    alpha_shape = tuple(header["alpha_shape"])
    alpha_count = int(np.prod(alpha_shape)) if alpha_shape else 1
    alpha_vals = np.frombuffer(blob, dtype="<f4", count=alpha_count, offset=offset).copy()
    alpha = AlphaState(header["alpha_variant"], alpha_vals.reshape(alpha_shape))
    return Checkpoint(
        params=NetworkParams(spec=spec, theta=theta),
        alpha=alpha,
        config=header.get("config", {}),
        iterations=int(header.get("iterations", 0)),
    )
