"""Checkpoint container: JSON header + raw parameter/optimizer sections.

The header pins the rules version, feature layout, and network layout; loads
refuse data produced under any other versions so replay/evaluation never mix
incompatible builds.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .. import net
from ..features import FEATURE_LAYOUT_VERSION
from ..learner import OptimizerState
from ..net import QNetParams
from ..sim import RULES_VERSION

CHECKPOINT_MAGIC = b"FDCKPT1\n"
CHECKPOINT_VERSION = "fogduel-checkpoint-1"


class CheckpointError(ValueError):
    pass


@dataclass
class CheckpointData:
    params: QNetParams
    target_params: QNetParams
    opt: OptimizerState
    train_steps: int
    episodes: int
    config_hash: str


def _moments_bytes(grads) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in grads.arrays())


def _moments_from_bytes(blob: bytes, like: QNetParams):
    grads = net.zeros_gradients(like)
    pos = 0
    for _, arr in grads.arrays():
        nbytes = arr.size * 8
        if pos + nbytes > len(blob):
            raise CheckpointError("truncated optimizer section")
        arr[...] = np.frombuffer(blob, dtype="<f8", count=arr.size, offset=pos).reshape(arr.shape)
        pos += nbytes
    if pos != len(blob):
        raise CheckpointError("trailing bytes in optimizer section")
    return grads


def save_checkpoint(
    path: str,
    params: QNetParams,
    target_params: QNetParams,
    opt: OptimizerState,
    train_steps: int,
    episodes: int,
    config_hash: str,
) -> None:
    sections = {
        "params": net.serialize_params(params),
        "target_params": net.serialize_params(target_params),
        "opt_m": _moments_bytes(opt.m),
        "opt_v": _moments_bytes(opt.v),
    }
    header = {
        "container": CHECKPOINT_VERSION,
        "rules_version": RULES_VERSION,
        "feature_layout": FEATURE_LAYOUT_VERSION,
        "qnet_layout": net.QNET_LAYOUT_VERSION,
        "config_hash": config_hash,
        "train_steps": train_steps,
        "episodes": episodes,
        "opt_step": opt.step,
        "sections": {name: len(blob) for name, blob in sections.items()},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for name in ("params", "target_params", "opt_m", "opt_v"):
            f.write(sections[name])


def load_checkpoint(path: str) -> CheckpointData:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("not a fogduel checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    try:
        header = json.loads(blob[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    pos += hlen
    if header.get("container") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint container {header.get('container')!r}")
    if header.get("rules_version") != RULES_VERSION:
        raise CheckpointError(
            f"checkpoint built under rules {header.get('rules_version')!r}, "
            f"this build is {RULES_VERSION!r}"
        )
    if header.get("feature_layout") != FEATURE_LAYOUT_VERSION:
        raise CheckpointError("checkpoint feature layout does not match this build")

    chunks = {}
    try:
        for name in ("params", "target_params", "opt_m", "opt_v"):
            size = header["sections"][name]
            chunks[name] = blob[pos : pos + size]
            if len(chunks[name]) != size:
                raise CheckpointError(f"truncated checkpoint section {name}")
            pos += size
    except KeyError as exc:
        raise CheckpointError(f"checkpoint header missing section {exc}") from exc

    try:
        params = net.deserialize_params(chunks["params"])
        target_params = net.deserialize_params(chunks["target_params"])
    except net.ParamsFormatError as exc:
        raise CheckpointError(str(exc)) from exc
    opt = OptimizerState(
        m=_moments_from_bytes(chunks["opt_m"], params),
        v=_moments_from_bytes(chunks["opt_v"], params),
        step=int(header.get("opt_step", 0)),
    )
    return CheckpointData(
        params=params,
        target_params=target_params,
        opt=opt,
        train_steps=int(header.get("train_steps", 0)),
        episodes=int(header.get("episodes", 0)),
        config_hash=str(header.get("config_hash", "")),
    )
