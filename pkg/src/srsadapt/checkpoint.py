"""Versioned binary checkpoints for encoder parameters and task heads.

Layout: 8-byte magic, uint32 format version, uint32 header length, a JSON
header (config, stage tag, metadata, named block index), then the raw
parameter blocks as little-endian float64 in header order.  Saving is
deterministic, so save -> load -> save reproduces identical bytes.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, TaskHead, param_shapes
from .tensor import Tensor

MAGIC = b"AFTCKPT\x01"
FORMAT_VERSION = 1

STAGES = ("pretrained", "adapted", "finetuned")


class CheckpointError(RuntimeError):
    """Corrupt, truncated, or incompatible checkpoint file."""


class StageWarning(UserWarning):
    """A checkpoint is being used at an unexpected pipeline stage."""


@dataclass
class Checkpoint:
    config: EncoderConfig
    params: dict[str, Tensor]
    stage: str
    head: TaskHead | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise CheckpointError(f"unknown stage tag {self.stage!r}; expected {STAGES}")


def _head_spec(head: TaskHead | None) -> dict | None:
    if head is None:
        return None
    return {
        "kind": head.kind,
        "task": head.task,
        "classes": list(head.classes) if head.classes else None,
        "tied": head.tied,
        "has_weight": head.weight is not None,
        "has_bias": head.bias is not None,
    }


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    blocks: list[tuple[str, np.ndarray]] = []
    for name, shape in param_shapes(ckpt.config):
        tensor = ckpt.params[name]
        if tensor.data.shape != shape:
            raise CheckpointError(
                f"parameter {name} has shape {tensor.data.shape}, expected {shape}"
            )
        blocks.append((name, tensor.data))
    if ckpt.head is not None:
        for name, tensor in ckpt.head.parameters().items():
            blocks.append((name, tensor.data))

    header = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "stage": ckpt.stage,
        "meta": ckpt.meta,
        "head": _head_spec(ckpt.head),
        "blocks": [[name, list(arr.shape)] for name, arr in blocks],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(FORMAT_VERSION).tobytes())
        fh.write(np.uint32(len(header_bytes)).tobytes())
        fh.write(header_bytes)
        for _, arr in blocks:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path, expect_stage: tuple[str, ...] | None = None) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint file not found: {path}") from None

    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file (bad magic)")
    offset = len(MAGIC)
    version = int(np.frombuffer(raw, dtype="<u4", count=1, offset=offset)[0])
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})"
        )
    offset += 4
    header_len = int(np.frombuffer(raw, dtype="<u4", count=1, offset=offset)[0])
    offset += 4
    try:
        header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    offset += header_len

    config = EncoderConfig.from_dict(header["config"])
    arrays: dict[str, np.ndarray] = {}
    for name, shape in header["blocks"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * 8
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated block {name}")
        arrays[name] = (
            np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
        offset += count * 8
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")

    params = {
        name: Tensor(arrays[name], track_grad=True, name=name)
        for name, _ in param_shapes(config)
    }

    head = None
    head_spec = header.get("head")
    if head_spec is not None:
        head = TaskHead(
            kind=head_spec["kind"],
            task=head_spec["task"],
            classes=tuple(head_spec["classes"]) if head_spec["classes"] else None,
            tied=head_spec["tied"],
            weight=(
                Tensor(arrays["head.weight"], track_grad=True, name="head.weight")
                if head_spec["has_weight"]
                else None
            ),
            bias=(
                Tensor(arrays["head.bias"], track_grad=True, name="head.bias")
                if head_spec["has_bias"]
                else None
            ),
        )

    ckpt = Checkpoint(
        config=config, params=params, stage=header["stage"], head=head, meta=header["meta"]
    )
    if expect_stage is not None and ckpt.stage not in expect_stage:
        warnings.warn(
            f"{path}: stage tag is {ckpt.stage!r} but this step expects "
            f"one of {tuple(expect_stage)}",
            StageWarning,
            stacklevel=2,
        )
    return ckpt
