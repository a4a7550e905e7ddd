"""Checkpoint files: a text manifest followed by little-endian float32 blobs.

Layout::

    format_version=1
    model=<capsnet|lenet|alexnet>
    epoch=<int>
    train_accuracy=<float repr>
    params=<count>
    config.<field>=<value>        (one line per config field, sorted)
    ---
    per parameter: u16 name length, name bytes, u8 rank,
                   u32 per extent, float32 data (all little-endian, row-major)

Save -> load -> save is byte-identical.
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import BaselineConfig, build_baseline
from .capsule import CapsNet, CapsNetConfig
from .errors import DataError

FORMAT_VERSION = 1
_HEADER_END = b"---\n"


@dataclass
class Checkpoint:
    model_kind: str
    config: dict[str, str]
    epoch: int
    train_accuracy: float
    params: list[tuple[str, np.ndarray]]


def _config_lines(config) -> dict[str, str]:
    out: dict[str, str] = {}
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            out[f.name] = ",".join(str(v) for v in value)
        else:
            out[f.name] = str(value)
    return out


def save_checkpoint(path, model, epoch: int, train_accuracy: float) -> None:
    params = [(name, np.ascontiguousarray(t.data, dtype="<f4")) for name, t in model.parameters()]
    _write(path, model.model_kind, _config_lines(model.config), epoch, train_accuracy, params)


def _write(path, model_kind: str, config: dict[str, str], epoch: int, train_accuracy: float, params) -> None:
    header = [
        f"format_version={FORMAT_VERSION}",
        f"model={model_kind}",
        f"epoch={epoch}",
        f"train_accuracy={train_accuracy!r}",
        f"params={len(params)}",
    ]
    header.extend(f"config.{k}={v}" for k, v in sorted(config.items()))
    blob = bytearray()
    for name, arr in params:
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.astype("<f4", copy=False).tobytes()
    with open(path, "wb") as f:
        f.write("\n".join(header).encode("utf-8") + b"\n")
        f.write(_HEADER_END)
        f.write(bytes(blob))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    marker = raw.find(_HEADER_END)
    if marker < 0:
        raise DataError(f"checkpoint {path}: missing header terminator")
    header = raw[:marker].decode("utf-8").splitlines()
    fields: dict[str, str] = {}
    config: dict[str, str] = {}
    for line in header:
        key, _, value = line.partition("=")
        if not _:
            raise DataError(f"checkpoint {path}: bad header line {line!r}")
        if key.startswith("config."):
            config[key.removeprefix("config.")] = value
        else:
            fields[key] = value
    try:
        version = int(fields["format_version"])
        model_kind = fields["model"]
        epoch = int(fields["epoch"])
        train_accuracy = float(fields["train_accuracy"])
        n_params = int(fields["params"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"checkpoint {path}: incomplete header ({exc})") from None
    if version != FORMAT_VERSION:
        raise DataError(f"checkpoint {path}: unsupported format version {version}")

    offset = marker + len(_HEADER_END)
    params: list[tuple[str, np.ndarray]] = []

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(raw):
            raise DataError(f"checkpoint {path}: truncated {what} at offset {offset}")
        piece = raw[offset : offset + n]
        offset += n
        return piece

    for _i in range(n_params):
        (name_len,) = struct.unpack("<H", take(2, "parameter name length"))
        name = take(name_len, "parameter name").decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1, f"rank of {name!r}"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, f"extents of {name!r}"))
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(take(4 * count, f"blob of {name!r}"), dtype="<f4").reshape(shape)
        params.append((name, data.astype(np.float32)))
    if offset != len(raw):
        raise DataError(f"checkpoint {path}: {len(raw) - offset} trailing bytes at offset {offset}")
    return Checkpoint(model_kind=model_kind, config=config, epoch=epoch, train_accuracy=train_accuracy, params=params)


def _parse_config(kind: str, raw: dict[str, str]):
    if kind == "capsnet":
        kwargs = {}
        for f in dataclasses.fields(CapsNetConfig):
            if f.name not in raw:
                continue
            value = raw[f.name]
            if f.name == "decoder_hidden":
                kwargs[f.name] = tuple(int(v) for v in value.split(","))
            elif f.name == "reconstruction_scale":
                kwargs[f.name] = float(value)
            else:
                kwargs[f.name] = int(value)
        return CapsNetConfig(**kwargs)
    if kind in ("lenet", "alexnet"):
        return BaselineConfig(architecture=raw.get("architecture", kind), n_class=int(raw["n_class"]))
    raise DataError(f"unknown model kind {kind!r} in checkpoint")


def build_model(ckpt: Checkpoint):
    """Reconstruct the model a checkpoint describes and load its parameters."""
    config = _parse_config(ckpt.model_kind, ckpt.config)
    model = CapsNet(config) if ckpt.model_kind == "capsnet" else build_baseline(config)
    current = dict(model.parameters())
    if set(current) != {name for name, _ in ckpt.params}:
        raise DataError(
            f"checkpoint parameters {sorted(n for n, _ in ckpt.params)} do not match model "
            f"{sorted(current)}"
        )
    for name, arr in ckpt.params:
        tensor = current[name]
        if tensor.data.shape != arr.shape:
            raise DataError(f"parameter {name!r}: checkpoint shape {arr.shape} != model {tensor.data.shape}")
        tensor.data = arr.astype(np.float32, copy=True)
    return model


def save_from_checkpoint(path, ckpt: Checkpoint) -> None:
    """Re-serialize a loaded checkpoint (byte-identical to its source file)."""
    _write(path, ckpt.model_kind, ckpt.config, ckpt.epoch, ckpt.train_accuracy, ckpt.params)
