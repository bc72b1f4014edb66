"""Single-file checkpoint container.

Layout (all integers little-endian)::

    bytes 0-3    magic  b"KBRG"
    bytes 4-7    uint32 format version
    bytes 8-15   uint64 header length H
    bytes 16..   H bytes of UTF-8 JSON (sorted keys): config, vocab, counters,
                 kb_frozen, optimiser scalars and an index of arrays
                 {name, dtype, shape, offset, nbytes}
    remainder    raw little-endian C-order array payloads, in index order

Array names: ``param/<dotted name>``, ``kb/M``, ``adam/<group>/m/<i>``,
``adam/<group>/v/<i>``. No timestamps are stored, so identical state always
serialises to identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .config import RunConfig
from .data import Vocabulary
from .errors import CheckpointError
from .optim import Adam

MAGIC = b"KBRG"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


@dataclass
class Checkpoint:
    config: RunConfig
    vocab: list[str]
    params: dict[str, np.ndarray]
    kb_M: np.ndarray | None = None
    kb_frozen: bool = False
    step: int = 0
    epoch: int = 0
    optimizer: dict[str, dict[str, Any]] = field(default_factory=dict)   # group -> scalars + m, v lists
    extra: dict[str, Any] = field(default_factory=dict)


def _le(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    return a.astype(a.dtype.newbyteorder("<"), copy=False)


def to_bytes(ckpt: Checkpoint) -> bytes:
    arrays: list[tuple[str, np.ndarray]] = [(f"param/{k}", v) for k, v in ckpt.params.items()]
    if ckpt.kb_M is not None:
        arrays.append(("kb/M", ckpt.kb_M))
    opt_meta = {}
    for group, st in sorted(ckpt.optimizer.items()):  # canonical order keeps save/load/save bitwise
        opt_meta[group] = {k: v for k, v in st.items() if k not in ("m", "v")}
        for kind in ("m", "v"):
            for i, a in enumerate(st.get(kind, [])):
                arrays.append((f"adam/{group}/{kind}/{i}", a))
    index, blobs, offset = [], [], 0
    for name, a in arrays:
        raw = _le(np.asarray(a)).tobytes()
        index.append({"name": name, "dtype": np.asarray(a).dtype.str.lstrip("<>=|"),
                      "shape": list(np.shape(a)), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "config": ckpt.config.to_dict(),
        "vocab": list(ckpt.vocab),
        "kb_frozen": bool(ckpt.kb_frozen),
        "step": int(ckpt.step),
        "epoch": int(ckpt.epoch),
        "optimizer": opt_meta,
        "extra": ckpt.extra,
        "arrays": index,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)) + head + b"".join(blobs)


def from_bytes(buf: bytes) -> Checkpoint:
    if len(buf) < _PREFIX.size:
        raise CheckpointError("file too short to be a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    try:
        header = json.loads(buf[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    body = memoryview(buf)[_PREFIX.size + hlen:]
    arrays = {}
    for rec in header["arrays"]:
        end = rec["offset"] + rec["nbytes"]
        if end > len(body):
            raise CheckpointError(f"truncated checkpoint: array {rec['name']} runs past end of file")
        dt = np.dtype(rec["dtype"]).newbyteorder("<")
        a = np.frombuffer(body[rec["offset"]:end], dtype=dt).reshape(rec["shape"])
        arrays[rec["name"]] = a.astype(dt.newbyteorder("="), copy=True)

    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    optimizer = {}
    for group, meta in header["optimizer"].items():
        st = dict(meta)
        for kind in ("m", "v"):
            keys = sorted((k for k in arrays if k.startswith(f"adam/{group}/{kind}/")),
                          key=lambda k: int(k.rsplit("/", 1)[1]))
            st[kind] = [arrays[k] for k in keys]
        optimizer[group] = st
    return Checkpoint(
        config=RunConfig.from_dict(header["config"]),
        vocab=header["vocab"],
        params=params,
        kb_M=arrays.get("kb/M"),
        kb_frozen=header["kb_frozen"],
        step=header["step"],
        epoch=header["epoch"],
        optimizer=optimizer,
        extra=header.get("extra", {}),
    )


def save(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)
    return path


def load(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return from_bytes(path.read_bytes())


# -- model <-> checkpoint -------------------------------------------------------------

def optimizer_state(opt: Adam | None) -> dict[str, dict[str, Any]]:
    if opt is None:
        return {}
    out = {}
    for name, st in opt.states.items():
        out[name] = {"lr": st.lr, "weight_decay": st.weight_decay, "beta1": st.beta1, "beta2": st.beta2,
                     "eps": st.eps, "step": st.step, "m": [a.copy() for a in st.m], "v": [a.copy() for a in st.v]}
    return out


def restore_optimizer(opt: Adam, saved: dict[str, dict[str, Any]]) -> None:
    for name, st in opt.states.items():
        if name not in saved:
            raise CheckpointError(f"checkpoint has no optimiser state for group {name!r}")
        s = saved[name]
        st.lr, st.weight_decay = s["lr"], s["weight_decay"]
        st.beta1, st.beta2, st.eps, st.step = s["beta1"], s["beta2"], s["eps"], s["step"]
        st.m = [np.array(a, copy=True) for a in s["m"]]
        st.v = [np.array(a, copy=True) for a in s["v"]]


def snapshot(model, vocab: Vocabulary, opt: Adam | None = None, step: int = 0, epoch: int = 0,
             frozen: bool | None = None, extra: dict | None = None) -> Checkpoint:
    kb = model.kb
    return Checkpoint(
        config=model.config,
        vocab=vocab.to_list(),
        params={k: p.data.copy() for k, p in model.named_parameters()},
        kb_M=None if kb is None else kb.M.copy(),
        kb_frozen=(kb.frozen if kb is not None else True) if frozen is None else frozen,
        step=step,
        epoch=epoch,
        optimizer=optimizer_state(opt),
        extra=dict(extra or {}),
    )


def build_model(ckpt: Checkpoint):
    """Instantiate a model and vocabulary from a checkpoint."""
    from .model import ReportGenModel

    vocab = Vocabulary.from_list(ckpt.vocab, ckpt.config.min_freq)
    model = ReportGenModel(ckpt.config, len(vocab))
    try:
        model.load_state_dict(ckpt.params)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint parameters do not fit the model: {exc}") from exc
    if model.kb is not None:
        if ckpt.kb_M is None or ckpt.kb_M.shape != model.kb.M.shape:
            raise CheckpointError("checkpoint knowledge base is missing or has the wrong shape")
        model.kb.M = ckpt.kb_M.astype(model.kb.M.dtype, copy=True)
        model.kb.frozen = ckpt.kb_frozen
    return model, vocab
