"""Binary checkpoint container.

Layout: a 4-byte magic, a little-endian uint32 format version, a uint64
header length, a JSON header, then the concatenated float64 little-endian
array payload.  The header lists every named entry (shape + offset) and a
SHA-256 of the payload, so truncation, version drift, and byte corruption
all fail loudly with distinct error kinds.  Writes go to a temp file and
rename into place.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from .autodiff import Tensor
from .losses import TeacherSnapshot
from .policy import AdapterSet

MAGIC = b"SSCK"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class CheckpointFormatError(CheckpointError):
    """Not a checkpoint file at all."""


class CheckpointVersionError(CheckpointError):
    """Produced by an incompatible format version."""


class CheckpointTruncatedError(CheckpointError):
    """File ends before the header says it should."""


class CheckpointIntegrityError(CheckpointError):
    """Payload bytes do not match the recorded digest."""


def write_container(path, arrays: dict[str, np.ndarray], meta: dict):
    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        raw = arr.astype("<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "entries": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "meta": meta,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
    os.replace(tmp, path)


def read_container(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointFormatError(f"{path} is not a checkpoint container")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {version} unsupported "
                                     f"(expected {FORMAT_VERSION})")
    header_len = struct.unpack("<Q", blob[8:16])[0]
    if len(blob) < 16 + header_len:
        raise CheckpointTruncatedError(f"{path}: header truncated")
    header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    payload = blob[16 + header_len:]
    expected = sum(e["nbytes"] for e in header["entries"])
    if len(payload) < expected:
        raise CheckpointTruncatedError(f"{path}: payload truncated "
                                       f"({len(payload)} of {expected} bytes)")
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header["payload_sha256"]:
        raise CheckpointIntegrityError(f"{path}: payload digest mismatch")
    arrays = {}
    for e in header["entries"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(e["shape"])
    return arrays, header["meta"]


# -- trainer state <-> container -------------------------------------------------


def _collect_arrays(trainer) -> dict[str, np.ndarray]:
    arrays = {}
    for name, t in trainer.named_parameters().items():
        arrays[name] = t.data
    for name, arr in trainer.bank.state_arrays().items():
        arrays[f"bank.{name}"] = arr
    for name, arr in trainer.opt.state_arrays().items():
        arrays[f"opt.{name}"] = arr
    if trainer.teacher is not None:
        for name, t in trainer.teacher.policy_params.items():
            arrays[f"teacher.policy.{name}"] = t.data
        for name, t in trainer.teacher.field_params.items():
            arrays[f"teacher.field.{name}"] = t.data
        for name, t in trainer.teacher.adapters.named_parameters().items():
            arrays[f"teacher.adapter.{name}"] = t.data
    return arrays


def save_checkpoint(trainer, path):
    meta = {
        "config": trainer.config.to_dict(),
        "config_digest": trainer.config.digest(),
        "rng_state": trainer.rng.bit_generator.state,
        "tasks_done": trainer.tasks_done,
        "iters_done_in_task": trainer.iters_done_in_task,
        "buffer": trainer.buffer.to_meta(),
        "scores": {str(m): {str(i): v for i, v in row.items()}
                   for m, row in trainer.scores.items()},
        "log_rows": trainer.log_rows,
        "teacher_task": None if trainer.teacher is None else trainer.teacher.task_index,
        "teacher_digest": None if trainer.teacher is None else trainer.teacher.digest,
        "adapter_codes": sorted(trainer.adapters.skills),
        "teacher_adapter_codes": ([] if trainer.teacher is None
                                  else sorted(trainer.teacher.adapters.skills)),
    }
    write_container(path, _collect_arrays(trainer), meta)


def _split_group(arrays: dict, prefix: str) -> dict:
    plen = len(prefix)
    return {k[plen:]: v for k, v in arrays.items() if k.startswith(prefix)}


def _rebuild_adapters(config, arrays: dict, codes: list[int],
                      requires_grad: bool) -> AdapterSet:
    adapters = AdapterSet(config)
    for h in codes:
        prefix = f"h{h}."
        entry = {}
        for name, arr in arrays.items():
            if name.startswith(prefix):
                entry[name[len(prefix):]] = Tensor(arr, requires_grad=requires_grad)
        adapters.skills[h] = entry
    return adapters


def load_checkpoint(path, suite=None, store=None):
    """Restore a Trainer (import deferred to dodge the module cycle)."""
    from .training import ReplayBuffer, RunConfig, Trainer

    arrays, meta = read_container(path)
    config = RunConfig.from_dict(meta["config"])
    if config.digest() != meta["config_digest"]:
        raise CheckpointIntegrityError(f"{path}: config digest mismatch")

    trainer = Trainer(config, suite=suite, store=store)
    for name, arr in _split_group(arrays, "policy.").items():
        trainer.params[name] = Tensor(arr, requires_grad=True)
    for name, arr in _split_group(arrays, "field.").items():
        trainer.field_params[name] = Tensor(arr, requires_grad=True)
    trainer.adapters = _rebuild_adapters(trainer.pc, _split_group(arrays, "adapter."),
                                         [int(c) for c in meta["adapter_codes"]],
                                         requires_grad=True)
    trainer.bank.load_state_arrays(_split_group(arrays, "bank."))
    trainer.opt.load_state_arrays(_split_group(arrays, "opt."))
    trainer.rng.bit_generator.state = meta["rng_state"]
    trainer.tasks_done = meta["tasks_done"]
    trainer.iters_done_in_task = meta["iters_done_in_task"]
    trainer.buffer = ReplayBuffer.from_meta(meta["buffer"], config.replay_capacity)
    trainer.scores = {int(m): {int(i): v for i, v in row.items()}
                      for m, row in meta["scores"].items()}
    trainer.log_rows = meta["log_rows"]

    if meta["teacher_task"] is not None:
        t_policy = {name: Tensor(arr, requires_grad=False)
                    for name, arr in _split_group(arrays, "teacher.policy.").items()}
        t_field = {name: Tensor(arr, requires_grad=False)
                   for name, arr in _split_group(arrays, "teacher.field.").items()}
        t_adapters = _rebuild_adapters(trainer.pc,
                                       _split_group(arrays, "teacher.adapter."),
                                       [int(c) for c in meta["teacher_adapter_codes"]],
                                       requires_grad=False)
        snap = TeacherSnapshot(policy_params=t_policy, adapters=t_adapters,
                               field_params=t_field, task_index=meta["teacher_task"],
                               digest=meta["teacher_digest"])
        if not snap.verify():
            raise CheckpointIntegrityError(f"{path}: teacher digest mismatch")
        trainer.teacher = snap
    return trainer
