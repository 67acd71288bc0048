"""Binary checkpoints of a training run.

Layout::

    8 bytes   magic b"SOFCLRCK"
    uint32    format version (little endian)
    uint32    header length in bytes
    header    UTF-8 JSON: network specs, config, counters, RNG states and
              the list of array sections as [name, dtype, length]
    sections  the arrays back to back, little-endian float64 or int64

Everything needed to resume is stored, so a resumed run is bitwise identical
to an uninterrupted one.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import config_from_dict, config_to_dict
from .gcl import UEstimator
from .models import DiscriminatorSpec, EncoderSpec
from .seeding import from_state, get_state
from .trainer import TrainConfig, TrainState

__all__ = ["CheckpointError", "Checkpoint", "save_checkpoint", "load_checkpoint", "MAGIC", "VERSION"]

MAGIC = b"SOFCLRCK"
VERSION = 1
_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    encoder: EncoderSpec
    discriminator: DiscriminatorSpec
    state: TrainState


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    st = ckpt.state
    arrays = [("w", "f8", st.w), ("w_prime", "f8", st.w_prime), ("u", "f8", st.u.values),
              ("m_tilde", "f8", st.m_tilde), ("perm", "i8", st.perm)]
    if st.adam_m is not None:
        arrays += [("adam_m", "f8", st.adam_m), ("adam_v", "f8", st.adam_v)]
    enc, disc = ckpt.encoder, ckpt.discriminator
    header = {
        "encoder": {"d_in": enc.d_in, "hidden": list(enc.hidden), "d": enc.d},
        "discriminator": {"d": disc.d, "hidden": list(disc.hidden), "K": disc.K},
        "config": config_to_dict(ckpt.config),
        "t": st.t,
        "cursor": st.cursor,
        "gamma": st.u.gamma,
        "rng": {k: get_state(g) for k, g in st.rng.items()},
        "sections": [[name, dt, int(np.size(a))] for name, dt, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(blob)) + blob)
        for _, dt, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype=_DTYPES[dt]).tobytes())


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror}") from None
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from None
    pos, arrays = 16 + hlen, {}
    for name, dt, n in header["sections"]:
        size = n * _DTYPES[dt].itemsize
        if pos + size > len(raw):
            raise CheckpointError(f"{path}: truncated at section {name!r}")
        arrays[name] = np.frombuffer(raw[pos : pos + size], dtype=_DTYPES[dt]).astype(_DTYPES[dt].newbyteorder("="))
        pos += size
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    enc = EncoderSpec(**header["encoder"])
    disc = DiscriminatorSpec(**header["discriminator"])
    for what, spec, key in (("encoder", enc, "w"), ("discriminator", disc, "w_prime")):
        if arrays[key].size != spec.n_params:
            raise CheckpointError(f"{path}: {what} expects {spec.n_params} parameters, found {arrays[key].size}")
    state = TrainState(
        w=arrays["w"],
        w_prime=arrays["w_prime"],
        u=UEstimator(arrays["u"], header["gamma"]),
        m_tilde=arrays["m_tilde"],
        t=header["t"],
        rng={k: from_state(s) for k, s in header["rng"].items()},
        perm=arrays["perm"],
        cursor=header["cursor"],
        adam_m=arrays.get("adam_m"),
        adam_v=arrays.get("adam_v"),
    )
    return Checkpoint(config_from_dict(header["config"]), enc, disc, state)
