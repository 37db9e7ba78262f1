"""Binary model file.

Layout::

    b"CHMM" | u32 version (=1) | u32 header length | UTF-8 JSON header | payload

The JSON header carries ``alphabet``, ``clones_per_symbol`` and
``present_blocks`` (an E x E 0/1 matrix). The payload is little-endian
float64: the prior, then every present block in row-major grid order, each
block row-major.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from chmm.errors import CorruptHeaderError, NonFiniteValueError, ShapeMismatchError
from chmm.model import Alphabet, BlockStructure, BlockTransitionModel, CloneLayout

MAGIC = b"CHMM"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


def save_model(model: BlockTransitionModel, path: str | os.PathLike) -> None:
    header = {
        "alphabet": list(model.alphabet.symbols),
        "clones_per_symbol": model.layout.clones_per_symbol.tolist(),
        "present_blocks": model.structure.present.astype(int).tolist(),
    }
    raw = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(raw)))
        fh.write(raw)
        fh.write(model.prior.astype("<f8").tobytes())
        fh.write(model.data.astype("<f8").tobytes())


def _parse_header(blob: bytes) -> tuple[dict, int]:
    if len(blob) < _PREFIX.size:
        raise CorruptHeaderError("file too short for a model header")
    magic, version, length = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptHeaderError(f"bad magic bytes {magic!r}")
    if version != VERSION:
        raise CorruptHeaderError(f"unsupported format version {version}")
    end = _PREFIX.size + length
    if len(blob) < end:
        raise CorruptHeaderError("header is truncated")
    try:
        header = json.loads(blob[_PREFIX.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptHeaderError(f"header is not valid JSON: {exc}") from None
    if not isinstance(header, dict) or not {"alphabet", "clones_per_symbol", "present_blocks"} <= set(header):
        raise CorruptHeaderError("header is missing required keys")
    return header, end


def load_model(path: str | os.PathLike) -> BlockTransitionModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    header, start = _parse_header(blob)
    try:
        alphabet = Alphabet(header["alphabet"])
        layout = CloneLayout(header["clones_per_symbol"])
    except (TypeError, ValueError) as exc:
        raise CorruptHeaderError(f"invalid alphabet or clone layout: {exc}") from None
    if layout.n_symbols != alphabet.size:
        raise ShapeMismatchError(
            f"{len(header['clones_per_symbol'])} clone counts for {alphabet.size} symbols"
        )
    present = np.asarray(header["present_blocks"])
    if present.shape != (layout.n_symbols, layout.n_symbols):
        raise ShapeMismatchError(f"block bitmap has shape {present.shape}")
    structure = BlockStructure(layout, present.astype(bool))
    expected = 8 * (layout.n_states + structure.n_entries)
    payload = blob[start:]
    if len(payload) != expected:
        raise ShapeMismatchError(
            f"payload holds {len(payload)} bytes, declared shapes need {expected}"
        )
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValueError("payload contains NaN or infinite values")
    prior = values[:layout.n_states]
    data = values[layout.n_states:]
    return BlockTransitionModel(structure, data, prior, alphabet)
