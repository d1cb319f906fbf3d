"""Checkpoint files: structured text header + raw float32 parameter payload.

Header lines (utf-8):

    COOPGRID-CKPT 1
    meta <json, sorted keys>
    shapes <json [[name, [dims...]], ...]>
    rng <json bit-generator state or null>
    updates <int>
    payload <byte count>

followed immediately by the little-endian float32 parameter vector in shape
table order.  save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .nets import ParamBank

MAGIC = "COOPGRID-CKPT"
VERSION = 1


class CheckpointError(Exception):
    pass


class CorruptHeader(CheckpointError):
    pass


class UnsupportedVersion(CheckpointError):
    pass


class ShapeMismatch(CheckpointError):
    pass


class TruncatedPayload(CheckpointError):
    pass


def save(path, bank: ParamBank, rng_state: dict | None = None, updates: int = 0) -> None:
    path = Path(path)
    payload = bank.flat.astype("<f4").tobytes()
    header = (
        f"{MAGIC} {VERSION}\n"
        f"meta {json.dumps(bank.meta, sort_keys=True)}\n"
        f"shapes {json.dumps([[n, list(s)] for n, s in bank.table])}\n"
        f"rng {json.dumps(rng_state, sort_keys=True)}\n"
        f"updates {int(updates)}\n"
        f"payload {len(payload)}\n"
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header.encode("utf-8"))
        f.write(payload)


def _header_line(f, key: str) -> str:
    line = f.readline().decode("utf-8", errors="replace")
    if not line.startswith(key + " "):
        raise CorruptHeader(f"expected header line {key!r}, got {line[:40]!r}")
    return line[len(key) + 1 :].rstrip("\n")


def load(path, expect_table=None) -> tuple[ParamBank, dict | None, int]:
    """Read a checkpoint; returns (bank, rng_state, update counter).

    When ``expect_table`` is given the stored shape table must match it,
    otherwise ShapeMismatch names the first differing layer.
    """
    path = Path(path)
    with open(path, "rb") as f:
        first = f.readline().decode("utf-8", errors="replace").rstrip("\n")
        parts = first.split(" ")
        if len(parts) != 2 or parts[0] != MAGIC:
            raise CorruptHeader(f"bad magic line {first[:40]!r}")
        try:
            version = int(parts[1])
        except ValueError as e:
            raise CorruptHeader(f"bad version field {parts[1]!r}") from e
        if version != VERSION:
            raise UnsupportedVersion(f"checkpoint version {version}, supported: {VERSION}")
        try:
            meta = json.loads(_header_line(f, "meta"))
            shapes = json.loads(_header_line(f, "shapes"))
            rng_state = json.loads(_header_line(f, "rng"))
            updates = int(_header_line(f, "updates"))
            nbytes = int(_header_line(f, "payload"))
        except (json.JSONDecodeError, ValueError) as e:
            raise CorruptHeader(str(e)) from e
        table = tuple((str(n), tuple(int(d) for d in s)) for n, s in shapes)
        payload = f.read(nbytes)
    if len(payload) != nbytes:
        raise TruncatedPayload(f"expected {nbytes} payload bytes, found {len(payload)}")
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    expected = int(sum(np.prod(s) for _, s in table))
    if flat.size != expected:
        raise TruncatedPayload(
            f"payload holds {flat.size} parameters, shape table needs {expected}"
        )
    if expect_table is not None:
        expect = tuple((str(n), tuple(int(d) for d in s)) for n, s in expect_table)
        if table != expect:
            for (n1, s1), (n2, s2) in zip(table, expect):
                if n1 != n2 or s1 != s2:
                    raise ShapeMismatch(
                        f"layer {n1!r} has shape {s1}, expected {n2!r} with {s2}"
                    )
            raise ShapeMismatch(
                f"shape table length {len(table)}, expected {len(expect)}"
            )
    return ParamBank(flat, table, dict(meta)), rng_state, updates


def params_digest(bank: ParamBank) -> str:
    """Stable short hash of the float32 parameter payload."""
    import hashlib

    return hashlib.blake2b(bank.flat.astype("<f4").tobytes(), digest_size=12).hexdigest()
