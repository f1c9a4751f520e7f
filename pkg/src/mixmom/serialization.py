"""Binary container for moment sets, plus small JSON helpers.

Layout: an 8-byte magic, a little-endian uint32 header length, a UTF-8 JSON
header, then the stored arrays in header order as raw little-endian float64.
Canonical index order (colex over nondecreasing or strictly increasing
tuples) is part of the format, so readers never need the index tables to
round-trip the bytes.
"""

from __future__ import annotations

import json
import struct
from typing import Any

import numpy as np

from .indexing import nondecreasing_count, binom
from .model import GmmParams
from .moments import MomentSet, SymTensor

MAGIC = b"MIXMOM01"


def _array_fields(ms: MomentSet) -> list[tuple[str, np.ndarray]]:
    fields: list[tuple[str, np.ndarray]] = []
    if ms.m3 is not None:
        fields.append(("m3", ms.m3.values))
    fields.append(("m4", ms.m4.values))
    if ms.m6_bar is not None:
        fields.append(("m6_bar", ms.m6_bar))
    return fields


def momentset_to_bytes(ms: MomentSet) -> bytes:
    fields = _array_fields(ms)
    header: dict[str, Any] = {
        "n": ms.n,
        "provenance": ms.provenance,
        "index_order": "colex",
        "arrays": [{"name": name, "length": arr.size} for name, arr in fields],
    }
    if ms.n_samples is not None:
        header["n_samples"] = ms.n_samples
    if ms.params is not None:
        header["params"] = ms.params.to_json()
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    out = [MAGIC, struct.pack("<I", len(head)), head]
    for _, arr in fields:
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def momentset_from_bytes(buf: bytes) -> MomentSet:
    if buf[:8] != MAGIC:
        raise ValueError("not a mixmom moment container")
    (head_len,) = struct.unpack_from("<I", buf, 8)
    header = json.loads(buf[12 : 12 + head_len].decode("utf-8"))
    if header.get("index_order") != "colex":
        raise ValueError("unknown index order %r" % header.get("index_order"))
    n = int(header["n"])
    offset = 12 + head_len
    arrays: dict[str, np.ndarray] = {}
    for spec in header["arrays"]:
        length = int(spec["length"])
        nbytes = 8 * length
        arrays[spec["name"]] = np.frombuffer(
            buf, dtype="<f8", count=length, offset=offset
        ).astype(np.float64)
        offset += nbytes

    expected4 = nondecreasing_count(n, 4)
    if arrays["m4"].size != expected4:
        raise ValueError("order-4 array has the wrong length for n=%d" % n)
    m3 = None
    if "m3" in arrays:
        if arrays["m3"].size != nondecreasing_count(n, 3):
            raise ValueError("order-3 array has the wrong length for n=%d" % n)
        m3 = SymTensor(n, 3, arrays["m3"])
    m6_bar = arrays.get("m6_bar")
    if m6_bar is not None and m6_bar.size != binom(n, 6):
        raise ValueError("order-6 array has the wrong length for n=%d" % n)

    params = None
    if "params" in header:
        params = GmmParams.from_json(header["params"])
    return MomentSet(
        n=n,
        m4=SymTensor(n, 4, arrays["m4"]),
        m3=m3,
        m6_bar=m6_bar,
        provenance=header.get("provenance", ""),
        n_samples=header.get("n_samples"),
        params=params,
    )


def save_moments(path: str, ms: MomentSet) -> None:
    with open(path, "wb") as fh:
        fh.write(momentset_to_bytes(ms))


def load_moments(path: str) -> MomentSet:
    with open(path, "rb") as fh:
        return momentset_from_bytes(fh.read())


def momentset_debug_json(ms: MomentSet) -> str:
    """Human-readable dump for small instances; not a round-trip format."""
    doc: dict[str, Any] = {
        "n": ms.n,
        "provenance": ms.provenance,
        "m4": ms.m4.values.tolist(),
    }
    if ms.m3 is not None:
        doc["m3"] = ms.m3.values.tolist()
    if ms.m6_bar is not None:
        doc["m6_bar"] = ms.m6_bar.tolist()
    return json.dumps(doc, indent=2, sort_keys=True)
