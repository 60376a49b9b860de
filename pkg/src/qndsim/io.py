"""Self-describing artifact files: CSV tables, JSON-lines sidecars, binary matrices.

Every file carries a schema tag and the hash of the config that produced it;
readers given an expected hash reject anything else.
"""

import json
import struct

import numpy as np

from . import __version__
from .errors import ArtifactError

__all__ = [
    "schema_tag", "write_csv", "read_csv", "write_jsonl", "read_jsonl",
    "write_matrix", "read_matrix", "write_json", "read_json", "file_header",
]

MATRIX_HEADER = struct.Struct("<QQ")
HASH_BYTES = 16


def schema_tag(kind):
    return f"qndsim/{kind}/{__version__}"


def _check(path, found_schema, found_hash, kind, expected_hash):
    if kind is not None and found_schema != schema_tag(kind):
        raise ArtifactError(f"{path}: schema {found_schema!r}, expected {schema_tag(kind)!r}")
    if expected_hash is not None and found_hash != expected_hash:
        raise ArtifactError(f"{path}: stale artifact (config hash {found_hash[:12]}...)")


def _fmt(x):
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def write_csv(path, kind, config_hash, columns, rows, meta=None):
    """Write a table; ``rows`` is a 2-D array or an iterable of sequences."""
    lines = [f"# schema: {schema_tag(kind)}", f"# config_hash: {config_hash}"]
    for k, v in sorted((meta or {}).items()):
        lines.append(f"# {k}: {json.dumps(v, sort_keys=True)}")
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(x) for x in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def file_header(path):
    """Return (schema, config_hash) of any artifact written by this module."""
    if str(path).endswith(".bin"):
        with open(path, "rb") as fh:
            head = fh.read(MATRIX_HEADER.size + HASH_BYTES)
        if len(head) < MATRIX_HEADER.size + HASH_BYTES:
            raise ArtifactError(f"{path}: truncated matrix header")
        return schema_tag("matrix"), head[MATRIX_HEADER.size:].hex()
    if str(path).endswith((".jsonl", ".json")):
        with open(path) as fh:
            text = fh.readline() if str(path).endswith(".jsonl") else fh.read()
        try:
            head = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"{path}: malformed header") from exc
        return head.get("schema"), head.get("config_hash")
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            k, _, v = line[1:].partition(":")
            meta[k.strip()] = v.strip()
    return meta.get("schema"), meta.get("config_hash")


def read_csv(path, kind=None, expected_hash=None):
    """Return (columns, data array, meta dict)."""
    try:
        fh = open(path)
    except OSError as exc:
        raise ArtifactError(f"missing artifact {path}") from exc
    meta = {}
    with fh:
        line = fh.readline()
        while line.startswith("#"):
            k, _, v = line[1:].partition(":")
            meta[k.strip()] = v.strip()
            line = fh.readline()
        columns = line.strip().split(",")
        body = fh.read()
    _check(path, meta.get("schema"), meta.get("config_hash"), kind, expected_hash)
    data = np.loadtxt(body.splitlines(), delimiter=",", ndmin=2) if body.strip() else \
        np.empty((0, len(columns)))
    return columns, data, meta


def write_jsonl(path, kind, config_hash, records):
    with open(path, "w", newline="\n") as fh:
        fh.write(json.dumps({"schema": schema_tag(kind), "config_hash": config_hash},
                            sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path, kind=None, expected_hash=None):
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ArtifactError(f"missing artifact {path}") from exc
    if not lines:
        raise ArtifactError(f"{path}: empty")
    head = json.loads(lines[0])
    _check(path, head.get("schema"), head.get("config_hash"), kind, expected_hash)
    return [json.loads(x) for x in lines[1:]]


def write_json(path, kind, config_hash, payload):
    doc = {"schema": schema_tag(kind), "config_hash": config_hash, **payload}
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_json(path, kind=None, expected_hash=None):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ArtifactError(f"missing artifact {path}") from exc
    _check(path, doc.get("schema"), doc.get("config_hash"), kind, expected_hash)
    return doc


def write_matrix(path, config_hash, M):
    """Shape header (two little-endian uint64), hash prefix, then float64 data row-major."""
    M = np.ascontiguousarray(M, dtype="<f8")
    if M.ndim != 2:
        raise ValueError("matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(MATRIX_HEADER.pack(*M.shape))
        fh.write(bytes.fromhex(config_hash)[:HASH_BYTES])
        fh.write(M.tobytes())


def read_matrix(path, expected_hash=None):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ArtifactError(f"missing artifact {path}") from exc
    off = MATRIX_HEADER.size + HASH_BYTES
    if len(raw) < off:
        raise ArtifactError(f"{path}: truncated matrix header")
    rows, cols = MATRIX_HEADER.unpack_from(raw)
    found = raw[MATRIX_HEADER.size:off].hex()
    if expected_hash is not None and found != expected_hash[:2 * HASH_BYTES]:
        raise ArtifactError(f"{path}: stale artifact (config hash {found[:12]}...)")
    if len(raw) - off != 8 * rows * cols:
        raise ArtifactError(f"{path}: size does not match header {rows}x{cols}")
    return np.frombuffer(raw, dtype="<f8", offset=off).reshape(rows, cols).copy()
