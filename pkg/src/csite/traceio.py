"""Trace files, report files, CSV summaries and key-value config files.

Trace file layout (all little-endian)::

    8s   magic  b"CSITRACE"
    u16  version (1)
    u16  n_tx, u16 n_rx, u16 n_sub
    u32  header length H, then H bytes of UTF-8 JSON
         {"scenario": {...}, "seed": int, "f_s": float}
    u64  frame count N
    N records of
         f8 timestamp_s, u1 frame_type, u1 encrypted, i8 seq,
         f8 txpower_dbm, u1 source_truth, f8 rss_dbm,
         f4[2 * n_tx * n_rx * n_sub] CSI as interleaved (re, im)
    u32  CRC-32 of everything before it

Readers either return a whole trace or raise; a truncated or altered file
never yields a partial trace.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import struct
import zlib

import numpy as np

from . import __version__
from .channel import ScenarioConfig, Trace
from .csi import amplitudes
from .errors import CorruptHeader, DimensionMismatch
from .harness import CreReport, DetectionReport

MAGIC = b"CSITRACE"
VERSION = 1
_FIXED = struct.Struct("<8sHHHHI")


def _record_dtype(n_values: int) -> np.dtype:
    return np.dtype(
        [
            ("t", "<f8"),
            ("type", "u1"),
            ("enc", "u1"),
            ("seq", "<i8"),
            ("txpower", "<f8"),
            ("truth", "u1"),
            ("rss", "<f8"),
            ("csi", "<f4", (2 * n_values,)),
        ]
    )


def trace_to_bytes(trace: Trace) -> bytes:
    cfg = trace.config
    n_tx, n_rx, n_sub = trace.csi.shape[1:] if trace.csi.ndim == 4 else (cfg.n_tx, cfg.n_rx, cfg.n_sub)
    header = json.dumps(
        {"scenario": cfg.to_dict(), "seed": cfg.seed, "f_s": float(trace.f_s)}, sort_keys=True
    ).encode("utf-8")
    n_values = n_tx * n_rx * n_sub
    rec = np.zeros(len(trace), _record_dtype(n_values))
    rec["t"] = trace.times
    rec["type"] = trace.frame_type
    rec["enc"] = trace.encrypted
    rec["seq"] = trace.seq
    rec["txpower"] = trace.txpower
    rec["truth"] = trace.source_truth
    rec["rss"] = trace.rss
    csi = np.ascontiguousarray(trace.csi, dtype=np.complex64).reshape(len(trace), n_values)
    rec["csi"] = csi.view(np.float32).reshape(len(trace), 2 * n_values)
    body = (
        _FIXED.pack(MAGIC, VERSION, n_tx, n_rx, n_sub, len(header))
        + header
        + struct.pack("<Q", len(trace))
        + rec.tobytes()
    )
    return body + struct.pack("<I", zlib.crc32(body))


def trace_from_bytes(data: bytes) -> Trace:
    if len(data) < _FIXED.size + 12:
        raise CorruptHeader("file too short for a trace header")
    magic, version, n_tx, n_rx, n_sub, hlen = _FIXED.unpack_from(data, 0)
    if magic != MAGIC:
        raise CorruptHeader(f"bad magic {magic!r}")
    if version != VERSION:
        raise CorruptHeader(f"unsupported trace version {version}")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise CorruptHeader("checksum mismatch (truncated or altered file)")
    off = _FIXED.size
    try:
        header = json.loads(data[off : off + hlen].decode("utf-8"))
        cfg = ScenarioConfig(**{**header["scenario"], "txpower_sweep": tuple(header["scenario"]["txpower_sweep"])})
    except (ValueError, KeyError, TypeError) as e:
        raise CorruptHeader(f"unreadable header: {e}") from e
    if (cfg.n_tx, cfg.n_rx, cfg.n_sub) != (n_tx, n_rx, n_sub):
        raise DimensionMismatch("header dimensions disagree with the scenario snapshot")
    off += hlen
    (n,) = struct.unpack_from("<Q", data, off)
    off += 8
    n_values = n_tx * n_rx * n_sub
    dt = _record_dtype(n_values)
    if len(data) - 4 - off != n * dt.itemsize:
        raise DimensionMismatch(f"expected {n} records of {dt.itemsize} bytes")
    rec = np.frombuffer(data, dt, count=n, offset=off)
    if n and np.any(np.diff(rec["t"]) < 0):
        raise CorruptHeader("timestamps are not nondecreasing")
    csi = np.ascontiguousarray(rec["csi"]).view(np.complex64).reshape(n, n_tx, n_rx, n_sub)
    return Trace(
        rec["t"].copy(),
        rec["type"].astype(np.int8),
        rec["enc"].astype(bool),
        rec["seq"].copy(),
        rec["txpower"].copy(),
        rec["truth"].astype(np.int8),
        rec["rss"].copy(),
        csi.copy(),
        cfg,
        float(header.get("f_s", cfg.ping_rate_hz)),
    )


def write_trace(trace: Trace, path) -> None:
    tmp = f"{path}.part"
    with open(tmp, "wb") as fh:
        fh.write(trace_to_bytes(trace))
    os.replace(tmp, path)


def read_trace(path) -> Trace:
    with open(path, "rb") as fh:
        return trace_from_bytes(fh.read())


# ---------------------------------------------------------------------------
# Reports


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def reports_to_json(reports, extra: dict | None = None) -> str:
    """Serialize reports; floats keep full precision (``repr`` round-trips)."""
    doc = {"tool": "csite", "version": __version__, "reports": [r.to_dict() for r in reports]}
    if extra:
        doc.update(extra)
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def reports_from_json(text: str) -> list:
    doc = json.loads(text)
    out = []
    for d in doc["reports"]:
        out.append(CreReport.from_dict(d) if d.get("type") == "cre" else DetectionReport.from_dict(d))
    return out


def write_reports(reports, path, extra: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(reports_to_json(reports, extra))


def read_reports(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return reports_from_json(fh.read())


# stable column order of the CSV summaries
DETECTION_COLUMNS = (
    "scenario_id", "detector_kind", "f_s", "seed", "k", "lam", "l_w", "i0", "dts_enabled",
    "fp_rate", "fn_rate", "n_attack", "n_legit_mf", "n_false_accept", "n_false_reject",
)
CRE_COLUMNS = ("scenario_id", "f_s", "l_pre", "seeds", "n_submitted", "one_shot_rate", "attempts")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    reports = list(reports)
    if reports and isinstance(reports[0], CreReport):
        w.writerow(CRE_COLUMNS)
        for r in reports:
            attempts = ";".join(f"{k}={v}" for k, v in r.attempts.items())
            seeds = ";".join(str(s) for s in r.seeds)
            w.writerow([_cell(x) for x in (r.scenario_id, r.f_s, r.l_pre, seeds, r.n_submitted,
                                           r.one_shot_rate, attempts)])
        return buf.getvalue()
    w.writerow(DETECTION_COLUMNS)
    for r in reports:
        c = r.detector_config
        row = (r.scenario_id, r.detector_kind.value, r.f_s, r.seed, c.get("k"), c.get("lam"), c.get("l_w"),
               c.get("i0"), c.get("dts_enabled"), r.fp_rate, r.fn_rate, r.n_attack, r.n_legit_mf,
               r.n_false_accept, r.n_false_reject)
        w.writerow([_cell(x) for x in row])
    return buf.getvalue()


def write_csv(reports, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(reports_to_csv(reports))


def trace_to_csv(trace: Trace, limit: int | None = None) -> str:
    """Plain-text excerpt of a trace: metadata plus CSI amplitudes."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n_amp = int(np.prod(trace.csi.shape[1:]))
    w.writerow(["timestamp_s", "frame_type", "encrypted", "seq", "txpower_dbm", "source_truth", "rss_dbm"]
               + [f"amp{i}" for i in range(n_amp)])
    n = len(trace) if limit is None else min(limit, len(trace))
    amps = amplitudes(trace.csi[:n])
    for i in range(n):
        f = trace[i]
        w.writerow([repr(f.arrival_time), f.frame_type.name, int(f.encrypted), f.seq, repr(f.txpower),
                    f.source_truth.name, repr(f.rss)] + [repr(float(a)) for a in amps[i]])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Config files


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines (``#`` comments, blank lines ignored).

    Keys mirror the long CLI flags without the dashes, e.g. ``scenario = G``
    or ``dts = on``; dashes and underscores are interchangeable.
    """
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        out[key.replace("-", "_").lower()] = value
    return out


def read_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
