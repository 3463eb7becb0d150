"""Time-heatmap encoding of event logs.

A user-year is a (365, 24, C) grid: day of year, hour of day, behaviour channel.
Most cells are empty, so heatmaps are stored sparsely as text records
``day, hour, channel: value`` separated by ``;``.
"""

from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .synth import DAYS, HOURS, EventRecord

DENSE_MAGIC = b"MPHM"
EXTRACTORS = ("amount", "count")
TRANSFORMS = ("identity", "log1p")


class SparseFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


class EncodeError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelRule:
    channel: int
    prefix: str
    extractor: str = "amount"

    def matches(self, genre_path: Sequence[str]) -> bool:
        want = [p for p in self.prefix.split("/") if p]
        return list(genre_path[:len(want)]) == want


@dataclass
class ChannelSpec:
    num_channels: int
    rules: list[ChannelRule]
    transforms: list[str] | None = None

    def __post_init__(self) -> None:
        if self.num_channels < 1:
            raise EncodeError("num_channels must be positive")
        for r in self.rules:
            if not 0 <= r.channel < self.num_channels:
                raise EncodeError(f"rule {r.prefix!r} targets missing channel {r.channel}")
            if r.extractor not in EXTRACTORS:
                raise EncodeError(f"unknown extractor {r.extractor!r}")
        if self.transforms is None:
            # log1p for spend channels, identity for counts
            amount = {r.channel for r in self.rules if r.extractor == "amount"}
            self.transforms = ["log1p" if c in amount else "identity" for c in range(self.num_channels)]
        if len(self.transforms) != self.num_channels or any(t not in TRANSFORMS for t in self.transforms):
            raise EncodeError("one transform in {identity, log1p} per channel required")

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelSpec":
        rules = [ChannelRule(int(r["channel"]), str(r["prefix"]), r.get("extractor", "amount")) for r in d["rules"]]
        return cls(int(d["num_channels"]), rules, d.get("transforms"))

    @classmethod
    def from_json(cls, path: str | Path) -> "ChannelSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "num_channels": self.num_channels,
            "rules": [{"channel": r.channel, "prefix": r.prefix, "extractor": r.extractor} for r in self.rules],
            "transforms": list(self.transforms),
        }

    @classmethod
    def by_top_genre(cls, genres: Sequence[str], extractor: str = "amount") -> "ChannelSpec":
        return cls(len(genres), [ChannelRule(i, g, extractor) for i, g in enumerate(genres)])


@dataclass
class SparseHeatmap:
    """Sparse cells keyed by (day, hour, channel); duplicates are already summed."""

    cells: dict[tuple[int, int, int], float]
    num_channels: int
    dropped: int = field(default=0, compare=False)

    def __len__(self) -> int:
        return len(self.cells)

    def total(self) -> float:
        return sum(self.cells.values())

    def sorted_items(self) -> list[tuple[tuple[int, int, int], float]]:
        return sorted(self.cells.items())


def _check_cell(day: int, hour: int, channel: int, num_channels: int) -> str | None:
    if not 0 <= day < DAYS:
        return f"day {day} outside [0, {DAYS - 1}]"
    if not 0 <= hour < HOURS:
        return f"hour {hour} outside [0, {HOURS - 1}]"
    if not 0 <= channel < num_channels:
        return f"channel {channel} outside [0, {num_channels - 1}]"
    return None


def encode_events(events: Iterable[EventRecord], spec: ChannelSpec) -> SparseHeatmap:
    cells: dict[tuple[int, int, int], float] = {}
    dropped = 0
    for i, e in enumerate(events):
        if not 0 <= e.day < DAYS or not 0 <= e.hour < HOURS:
            raise EncodeError(f"event {i} (user {e.user_id}): day={e.day} hour={e.hour} out of range")
        hit = False
        for r in spec.rules:
            if r.matches(e.genre_path):
                key = (e.day, e.hour, r.channel)
                cells[key] = cells.get(key, 0) + (e.price if r.extractor == "amount" else 1)
                hit = True
        if not hit:
            dropped += 1
    return SparseHeatmap(cells, spec.num_channels, dropped)


_INT = re.compile(r"\s*([+-]?\d+)\s*")
_NUM = re.compile(r"\s*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*")


def _skip_ws(src: str, pos: int) -> int:
    while pos < len(src) and src[pos].isspace():
        pos += 1
    return pos


def parse_sparse(text: str, num_channels: int) -> SparseHeatmap:
    """Parse ``"d, h, c: v; ..."`` into a heatmap; offsets in errors are byte offsets."""
    raw = text.encode("utf-8")
    if raw.strip() == b"":
        return SparseHeatmap({}, num_channels)
    src = raw.decode("ascii", errors="replace")
    cells: dict[tuple[int, int, int], float] = {}
    pos = 0
    n = len(src)
    while pos < n:
        if src[pos:].strip() == "":
            break
        fields = []
        for sep in (",", ",", ":"):
            m = _INT.match(src, pos)
            if not m:
                raise SparseFormatError("expected integer", _skip_ws(src, pos))
            fields.append((int(m.group(1)), m.start(1)))
            pos = m.end()
            if pos >= n or src[pos] != sep:
                raise SparseFormatError(f"expected {sep!r}", pos)
            pos += 1
        m = _NUM.match(src, pos)
        if not m:
            raise SparseFormatError("expected number", _skip_ws(src, pos))
        value = float(m.group(1))
        if not math.isfinite(value):
            raise SparseFormatError("non-finite value", m.start(1))
        pos = m.end()
        if pos < n:
            if src[pos] != ";":
                raise SparseFormatError("expected ';'", pos)
            pos += 1
        (d, do), (h, ho), (c, co) = fields
        problem = _check_cell(d, h, c, num_channels)
        if problem:
            offset = do if not 0 <= d < DAYS else ho if not 0 <= h < HOURS else co
            raise SparseFormatError(problem, offset)
        key = (d, h, c)
        cells[key] = cells.get(key, 0.0) + value
    return SparseHeatmap(cells, num_channels)


def format_value(v: float) -> str:
    """Shortest decimal that round-trips; integral values drop the fraction."""
    v = float(v)
    if v == 0:
        return "0"
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def serialize_sparse(h: SparseHeatmap) -> str:
    return "; ".join(f"{d}, {hr}, {c}: {format_value(v)}" for (d, hr, c), v in h.sorted_items())


def normalize(h: SparseHeatmap) -> SparseHeatmap:
    """Canonical form: float values, explicit zeros removed."""
    return SparseHeatmap({k: float(v) for k, v in h.cells.items() if v != 0}, h.num_channels)


def densify(h: SparseHeatmap, transforms: Sequence[str] | None = None, dtype=np.float64) -> np.ndarray:
    out = np.zeros((DAYS, HOURS, h.num_channels), dtype=dtype)
    for (d, hr, c), v in h.cells.items():
        out[d, hr, c] = v
    if transforms is not None:
        out = apply_transforms(out, transforms)
    return out


def apply_transforms(dense: np.ndarray, transforms: Sequence[str]) -> np.ndarray:
    out = dense.copy()
    for c, t in enumerate(transforms):
        if t == "log1p":
            out[..., c] = np.sign(out[..., c]) * np.log1p(np.abs(out[..., c]))
    return out


def sparsify(dense: np.ndarray, eps: float = 0.0) -> SparseHeatmap:
    if dense.ndim != 3 or dense.shape[:2] != (DAYS, HOURS):
        raise EncodeError(f"dense heatmap must be ({DAYS}, {HOURS}, C), got {dense.shape}")
    if eps < 0:
        raise EncodeError("eps must be non-negative")
    idx = np.argwhere(np.abs(dense) > eps)
    cells = {(int(d), int(hr), int(c)): float(dense[d, hr, c]) for d, hr, c in idx}
    return SparseHeatmap(cells, dense.shape[2])


def to_flat(h: SparseHeatmap, transforms: Sequence[str] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Flat row-major indices into (365, 24, C) and transformed values, sorted by index."""
    items = h.sorted_items()
    c = h.num_channels
    idx = np.array([(d * HOURS + hr) * c + ch for (d, hr, ch), _ in items], dtype=np.int64)
    val = np.array([v for _, v in items], dtype=np.float64)
    if transforms is not None and len(items):
        ch = idx % c
        for k, t in enumerate(transforms):
            if t == "log1p":
                sel = ch == k
                val[sel] = np.sign(val[sel]) * np.log1p(np.abs(val[sel]))
    return idx, val


def write_multi(path: str | Path, heatmaps: dict[int, SparseHeatmap]) -> None:
    with open(path, "w") as fh:
        for uid in sorted(heatmaps):
            fh.write(f"{uid}|{serialize_sparse(heatmaps[uid])}\n")


def read_multi(path: str | Path, num_channels: int) -> dict[int, SparseHeatmap]:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            uid, sep, body = line.partition("|")
            if not sep:
                raise SparseFormatError(f"line {lineno}: missing 'user_id|' prefix", 0)
            try:
                out[int(uid)] = parse_sparse(body, num_channels)
            except SparseFormatError as exc:
                raise SparseFormatError(f"line {lineno}: {exc.args[0].rsplit(' at byte', 1)[0]}",
                                        exc.offset + len(uid) + 1) from None
    return out


def encode_users(events: Iterable[EventRecord], spec: ChannelSpec, user_ids: Iterable[int] = ()) -> dict[int, SparseHeatmap]:
    """Group events by user and encode each group; ``user_ids`` adds users with no events."""
    groups: dict[int, list[EventRecord]] = {int(u): [] for u in user_ids}
    for e in events:
        groups.setdefault(e.user_id, []).append(e)
    return {uid: encode_events(evs, spec) for uid, evs in groups.items()}


def write_dense(path_or_fh, dense: np.ndarray) -> None:
    """One record: 16-byte header (magic, 365, 24, C) then little-endian float32 cells."""
    if dense.ndim != 3 or dense.shape[:2] != (DAYS, HOURS):
        raise EncodeError(f"dense heatmap must be ({DAYS}, {HOURS}, C), got {dense.shape}")
    payload = DENSE_MAGIC + struct.pack("<III", DAYS, HOURS, dense.shape[2]) + \
        np.ascontiguousarray(dense, dtype="<f4").tobytes()
    if hasattr(path_or_fh, "write"):
        path_or_fh.write(payload)
    else:
        Path(path_or_fh).write_bytes(payload)


def read_dense(path: str | Path) -> list[np.ndarray]:
    """Read all records of a dense export (one per user, in file order)."""
    raw = Path(path).read_bytes()
    out = []
    pos = 0
    while pos < len(raw):
        if raw[pos:pos + 4] != DENSE_MAGIC:
            raise EncodeError(f"bad magic at byte {pos}")
        d, h, c = struct.unpack_from("<III", raw, pos + 4)
        if (d, h) != (DAYS, HOURS):
            raise EncodeError(f"unsupported grid {d}x{h}")
        pos += 16
        n = d * h * c * 4
        out.append(np.frombuffer(raw, dtype="<f4", count=d * h * c, offset=pos).reshape(d, h, c).copy())
        pos += n
    return out
