"""Containers for embeddings, votes, labels and engine configuration.

On-disk layouts
---------------
LGEM binary embeddings (little endian, no padding)::

    bytes 0-3   b"LGEM"
    u32         version (= 1)
    u64         n
    u32         d
    u8          metric (0 = euclidean, 1 = cosine)
    n*d f32     row-major matrix

Embeddings CSV: no header, ``d`` comma-separated floats per line.
Votes CSV: header ``id,lf_0,...,lf_{m-1}``, ids ``0..n-1`` in order, body in {-1,0,1}.
Labels CSV: header ``id,y``, body in {-1,1}.
Config: flat JSON object whose keys are the :class:`EngineConfig` field names.
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ArgumentError, FormatError, ShapeError, ValidationError

METRICS = ("euclidean", "cosine")
BALANCE_MODES = ("uniform", "global_from_dev", "per_part_from_dev", "explicit")

_MAGIC = b"LGEM"
_VERSION = 1
_HEADER = struct.Struct("<4sIQIB")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class EmbeddingDataset:
    """An ``n x d`` embedding matrix together with the metric used to compare rows."""

    data: np.ndarray
    metric: str = "euclidean"

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ShapeError(f"embeddings must be 2-D, got shape {data.shape}")
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        if self.metric not in METRICS:
            raise ValidationError(f"metric: unknown value {self.metric!r}")
        if not np.all(np.isfinite(data)):
            bad = np.argwhere(~np.isfinite(data))[0]
            raise ValidationError(f"data: non-finite entry at row {bad[0]}, column {bad[1]}")
        if self.metric == "cosine" and data.shape[0]:
            norms = np.linalg.norm(data.astype(np.float64), axis=1)
            if np.any(norms <= 0):
                raise ValidationError(
                    f"data: row {int(np.argmin(norms))} has zero norm under cosine metric"
                )
        object.__setattr__(self, "data", _frozen(data))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def points(self) -> np.ndarray:
        """Float64 rows in the space distances are computed in.

        Cosine datasets are row-normalised so that ``1 - <u, v>`` is the distance.
        """
        x = np.asarray(self.data, dtype=np.float64)
        if self.metric == "cosine":
            x = x / np.linalg.norm(x, axis=1, keepdims=True)
        return np.ascontiguousarray(x)

    def subset(self, index) -> "EmbeddingDataset":
        return EmbeddingDataset(self.data[index], self.metric)


@dataclass(frozen=True, eq=False)
class VoteMatrix:
    votes: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.votes)
        if v.ndim != 2:
            raise ShapeError(f"votes must be 2-D, got shape {v.shape}")
        if v.size and not np.issubdtype(v.dtype, np.integer):
            if not np.all(np.mod(v, 1) == 0):
                raise ValidationError("votes: non-integer entry")
        v = v.astype(np.int8)
        bad = ~np.isin(v, (-1, 0, 1))
        if np.any(bad):
            r, c = np.argwhere(bad)[0]
            raise ValidationError(f"votes: entry ({r}, lf_{c}) outside {{-1, 0, 1}}")
        object.__setattr__(self, "votes", _frozen(v))

    @property
    def n(self) -> int:
        return self.votes.shape[0]

    @property
    def m(self) -> int:
        return self.votes.shape[1]

    def coverage(self) -> np.ndarray:
        """Per-source fraction of points with a non-abstain vote."""
        if self.n == 0:
            return np.zeros(self.m)
        return np.count_nonzero(self.votes, axis=0) / self.n


@dataclass(frozen=True, eq=False)
class LabelVector:
    labels: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.labels)
        if y.ndim != 1:
            raise ShapeError(f"labels must be 1-D, got shape {y.shape}")
        y = y.astype(np.int8)
        if not np.all(np.isin(y, (-1, 1))):
            i = int(np.argwhere(~np.isin(y, (-1, 1)))[0, 0])
            raise ValidationError(f"y: entry at id {i} outside {{-1, 1}}")
        object.__setattr__(self, "labels", _frozen(y))

    @property
    def n(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class EngineConfig:
    seed: int = 0
    s: int = 1
    radii: Optional[tuple] = None
    metric: str = "euclidean"
    class_balance_mode: str = "uniform"
    explicit_balances: Optional[tuple] = None
    accuracy_clamp: float = 0.001
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-6

    def __post_init__(self):
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValidationError(f"seed: must be a non-negative integer, got {self.seed!r}")
        if not isinstance(self.s, int) or self.s < 1:
            raise ValidationError(f"s: must be an integer >= 1, got {self.s!r}")
        if self.radii is not None:
            radii = tuple(float(r) for r in self.radii)
            if any(not (r >= 0) for r in radii):
                raise ValidationError("radii: every radius must be a non-negative number")
            object.__setattr__(self, "radii", radii)
        if self.metric not in METRICS:
            raise ValidationError(f"metric: unknown value {self.metric!r}")
        if self.class_balance_mode not in BALANCE_MODES:
            raise ValidationError(f"class_balance_mode: unknown value {self.class_balance_mode!r}")
        if (self.class_balance_mode == "explicit") != (self.explicit_balances is not None):
            raise ValidationError(
                "explicit_balances: required exactly when class_balance_mode = explicit"
            )
        if self.explicit_balances is not None:
            bal = tuple(float(b) for b in self.explicit_balances)
            if len(bal) != self.s:
                raise ValidationError(f"explicit_balances: expected {self.s} values, got {len(bal)}")
            if any(not (0.0 < b < 1.0) for b in bal):
                raise ValidationError("explicit_balances: every value must lie in (0, 1)")
            object.__setattr__(self, "explicit_balances", bal)
        if not (0.0 < self.accuracy_clamp < 0.5):
            raise ValidationError(f"accuracy_clamp: must lie in (0, 0.5), got {self.accuracy_clamp}")
        if self.kmeans_max_iters < 1:
            raise ValidationError("kmeans_max_iters: must be >= 1")
        if not (self.kmeans_tol >= 0):
            raise ValidationError("kmeans_tol: must be >= 0")

    def radii_for(self, m: int) -> np.ndarray:
        """Radii as an array of length ``m`` (all zero when unset)."""
        if self.radii is None:
            return np.zeros(m)
        if len(self.radii) != m:
            raise ShapeError(f"radii: expected {m} values, got {len(self.radii)}")
        return np.asarray(self.radii, dtype=np.float64)

    def replace(self, **changes) -> "EngineConfig":
        kw = asdict(self)
        kw.update(changes)
        return EngineConfig(**kw)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("radii", "explicit_balances"):
            if out[k] is not None:
                out[k] = list(out[k])
        return out


@dataclass(frozen=True)
class DiagnosticsSummary:
    n: int
    m: int
    coverage: np.ndarray
    positive_prior: Optional[float] = None
    overall_coverage: float = field(default=0.0)


# ---------------------------------------------------------------------------
# embeddings

def store_embeddings(emb: EmbeddingDataset, path) -> None:
    """Write ``emb`` in the LGEM binary layout."""
    data = np.ascontiguousarray(emb.data, dtype="<f4")
    header = _HEADER.pack(_MAGIC, _VERSION, emb.n, emb.d, METRICS.index(emb.metric))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes(order="C"))


def _read_lgem(raw: bytes) -> EmbeddingDataset:
    if len(raw) < _HEADER.size:
        raise FormatError("header: file shorter than the LGEM header")
    magic, version, n, d, metric = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"magic: expected b'LGEM', got {magic!r}")
    if version != _VERSION:
        raise FormatError(f"version: unsupported LGEM version {version}")
    if metric >= len(METRICS):
        raise FormatError(f"metric: unknown code {metric}")
    expected = _HEADER.size + 4 * n * d
    if len(raw) != expected:
        raise FormatError(f"data: expected {expected} bytes for n={n}, d={d}, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n, d)
    return EmbeddingDataset(data.astype(np.float32), METRICS[metric])


def load_embeddings_csv(path, metric: str = "euclidean", d: Optional[int] = None) -> EmbeddingDataset:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise FormatError(f"line {lineno}: {exc}") from None
    width = d if d is not None else (len(rows[0]) if rows else 0)
    for lineno, row in enumerate(rows, start=1):
        if len(row) != width:
            raise FormatError(f"line {lineno}: expected {width} values, got {len(row)}")
    data = np.asarray(rows, dtype=np.float64).reshape(len(rows), width)
    return EmbeddingDataset(data, metric)


def store_embeddings_csv(emb: EmbeddingDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        for row in np.asarray(emb.data):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_embeddings(path, metric: Optional[str] = None, d: Optional[int] = None) -> EmbeddingDataset:
    """Load embeddings from an LGEM file, or from CSV when the file has no LGEM magic.

    ``metric`` is required for CSV input (it defaults to euclidean) and, for
    LGEM input, must agree with the stored code when given.
    """
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".csv":
        return load_embeddings_csv(path, metric or "euclidean", d)
    emb = _read_lgem(raw)
    if metric is not None and metric != emb.metric:
        raise ValidationError(f"metric: file declares {emb.metric}, caller requested {metric}")
    if d is not None and d != emb.d:
        raise ShapeError(f"d: file has {emb.d} columns, expected {d}")
    return emb


# ---------------------------------------------------------------------------
# votes and labels

def _read_id_csv(path, header_check, what: str):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{what}: empty file") from None
        header_check(header)
        body = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [int(v) for v in row]
            except ValueError:
                raise ValidationError(f"line {lineno}: non-integer value in {row!r}") from None
            if vals[0] != len(body):
                raise ValidationError(f"id: line {lineno} has id {vals[0]}, expected {len(body)}")
            body.append(vals[1:])
    return header, body


def load_votes(path, n_expected: Optional[int] = None) -> VoteMatrix:
    def check(header):
        if not header or header[0] != "id" or len(header) < 2:
            raise FormatError("header: expected 'id,lf_0,...'")
        want = ["id"] + [f"lf_{i}" for i in range(len(header) - 1)]
        if header != want:
            raise FormatError(f"header: expected {','.join(want)}")

    header, body = _read_id_csv(path, check, "votes")
    m = len(header) - 1
    votes = np.asarray(body, dtype=np.int64).reshape(len(body), m)
    if n_expected is not None and votes.shape[0] != n_expected:
        raise ShapeError(f"votes: expected {n_expected} rows, got {votes.shape[0]}")
    return VoteMatrix(votes)


def format_votes(votes: np.ndarray) -> str:
    votes = np.asarray(votes)
    buf = io.StringIO()
    buf.write(",".join(["id"] + [f"lf_{i}" for i in range(votes.shape[1])]) + "\n")
    for i, row in enumerate(votes):
        buf.write(",".join([str(i)] + [str(int(v)) for v in row]) + "\n")
    return buf.getvalue()


def store_votes(votes: VoteMatrix, path) -> None:
    Path(path).write_text(format_votes(votes.votes))


def load_labels(path, n_expected: Optional[int] = None) -> LabelVector:
    def check(header):
        if header != ["id", "y"]:
            raise FormatError("header: expected 'id,y'")

    _, body = _read_id_csv(path, check, "labels")
    y = np.asarray([r[0] for r in body], dtype=np.int64)
    if n_expected is not None and y.shape[0] != n_expected:
        raise ShapeError(f"labels: expected {n_expected} rows, got {y.shape[0]}")
    return LabelVector(y)


def store_labels(labels: LabelVector, path) -> None:
    lines = ["id,y"] + [f"{i},{int(v)}" for i, v in enumerate(labels.labels)]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# config

def load_config(path) -> EngineConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"config: {exc}") from None
    if not isinstance(doc, dict):
        raise FormatError("config: top level must be an object")
    known = {f.name for f in fields(EngineConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValidationError(f"{unknown[0]}: unknown config key")
    return EngineConfig(**doc)


def store_config(config: EngineConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------

def validate_bundle(
    emb: EmbeddingDataset, votes: VoteMatrix, labels: Optional[LabelVector] = None
) -> DiagnosticsSummary:
    """Check that inputs are aligned and summarise coverage and class prior."""
    if votes.n != emb.n:
        raise ShapeError(f"votes: {votes.n} rows but embeddings have {emb.n}")
    prior = None
    if labels is not None:
        if labels.n != emb.n:
            raise ShapeError(f"labels: {labels.n} rows but embeddings have {emb.n}")
        prior = float(np.count_nonzero(labels.labels == 1)) / labels.n if labels.n else math.nan
    overall = float(np.count_nonzero(np.any(votes.votes != 0, axis=1))) / votes.n if votes.n else 0.0
    return DiagnosticsSummary(
        n=emb.n, m=votes.m, coverage=votes.coverage(), positive_prior=prior, overall_coverage=overall
    )


def parse_float_list(text: str, what: str = "list") -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise ArgumentError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def parse_int_list(text: str, what: str = "list") -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise ArgumentError(f"{what}: expected comma-separated integers, got {text!r}") from None


def as_vote_array(votes) -> np.ndarray:
    """Accept a VoteMatrix, ExtendedVoteMatrix or raw array and return the int8 array."""
    return np.asarray(getattr(votes, "votes", votes))


def as_label_array(labels) -> np.ndarray:
    return np.asarray(getattr(labels, "labels", labels))


def check_rows(what: str, arr: Sequence, n: int) -> None:
    if len(arr) != n:
        raise ShapeError(f"{what}: expected {n} rows, got {len(arr)}")
