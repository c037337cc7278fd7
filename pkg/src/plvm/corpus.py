"""Count-matrix data model, CSV ingestion, and feature filtering.

File schemas (UTF-8, LF or CRLF):

* counts CSV: header ``sample_id,<feature_id>,...``; one row per sample;
  cells are base-10 nonnegative integers.
* sample metadata CSV: header ``sample_id,time``; time is a nonnegative decimal.
* taxonomy CSV: header ``feature_id,family,phylo_index``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import BoundsError, DomainError, ParseError
from .numeric import asinh_transform


@dataclass(frozen=True)
class Taxonomy:
    """Per-feature taxonomy: family label and a tree-order rank.

    ``phylo_index`` must be a permutation rank over the features (each rank
    used exactly once); it is stored as given, 0- or 1-based.
    """

    family: tuple[str, ...]
    phylo_index: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.phylo_index, dtype=np.int64)
        object.__setattr__(self, "phylo_index", idx)
        if len(self.family) != idx.size:
            raise DomainError("taxonomy family and phylo_index lengths differ")
        lo = idx.min(initial=0) if idx.size else 0
        expected = np.arange(lo, lo + idx.size)
        if idx.size and not np.array_equal(np.sort(idx), expected):
            raise DomainError("phylo_index must be a permutation rank over features")
        idx.flags.writeable = False

    def subset(self, keep: np.ndarray) -> "Taxonomy":
        """Taxonomy restricted to the kept features, ranks re-densified."""
        fam = tuple(self.family[i] for i in keep)
        sub = self.phylo_index[keep]
        ranks = np.empty(sub.size, dtype=np.int64)
        ranks[np.argsort(sub, kind="stable")] = np.arange(sub.size)
        return Taxonomy(fam, ranks)


@dataclass(frozen=True)
class CountMatrix:
    """D x V nonnegative integer abundance table with sample/feature metadata.

    Immutable after construction; the arrays are marked read-only so the
    matrix can be shared freely across threads.
    """

    counts: np.ndarray
    sample_ids: tuple[str, ...]
    feature_ids: tuple[str, ...]
    times: np.ndarray | None = None
    taxonomy: Taxonomy | None = field(default=None)

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise DomainError("counts must be a 2-D array")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(counts == np.floor(counts)):
                raise DomainError("counts must be integers")
            counts = counts.astype(np.int64)
        else:
            counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise DomainError("counts must be nonnegative")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        object.__setattr__(self, "feature_ids", tuple(self.feature_ids))
        d, v = counts.shape
        if len(self.sample_ids) != d or len(self.feature_ids) != v:
            raise DomainError("id lists inconsistent with counts dimensions")
        if len(set(self.sample_ids)) != d:
            raise DomainError("sample_ids must be unique")
        if len(set(self.feature_ids)) != v:
            raise DomainError("feature_ids must be unique")
        if self.times is not None:
            times = np.asarray(self.times, dtype=float)
            if times.shape != (d,) or not np.all(np.isfinite(times)) or np.any(times < 0):
                raise DomainError("times must be finite nonnegative reals, one per sample")
            times.flags.writeable = False
            object.__setattr__(self, "times", times)
        if self.taxonomy is not None and len(self.taxonomy.family) != v:
            raise DomainError("taxonomy length inconsistent with feature count")
        counts.flags.writeable = False

    @property
    def n_samples(self) -> int:
        return self.counts.shape[0]

    @property
    def n_features(self) -> int:
        return self.counts.shape[1]


def library_sizes(x: CountMatrix) -> np.ndarray:
    """Total count per sample, N_d = sum_v x_dv."""
    return x.counts.sum(axis=1)


def _parse_int_cell(raw: str, row_id: str, col_id: str, path) -> int:
    raw = raw.strip()
    try:
        value = int(raw)
    except ValueError:
        raise ParseError(
            f"{path}: cell at (row {row_id}, column {col_id}) is not a base-10 integer: {raw!r}"
        ) from None
    if value < 0:
        raise ParseError(f"{path}: cell at (row {row_id}, column {col_id}) is negative")
    return value


def read_counts(
    counts_path,
    sample_meta_path=None,
    taxonomy_path=None,
) -> CountMatrix:
    """Read and validate a counts CSV plus optional sample/taxonomy metadata.

    Rows and columns keep their file order. Malformed headers, non-integer
    cells, duplicate ids, and metadata ids absent from the counts file each
    raise a :class:`ParseError` naming the offending row or column.
    """
    counts_path = Path(counts_path)
    with open(counts_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{counts_path}: empty file") from None
        if not header or header[0].strip() != "sample_id":
            raise ParseError(f"{counts_path}: header must start with 'sample_id'")
        feature_ids = [h.strip() for h in header[1:]]
        if len(feature_ids) != len(set(feature_ids)):
            dup = sorted({f for f in feature_ids if feature_ids.count(f) > 1})[0]
            raise ParseError(f"{counts_path}: duplicate feature id {dup!r} in header")
        sample_ids: list[str] = []
        rows: list[list[int]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{counts_path}: line {lineno} has {len(row)} cells, expected {len(header)}"
                )
            sid = row[0].strip()
            if sid in sample_ids:
                raise ParseError(f"{counts_path}: duplicate sample id {sid!r}")
            sample_ids.append(sid)
            rows.append(
                [_parse_int_cell(c, sid, feature_ids[j], counts_path) for j, c in enumerate(row[1:])]
            )
    counts = np.array(rows, dtype=np.int64).reshape(len(sample_ids), len(feature_ids))

    times = None
    if sample_meta_path is not None:
        times = _read_sample_meta(Path(sample_meta_path), sample_ids)

    taxonomy = None
    if taxonomy_path is not None:
        taxonomy = _read_taxonomy(Path(taxonomy_path), feature_ids)

    return CountMatrix(counts, tuple(sample_ids), tuple(feature_ids), times, taxonomy)


def _read_sample_meta(path: Path, sample_ids: list[str]) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["sample_id", "time"]:
            raise ParseError(f"{path}: header must be 'sample_id,time'")
        seen: dict[str, float] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            sid = row[0].strip()
            if sid not in sample_ids:
                raise ParseError(f"{path}: sample id {sid!r} (line {lineno}) not found in counts")
            if sid in seen:
                raise ParseError(f"{path}: duplicate sample id {sid!r}")
            try:
                t = float(row[1])
            except (ValueError, IndexError):
                raise ParseError(f"{path}: bad time for sample {sid!r} (line {lineno})") from None
            if not np.isfinite(t) or t < 0:
                raise ParseError(f"{path}: time for sample {sid!r} must be a nonnegative decimal")
            seen[sid] = t
    missing = [sid for sid in sample_ids if sid not in seen]
    if missing:
        raise ParseError(f"{path}: no metadata row for sample {missing[0]!r}")
    return np.array([seen[sid] for sid in sample_ids], dtype=float)


def _read_taxonomy(path: Path, feature_ids: list[str]) -> Taxonomy:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["feature_id", "family", "phylo_index"]:
            raise ParseError(f"{path}: header must be 'feature_id,family,phylo_index'")
        fam: dict[str, str] = {}
        rank: dict[str, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            fid = row[0].strip()
            if fid not in feature_ids:
                raise ParseError(f"{path}: feature id {fid!r} (line {lineno}) not found in counts")
            if fid in fam:
                raise ParseError(f"{path}: duplicate feature id {fid!r}")
            try:
                fam[fid] = row[1].strip()
                rank[fid] = int(row[2])
            except (ValueError, IndexError):
                raise ParseError(f"{path}: bad taxonomy row for feature {fid!r} (line {lineno})") from None
    missing = [fid for fid in feature_ids if fid not in fam]
    if missing:
        raise ParseError(f"{path}: no taxonomy row for feature {missing[0]!r}")
    return Taxonomy(
        tuple(fam[fid] for fid in feature_ids),
        np.array([rank[fid] for fid in feature_ids], dtype=np.int64),
    )


def write_counts(x: CountMatrix, counts_path, sample_meta_path=None, taxonomy_path=None) -> None:
    """Inverse of :func:`read_counts`; round-trips any valid CountMatrix."""
    counts_path = Path(counts_path)
    with open(counts_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", *x.feature_ids])
        for d, sid in enumerate(x.sample_ids):
            writer.writerow([sid, *x.counts[d].tolist()])
    if sample_meta_path is not None:
        if x.times is None:
            raise DomainError("cannot write sample metadata: matrix has no times")
        with open(sample_meta_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["sample_id", "time"])
            for sid, t in zip(x.sample_ids, x.times):
                writer.writerow([sid, format(t, "g")])
    if taxonomy_path is not None:
        if x.taxonomy is None:
            raise DomainError("cannot write taxonomy: matrix has none")
        with open(taxonomy_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["feature_id", "family", "phylo_index"])
            for fid, fam, pi in zip(x.feature_ids, x.taxonomy.family, x.taxonomy.phylo_index):
                writer.writerow([fid, fam, int(pi)])


def filter_features(x: CountMatrix, mode: str, m: int) -> CountMatrix:
    """Keep the m features with the largest total count or asinh-count variance.

    ``top_abundance`` ranks by raw column totals; ``top_variance`` ranks by
    the per-feature sample variance of asinh-transformed counts (the same
    transform applied before the PCA check). Ties break by feature_id
    lexicographic order and the original column order is preserved.
    """
    if mode not in ("top_abundance", "top_variance"):
        raise DomainError(f"unknown filter mode {mode!r}")
    if not 1 <= m <= x.n_features:
        raise BoundsError(f"m={m} out of range for V={x.n_features}")
    if mode == "top_abundance":
        metric = x.counts.sum(axis=0).astype(float)
    else:
        transformed = asinh_transform(x.counts)
        metric = transformed.var(axis=0, ddof=1) if x.n_samples > 1 else np.zeros(x.n_features)
    order = sorted(range(x.n_features), key=lambda j: (-metric[j], x.feature_ids[j]))
    keep = np.array(sorted(order[:m]), dtype=np.int64)
    return CountMatrix(
        x.counts[:, keep].copy(),
        x.sample_ids,
        tuple(x.feature_ids[j] for j in keep),
        None if x.times is None else x.times.copy(),
        None if x.taxonomy is None else x.taxonomy.subset(keep),
    )
