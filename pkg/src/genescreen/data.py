"""Dataset, gene index and result containers shared across the package."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyGroup,
    MissingValue,
    OrphanMarker,
    ValueOutOfRange,
)


class DataKind(str, Enum):
    BINARY = "binary"
    CONTINUOUS = "continuous01"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        aliases = {"binary": cls.BINARY, "continuous": cls.CONTINUOUS,
                   "continuous01": cls.CONTINUOUS}
        if key not in aliases:
            raise ValueError(f"unknown data kind {value!r}")
        return aliases[key]


@dataclass(frozen=True, eq=False)
class GeneIndex:
    """Partition of marker rows by gene.

    Attributes
    ----------
    gene_ids : tuple of str
        Genes in order of first occurrence.
    members : tuple of ndarray
        Row indices (0-based) of the markers of each gene.
    gene_of_row : ndarray of int, shape (M,)
        Position in ``gene_ids`` of the gene of every row.
    """

    gene_ids: tuple
    members: tuple
    gene_of_row: np.ndarray

    @property
    def n_genes(self) -> int:
        return len(self.gene_ids)

    @property
    def n_markers(self) -> int:
        return int(self.gene_of_row.size)

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.gene_of_row, minlength=self.n_genes)

    def as_dict(self):
        return {g: [int(i) for i in rows]
                for g, rows in zip(self.gene_ids, self.members)}


def build_gene_index(gene_of_marker: Sequence[str]) -> GeneIndex:
    """Group marker rows by gene, keeping genes in first-occurrence order."""
    if len(gene_of_marker) == 0:
        raise ValueError("gene map is empty")
    position = {}
    codes = np.empty(len(gene_of_marker), dtype=np.intp)
    for row, gene in enumerate(gene_of_marker):
        codes[row] = position.setdefault(gene, len(position))
    order = np.argsort(codes, kind="stable")
    bounds = np.cumsum(np.bincount(codes, minlength=len(position)))[:-1]
    members = tuple(np.split(order, bounds))
    for rows in members:
        rows.flags.writeable = False
    codes.flags.writeable = False
    index = GeneIndex(tuple(position), members, codes)
    assert int(index.sizes.sum()) == codes.size
    return index


@dataclass(frozen=True, eq=False)
class Dataset:
    """Marker-by-sample observations with a gene map and binary groups.

    Construct directly and pass through :func:`validate_dataset`, or use
    :func:`make_dataset` which does both.
    """

    values: np.ndarray
    marker_ids: tuple
    gene_of_marker: tuple
    group_labels: np.ndarray
    kind: DataKind
    sample_ids: Optional[tuple] = None

    @property
    def n_markers(self) -> int:
        return self.values.shape[0]

    @property
    def n_samples(self) -> int:
        return self.values.shape[1]

    @cached_property
    def gene_index(self) -> GeneIndex:
        return build_gene_index(self.gene_of_marker)

    @property
    def group_sizes(self):
        n1 = int(self.group_labels.sum())
        return self.n_samples - n1, n1

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.intp)
        return Dataset(
            values=self.values[rows],
            marker_ids=tuple(self.marker_ids[i] for i in rows),
            gene_of_marker=tuple(self.gene_of_marker[i] for i in rows),
            group_labels=self.group_labels,
            kind=self.kind,
            sample_ids=self.sample_ids,
        )

    def replace(self, **changes) -> "Dataset":
        fields = dict(values=self.values, marker_ids=self.marker_ids,
                      gene_of_marker=self.gene_of_marker,
                      group_labels=self.group_labels, kind=self.kind,
                      sample_ids=self.sample_ids)
        fields.update(changes)
        return validate_dataset(Dataset(**fields))

    def equals(self, other: "Dataset") -> bool:
        return (self.kind == other.kind
                and self.marker_ids == other.marker_ids
                and self.gene_of_marker == other.gene_of_marker
                and self.sample_ids == other.sample_ids
                and np.array_equal(self.group_labels, other.group_labels)
                and np.array_equal(self.values, other.values))


def validate_dataset(raw: Dataset) -> Dataset:
    """Check a dataset and return a normalized, read-only copy.

    Raises
    ------
    DimensionMismatch, EmptyGroup, ValueOutOfRange, MissingValue, OrphanMarker
    """
    values = np.asarray(raw.values)
    if values.ndim != 2:
        raise DimensionMismatch(f"values must be 2-D, got shape {values.shape}")
    m, n = values.shape
    if m == 0 or n == 0:
        raise DimensionMismatch(f"values has empty shape {values.shape}")
    if len(raw.marker_ids) != m:
        raise DimensionMismatch(
            f"{len(raw.marker_ids)} marker ids for {m} rows")
    if len(raw.gene_of_marker) != m:
        raise DimensionMismatch(
            f"{len(raw.gene_of_marker)} gene assignments for {m} rows")
    labels = np.asarray(raw.group_labels)
    if labels.shape != (n,):
        raise DimensionMismatch(f"{labels.size} group labels for {n} samples")
    if raw.sample_ids is not None and len(raw.sample_ids) != n:
        raise DimensionMismatch(f"{len(raw.sample_ids)} sample ids for {n} columns")
    if not np.isin(labels, (0, 1)).all():
        raise ValueOutOfRange("group labels must be 0 or 1")
    labels = labels.astype(np.int8)
    n1 = int(labels.sum())
    if n1 == 0 or n1 == n:
        raise EmptyGroup(f"group sizes are ({n - n1}, {n1}); both must be non-empty")

    for row, gene in enumerate(raw.gene_of_marker):
        if gene is None or (isinstance(gene, str) and gene.strip() == ""):
            raise OrphanMarker(f"marker {raw.marker_ids[row]!r} has no gene")

    kind = DataKind.parse(raw.kind)
    if kind is DataKind.BINARY:
        if np.issubdtype(values.dtype, np.floating) and np.isnan(values).any():
            raise MissingValue(_first_bad(raw, np.isnan(values), "missing value"))
        bad = ~np.isin(values, (0, 1))
        if bad.any():
            raise ValueOutOfRange(_first_bad(raw, bad, "binary value not in {0,1}"))
        values = values.astype(np.int8)
    else:
        values = values.astype(np.float64, copy=False)
        if np.isnan(values).any():
            raise MissingValue(_first_bad(raw, np.isnan(values), "missing value"))
        bad = (values < 0) | (values > 1)
        if bad.any():
            raise ValueOutOfRange(_first_bad(raw, bad, "value outside [0, 1]"))

    values = np.ascontiguousarray(values)
    values.flags.writeable = False
    labels.flags.writeable = False
    ds = Dataset(
        values=values,
        marker_ids=tuple(str(x) for x in raw.marker_ids),
        gene_of_marker=tuple(str(g) for g in raw.gene_of_marker),
        group_labels=labels,
        kind=kind,
        sample_ids=None if raw.sample_ids is None else tuple(str(s) for s in raw.sample_ids),
    )
    if len(set(ds.marker_ids)) != m:
        raise DimensionMismatch("marker ids are not unique")
    _ = ds.gene_index
    return ds


def make_dataset(values, marker_ids=None, gene_of_marker=None, group_labels=None,
                 kind=None, sample_ids=None) -> Dataset:
    """Build and validate a dataset; ``kind`` is inferred when omitted."""
    values = np.asarray(values)
    m = values.shape[0] if values.ndim == 2 else 0
    if marker_ids is None:
        marker_ids = tuple(f"m{i + 1}" for i in range(m))
    if gene_of_marker is None:
        raise OrphanMarker("no gene map supplied")
    if kind is None:
        kind = infer_kind(values)
    return validate_dataset(Dataset(values, tuple(marker_ids), tuple(gene_of_marker),
                                    np.asarray(group_labels), kind,
                                    None if sample_ids is None else tuple(sample_ids)))


def infer_kind(values) -> DataKind:
    values = np.asarray(values)
    finite = values[~np.isnan(values)] if np.issubdtype(values.dtype, np.floating) else values
    if np.isin(finite, (0, 1)).all():
        return DataKind.BINARY
    return DataKind.CONTINUOUS


def _first_bad(raw, mask, what):
    row, col = (int(v[0]) for v in np.nonzero(mask))
    return f"{what} at marker {raw.marker_ids[row]!r}, sample column {col + 1}"


@dataclass
class ChainSummary:
    post_null: np.ndarray
    post_null_rb: np.ndarray
    gene_prob: np.ndarray
    pi_tail: float = 0.0


@dataclass
class ScreenResult:
    """Posterior summaries from one screening run.

    ``post_null`` averages the sampled null indicators over post burn-in
    sweeps; ``post_null_rb`` averages their conditional probabilities
    instead. Both are pooled over chains.
    """

    post_null: np.ndarray
    post_null_rb: np.ndarray
    gene_prob: np.ndarray
    marker_ids: tuple
    gene_ids: tuple
    gene_of_marker: tuple
    mode: str
    n_sweeps: int
    n_burnin: int
    seed: int
    chains: list = field(default_factory=list)
    traces: Optional[list] = None
    timings: dict = field(default_factory=dict)

    def __post_init__(self):
        assert self.post_null.shape == (len(self.marker_ids),)
        assert self.gene_prob.shape == (len(self.gene_ids),)

    def estimate(self, rao_blackwell: bool = False) -> np.ndarray:
        return self.post_null_rb if rao_blackwell else self.post_null

    def to_dict(self) -> dict:
        """JSON-ready summary; timings are left out so the output is reproducible."""
        return {
            "mode": self.mode,
            "n_sweeps": self.n_sweeps,
            "n_burnin": self.n_burnin,
            "seed": self.seed,
            "marker_ids": list(self.marker_ids),
            "gene_of_marker": list(self.gene_of_marker),
            "gene_ids": list(self.gene_ids),
            "post_null": self.post_null.tolist(),
            "post_null_rb": self.post_null_rb.tolist(),
            "gene_prob": self.gene_prob.tolist(),
            "chains": [{"gene_prob": c.gene_prob.tolist(), "pi_tail": float(c.pi_tail)}
                       for c in self.chains],
            "chain_rms": self.chain_rms(),
        }

    def chain_rms(self) -> float:
        """Largest pairwise RMS difference of chain gene_prob estimates."""
        worst = 0.0
        for i in range(len(self.chains)):
            for j in range(i + 1, len(self.chains)):
                d = self.chains[i].gene_prob - self.chains[j].gene_prob
                worst = max(worst, float(np.sqrt(np.mean(d * d))))
        return worst
