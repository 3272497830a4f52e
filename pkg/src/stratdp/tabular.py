"""Categorical tables: ingestion, group partitions, marginals, workload error,
a stratified noisy-histogram synthesizer and tabular parity error.

Marginal cells are indexed mixed-radix, row-major in schema order: for
attributes (a, b) with domain sizes (Na, Nb) the cell of (x_a, x_b) is
x_a * Nb + x_b. Dumped marginals rely on this layout.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .privacy import (
    InvalidParameterError,
    PrivacyBudget,
    RngHandle,
    RngLike,
    as_generator,
    compose_parallel,
    compose_sequential,
    laplace_noise,
)


class SchemaError(ValueError):
    pass


class DataError(ValueError):
    """Malformed or out-of-domain input data; message carries the location."""


class DegenerateResampleError(RuntimeError):
    def __init__(self, group_id):
        super().__init__(f"every noisy marginal of group {group_id!r} has zero mass")
        self.group_id = group_id


@dataclass(frozen=True)
class Attribute:
    name: str
    size: int
    offset: int = 0  # raw code that maps to 0


@dataclass(frozen=True)
class Schema:
    attributes: tuple[Attribute, ...]

    def __post_init__(self) -> None:
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate attribute names in schema")
        for a in self.attributes:
            if a.size < 1:
                raise SchemaError(f"attribute {a.name!r} has non-positive domain size {a.size}")

    @classmethod
    def from_pairs(cls, pairs: Iterable) -> "Schema":
        return cls(tuple(Attribute(*p) for p in pairs))

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    @property
    def sizes(self) -> list[int]:
        return [a.size for a in self.attributes]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown attribute {name!r}") from None

    def indices(self, names: Iterable) -> list[int]:
        return [n if isinstance(n, (int, np.integer)) else self.index(n) for n in names]


def load_schema(path) -> Schema:
    """Read ``name,domain_size[,offset]`` lines; order defines the encoding.

    Blank lines and lines starting with ``#`` are skipped.
    """
    attrs = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            try:
                if len(parts) not in (2, 3):
                    raise ValueError
                attrs.append(Attribute(parts[0], int(parts[1]), int(parts[2]) if len(parts) == 3 else 0))
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: expected 'name,domain_size[,offset]', got {line!r}") from None
    return Schema(tuple(attrs))


def write_schema(schema: Schema, path) -> None:
    with Path(path).open("w") as fh:
        for a in schema.attributes:
            fh.write(f"{a.name},{a.size}" + (f",{a.offset}" if a.offset else "") + "\n")


@dataclass
class TabularDataset:
    schema: Schema
    records: np.ndarray  # (N, d) int64 codes

    def __post_init__(self) -> None:
        d = len(self.schema.attributes)
        rec = np.asarray(self.records, dtype=np.int64)
        if rec.size == 0:
            rec = rec.reshape(0, d)
        if rec.ndim != 2 or rec.shape[1] != d:
            raise SchemaError(f"records must have shape (N, {d}), got {rec.shape}")
        sizes = np.array(self.schema.sizes)
        bad = (rec < 0) | (rec >= sizes)
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise DataError(
                f"record {row}: value {rec[row, col]} outside domain [0, {sizes[col]}) "
                f"of attribute {self.schema.names[col]!r}"
            )
        self.records = rec

    def __len__(self) -> int:
        return self.records.shape[0]

    def column(self, name) -> np.ndarray:
        return self.records[:, self.schema.indices([name])[0]]

    def subset(self, mask) -> "TabularDataset":
        return TabularDataset(self.schema, self.records[mask])


def load_csv(path, schema: Schema) -> TabularDataset:
    """Read an integer-coded CSV whose header names every schema attribute.

    Extra columns are ignored. Raw codes are shifted by each attribute's
    offset. Errors name the offending line and column.
    """
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: missing header row") from None
        header = [h.strip() for h in header]
        missing = [n for n in schema.names if n not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}")
        cols = [header.index(n) for n in schema.names]
        for lineno, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rec = []
            for attr, c in zip(schema.attributes, cols):
                cell = row[c].strip()
                try:
                    v = int(cell)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: column {attr.name!r}: cannot parse {cell!r} as an integer") from None
                code = v - attr.offset
                if not 0 <= code < attr.size:
                    raise DataError(
                        f"{path}:{lineno}: column {attr.name!r}: value {v} outside domain "
                        f"[{attr.offset}, {attr.offset + attr.size})"
                    )
                rec.append(code)
            rows.append(rec)
    return TabularDataset(schema, np.array(rows, dtype=np.int64).reshape(len(rows), len(schema.attributes)))


def load_numeric_columns(path, names: Sequence[str]) -> dict[str, np.ndarray]:
    """Read float columns; blank or ``NA`` cells become NaN."""
    out = {n: [] for n in names}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [n for n in names if n not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}")
        for lineno, row in enumerate(reader, 2):
            for n in names:
                cell = (row[n] or "").strip()
                if cell == "" or cell.upper() in ("NA", "NAN"):
                    out[n].append(math.nan)
                    continue
                try:
                    out[n].append(float(cell))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: column {n!r}: cannot parse {cell!r}") from None
    return {n: np.array(v) for n, v in out.items()}


def write_csv(dataset: TabularDataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(dataset.schema.names)
        offsets = np.array([a.offset for a in dataset.schema.attributes])
        w.writerows((dataset.records + offsets).tolist())


class Partition(NamedTuple):
    """Group ids (value tuples, sorted) and the record indices of each group."""

    group_ids: list[tuple]
    indices: list[np.ndarray]

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(ix) for ix in self.indices], dtype=np.int64)

    def weights(self) -> np.ndarray:
        s = self.sizes
        return s / s.sum()


def partition(dataset: TabularDataset, group_attrs: Sequence) -> Partition:
    """Split records by the joint value of ``group_attrs``; empty cells omitted."""
    cols = dataset.schema.indices(group_attrs)
    n = len(dataset)
    if not cols:
        return Partition([()], [np.arange(n)])
    keys = dataset.records[:, cols]
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(uniq) + 1))
    ids = [tuple(int(v) for v in row) for row in uniq]
    idx = [order[bounds[i] : bounds[i + 1]] for i in range(len(uniq))]
    return Partition(ids, idx)


@dataclass
class Marginal:
    attributes: tuple[int, ...]
    counts: np.ndarray
    shape: tuple[int, ...] = field(default=())

    def dump(self, schema: Schema) -> str:
        names = ",".join(schema.names[i] for i in self.attributes)
        if np.issubdtype(self.counts.dtype, np.integer):
            vals = ",".join(str(int(c)) for c in self.counts)
        else:
            vals = ",".join(f"{c:.12g}" for c in self.counts)
        return f"S={names};counts={vals}"


def marginal(dataset: TabularDataset, attrs: Sequence) -> Marginal:
    cols = dataset.schema.indices(attrs)
    if not cols:
        raise InvalidParameterError("a marginal needs at least one attribute")
    shape = tuple(dataset.schema.sizes[c] for c in cols)
    if len(dataset):
        flat = np.ravel_multi_index(tuple(dataset.records[:, c] for c in cols), shape)
    else:
        flat = np.zeros(0, dtype=np.int64)
    counts = np.bincount(flat, minlength=int(np.prod(shape))).astype(np.int64)
    return Marginal(tuple(cols), counts, shape)


def dump_marginals(dataset: TabularDataset, attr_sets: Iterable[Sequence]) -> str:
    return "\n".join(marginal(dataset, s).dump(dataset.schema) for s in attr_sets) + "\n"


@dataclass
class Workload:
    queries: list[tuple[tuple[int, ...], float]]

    def __post_init__(self) -> None:
        if not self.queries:
            raise InvalidParameterError("a workload needs at least one query")
        if any(w < 0 for _, w in self.queries):
            raise InvalidParameterError("query weights must be non-negative")

    def __len__(self) -> int:
        return len(self.queries)


def all_k_way_workload(schema: Schema, way: int, weight: float = 1.0) -> Workload:
    d = len(schema.attributes)
    if not 1 <= way <= d:
        raise InvalidParameterError(f"way must lie in [1, {d}], got {way}")
    return Workload([(combo, float(weight)) for combo in itertools.combinations(range(d), way)])


def workload_error(real: TabularDataset, synth: TabularDataset, workload: Workload) -> float:
    """Weighted mean L1 marginal distance, normalized by |real|.

    When the synthetic table has a different size its counts are rescaled
    to |real| first.
    """
    if real.schema.sizes != synth.schema.sizes:
        raise SchemaError("real and synthetic datasets have different schemas")
    if len(real) == 0:
        raise InvalidParameterError("the real dataset is empty")
    scale = len(real) / len(synth) if len(synth) and len(synth) != len(real) else 1.0
    total = 0.0
    for attrs, c in workload.queries:
        if c == 0:
            continue
        a = marginal(real, attrs).counts
        b = marginal(synth, attrs).counts
        diff = a - b if scale == 1.0 else a - scale * b
        total += c * float(np.abs(diff).sum())
    return total / (len(workload) * len(real))


class Synthesis(NamedTuple):
    data: TabularDataset
    budget: PrivacyBudget


def strat_histogram_synth(
    dataset: TabularDataset,
    group_attrs: Sequence,
    epsilon: float,
    public_weights: Optional[dict] = None,
    n_out: Optional[int] = None,
    rng: RngLike = None,
) -> Synthesis:
    """Stratified independent-marginals synthesizer.

    For every group, each non-group attribute's 1-way histogram receives
    Laplace(1/(epsilon/m)) noise, where m is the number of non-group
    attributes with more than one value (single-value attributes are
    copied as their only code and cost nothing); noisy counts are clamped at zero and normalized. Records are
    produced by drawing a group from ``public_weights`` (a dict from group id
    to weight; the observed proportions when omitted) and then every
    attribute independently from that group's histograms. Cross-attribute
    correlation within a group is not modelled.

    Strata are disjoint and the m histograms compose sequentially, so the
    release is (epsilon, 0)-DP for any number of groups.
    """
    if not epsilon > 0:
        raise InvalidParameterError("epsilon must be positive")
    if rng is None:
        raise InvalidParameterError("an explicit rng is required")
    schema = dataset.schema
    gcols = schema.indices(group_attrs)
    # single-value attributes are constant: no noise, no budget share
    free = [j for j in range(len(schema.attributes)) if j not in gcols and schema.sizes[j] > 1]
    part = partition(dataset, gcols)
    if public_weights is None:
        weights = dict(zip(part.group_ids, part.weights()))
    else:
        weights = {tuple(k) if isinstance(k, (tuple, list)) else (k,): float(v) for k, v in public_weights.items()}
        missing = [g for g in part.group_ids if g not in weights]
        if missing:
            raise InvalidParameterError(f"public weights missing for groups {missing}")
    gids = list(weights)
    w = np.array([weights[g] for g in gids], dtype=float)
    if np.any(w < 0) or not w.sum() > 0:
        raise InvalidParameterError("public weights must be non-negative with positive total")
    w = w / w.sum()
    n_out = len(dataset) if n_out is None else int(n_out)

    eps_attr = epsilon / len(free) if free else epsilon
    index_of = {g: i for i, g in enumerate(part.group_ids)}
    dists: dict[tuple, list[np.ndarray]] = {}
    for gi, g in enumerate(gids):
        # groups absent from the data still get noisy (all-zero) histograms
        rows = dataset.records[part.indices[index_of[g]]] if g in index_of else np.zeros((0, len(schema.attributes)), np.int64)
        sub = rng.substream(gi) if isinstance(rng, RngHandle) else rng
        probs = []
        all_zero = True
        for j in free:
            size = schema.sizes[j]
            counts = np.bincount(rows[:, j], minlength=size).astype(float)
            noisy = np.maximum(counts + laplace_noise(1.0 / eps_attr, sub, size=size), 0.0)
            mass = noisy.sum()
            if mass > 0:
                all_zero = False
                probs.append(noisy / mass)
            else:
                probs.append(np.full(size, 1.0 / size))
        if free and all_zero:
            raise DegenerateResampleError(g)
        dists[g] = probs

    gen = as_generator(rng.substream(len(gids)) if isinstance(rng, RngHandle) else rng)
    which = gen.choice(len(gids), size=n_out, p=w)
    out = np.zeros((n_out, len(schema.attributes)), dtype=np.int64)
    for gi, g in enumerate(gids):
        mask = which == gi
        cnt = int(mask.sum())
        if cnt == 0:
            continue
        for c, v in zip(gcols, g):
            out[mask, c] = v
        for j, p in zip(free, dists[g]):
            out[mask, j] = gen.choice(p.size, size=cnt, p=p)
    per_attr = [PrivacyBudget.pure(eps_attr)] * max(len(free), 1)
    budget = compose_parallel(compose_sequential(per_attr), partition_disjoint=True)
    return Synthesis(TabularDataset(schema, out), budget)


class ParityReport(NamedTuple):
    per_attribute: dict[str, float]
    aggregate: float
    undefined: int


def parity_error_tabular(
    real: TabularDataset,
    synth: TabularDataset,
    group_attrs: Sequence,
    omega: Optional[float] = None,
    attributes: Optional[Sequence] = None,
) -> ParityReport:
    """Parity error of attribute means, per attribute and averaged.

    For each attribute (by default every non-group attribute) the group
    means and the global mean of ``real`` are compared with those of
    ``synth`` using the normalized parity error with weight ``omega``
    (1/k by default). A group missing from ``synth`` counts as an estimate
    of 0. Terms whose true mean is zero are dropped and counted in
    ``undefined``; a warning is issued when any are dropped.
    """
    if real.schema.sizes != synth.schema.sizes:
        raise SchemaError("real and synthetic datasets have different schemas")
    schema = real.schema
    gcols = schema.indices(group_attrs)
    if attributes is None:
        cols = [j for j in range(len(schema.attributes)) if j not in gcols]
    else:
        cols = schema.indices(attributes)
    rp = partition(real, gcols)
    sp = partition(synth, gcols)
    s_index = {g: ix for g, ix in zip(sp.group_ids, sp.indices)}
    k = len(rp.group_ids)
    omega = 1.0 / k if omega is None else float(omega)
    undefined = 0
    per_attr = {}
    for j in cols:
        rcol = real.records[:, j].astype(float)
        scol = synth.records[:, j].astype(float)
        terms = []
        for g, ix in zip(rp.group_ids, rp.indices):
            f = rcol[ix].mean()
            six = s_index.get(g)
            m = scol[six].mean() if six is not None and len(six) else 0.0
            terms.append((f, m, 1.0))
        f_all = rcol.mean()
        m_all = scol.mean() if len(scol) else 0.0
        terms.append((f_all, m_all, omega))
        total = 0.0
        for f, m, wt in terms:
            if f == 0:
                undefined += 1
                continue
            total += wt * abs((f - m) / f)
        per_attr[schema.names[j]] = total
    if undefined:
        warnings.warn(f"{undefined} parity terms had a zero true mean and were skipped", RuntimeWarning, stacklevel=2)
    agg = float(np.mean(list(per_attr.values()))) if per_attr else float("nan")
    return ParityReport(per_attr, agg, undefined)
