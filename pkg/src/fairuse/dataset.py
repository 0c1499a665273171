"""Tabular classification data carrying categorical group attributes.

CSV convention: UTF-8, comma-delimited, header mandatory. Group columns are
identified by a ``g:`` prefix (or an explicit schema); the label column is
named ``y`` by default and holds values from {0,1} or {-1,+1}, mapped to
{-1,+1}. All remaining columns are numeric features. Attribute domains are
inferred from observed values (sorted, so the result is independent of row
order) unless declared explicitly; declared domains may leave cells empty,
and empty cells are reported rather than dropped. Missing feature cells are
rejected; this module audits data, it does not clean it.
"""

import csv
import io
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .groups import ALL, DomainError, GroupId, GroupSpace


class SchemaError(ValueError):
    """The CSV header does not match the expected column roles."""


class ParseError(ValueError):
    """A CSV cell could not be parsed; the message carries the row index."""


@dataclass(frozen=True)
class CsvSchema:
    """Column roles for load_csv.

    label: name of the label column.
    group_prefix: columns starting with this prefix are group attributes
        (prefix stripped for the attribute name) unless ``groups`` is given.
    groups: explicit group column names (used verbatim as attribute names).
    features: explicit feature column names; default is every remaining column.
    domains: mapping attribute name -> ordered value domain; overrides the
        sorted-observed-values inference and may include unobserved values.
    """

    label: str = "y"
    group_prefix: str = "g:"
    groups: tuple = None
    features: tuple = None
    domains: dict = None


@dataclass(frozen=True)
class Dataset:
    """Immutable feature matrix, labels in {-1,+1}, and per-row groups."""

    features: np.ndarray
    labels: np.ndarray
    groups: tuple
    space: GroupSpace
    feature_names: tuple = None

    def __post_init__(self):
        feats = np.array(self.features, dtype=float, copy=True)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {feats.shape}")
        labels = np.array(self.labels, dtype=int, copy=True)
        if labels.ndim != 1:
            raise ValueError("labels must be 1-D")
        groups = tuple(self.groups)
        n = feats.shape[0]
        if not (len(labels) == len(groups) == n):
            raise ValueError(
                f"length mismatch: {n} feature rows, {len(labels)} labels, "
                f"{len(groups)} groups")
        if n and not np.isfinite(feats).all():
            bad = int(np.argwhere(~np.isfinite(feats))[0][0])
            raise ValueError(f"non-finite feature value at row {bad}")
        if n and not np.isin(labels, (-1, 1)).all():
            bad = int(np.argwhere(~np.isin(labels, (-1, 1)))[0][0])
            raise ValueError(
                f"label at row {bad} is {labels[bad]}, expected -1 or +1")
        for g in groups:
            self.space.validate(g)
        names = self.feature_names
        if names is None:
            names = tuple(f"x{j + 1}" for j in range(feats.shape[1]))
        else:
            names = tuple(str(c) for c in names)
            if len(names) != feats.shape[1]:
                raise ValueError(
                    f"{len(names)} feature names for {feats.shape[1]} columns")
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    @cached_property
    def cell_indices(self):
        """Per-row index of the group in space.cells() order."""
        idx = np.array([self.space.index_of(g) for g in self.groups],
                       dtype=int)
        idx.setflags(write=False)
        return idx

    def rows_for(self, g):
        """Row indices for group g (or every row for the ALL sentinel)."""
        if g is ALL:
            return np.arange(self.n)
        gi = self.space.index_of(g)
        return np.flatnonzero(self.cell_indices == gi)

    def subset(self, rows):
        rows = np.asarray(rows, dtype=int)
        return Dataset(self.features[rows], self.labels[rows],
                       tuple(self.groups[i] for i in rows), self.space,
                       self.feature_names)


@dataclass(frozen=True)
class CellTally:
    n: int
    n_pos: int
    n_neg: int

    def __post_init__(self):
        if self.n != self.n_pos + self.n_neg:
            raise ValueError(
                f"tally {self.n} != {self.n_pos} + {self.n_neg}")


@dataclass(frozen=True)
class GroupTally:
    """Per-cell row and label counts; zero-count cells are included."""

    space: GroupSpace
    counts: dict

    @property
    def total(self):
        return sum(c.n for c in self.counts.values())

    def to_jsonable(self):
        return {
            "total": self.total,
            "cells": [
                {"group": list(g.values), "n": c.n, "n_pos": c.n_pos,
                 "n_neg": c.n_neg}
                for g, c in ((g, self.counts[g]) for g in self.space.cells())
            ],
        }


def tally(ds):
    """Exact per-cell counts (n_g, n_g+, n_g-) over the whole space."""
    counts = {}
    cells = ds.space.cells()
    per_cell = np.zeros((len(cells), 2), dtype=int)
    if ds.n:
        idx = ds.cell_indices
        pos = ds.labels == 1
        np.add.at(per_cell, (idx, np.where(pos, 0, 1)), 1)
    for i, g in enumerate(cells):
        n_pos, n_neg = int(per_cell[i, 0]), int(per_cell[i, 1])
        counts[g] = CellTally(n_pos + n_neg, n_pos, n_neg)
    return GroupTally(ds.space, counts)


def _resolve_columns(header, schema):
    if schema.label not in header:
        raise SchemaError(f"label column {schema.label!r} not in header "
                          f"{header}")
    if schema.groups is not None:
        group_cols = [str(c) for c in schema.groups]
        for c in group_cols:
            if c not in header:
                raise SchemaError(f"group column {c!r} not in header")
        attr_names = group_cols
    else:
        group_cols = [c for c in header
                      if c.startswith(schema.group_prefix) and c != schema.label]
        attr_names = [c[len(schema.group_prefix):] for c in group_cols]
    if not group_cols:
        raise SchemaError(
            "no group columns found (expected names starting with "
            f"{schema.group_prefix!r} or an explicit schema)")
    if schema.features is not None:
        feat_cols = [str(c) for c in schema.features]
        for c in feat_cols:
            if c not in header:
                raise SchemaError(f"feature column {c!r} not in header")
    else:
        claimed = set(group_cols) | {schema.label}
        feat_cols = [c for c in header if c not in claimed]
    if not feat_cols:
        raise SchemaError("no feature columns found")
    return feat_cols, group_cols, attr_names


def _parse_label(raw, row_idx):
    try:
        val = float(raw)
    except ValueError:
        raise ParseError(
            f"row {row_idx}: label {raw!r} is not numeric") from None
    if val not in (-1.0, 0.0, 1.0):
        raise ParseError(
            f"row {row_idx}: label {raw!r} not in {{0,1}} or {{-1,+1}}")
    return int(val)


def load_csv(path, schema=None):
    """Read a Dataset from a CSV file. See the module docstring for roles."""
    schema = schema or CsvSchema()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header required") from None
        rows = list(reader)
    return _from_rows(header, rows, schema, origin=str(path))


def loads_csv(text, schema=None):
    """Read a Dataset from CSV text (same format as load_csv)."""
    schema = schema or CsvSchema()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty CSV text, header required") from None
    return _from_rows(header, list(reader), schema, origin="<string>")


def _from_rows(header, rows, schema, origin):
    header = [str(c) for c in header]
    feat_cols, group_cols, attr_names = _resolve_columns(header, schema)
    pos = {c: i for i, c in enumerate(header)}
    feats, raw_labels, raw_groups = [], [], []
    for r, row in enumerate(rows, start=1):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(
                f"row {r}: {len(row)} cells for {len(header)} columns")
        vals = []
        for c in feat_cols:
            cell = row[pos[c]]
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(
                    f"row {r}: feature {c!r} value {cell!r} is not "
                    "numeric") from None
            vals.append(v)
        feats.append(vals)
        raw_labels.append(_parse_label(row[pos[schema.label]], r))
        raw_groups.append(tuple(row[pos[c]] for c in group_cols))

    raw = np.array(raw_labels, dtype=int) if raw_labels else np.zeros(0, int)
    if (raw == 0).any():
        if (raw == -1).any():
            raise ParseError(
                "labels mix 0 and -1; use one convention ({0,1} or {-1,+1})")
        labels = np.where(raw == 1, 1, -1)
    else:
        labels = raw

    declared = dict(schema.domains or {})
    attrs = []
    for j, name in enumerate(attr_names):
        if name in declared:
            domain = tuple(str(v) for v in declared[name])
            seen = {g[j] for g in raw_groups}
            extra = seen - set(domain)
            if extra:
                raise DomainError(
                    f"attribute {name!r}: observed values {sorted(extra)} "
                    f"outside declared domain {domain}")
        else:
            domain = tuple(sorted({g[j] for g in raw_groups}))
        attrs.append((name, domain))
    space = GroupSpace(tuple(attrs))
    groups = tuple(GroupId(g) for g in raw_groups)
    feature_matrix = (np.array(feats, dtype=float) if feats
                      else np.zeros((0, len(feat_cols))))
    return Dataset(feature_matrix, labels, groups, space, tuple(feat_cols))


def save_csv(ds, path, group_prefix="g:"):
    """Write a Dataset so that load_csv restores it exactly.

    Floats are written with repr (shortest exact round-trip); group domains
    must therefore be in sorted order for the space to survive the trip,
    which holds for every built-in generator.
    """
    header = (list(ds.feature_names)
              + [group_prefix + name for name in ds.space.names]
              + ["y"])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.features[i]]
            row.extend(ds.groups[i].values)
            row.append(str(int(ds.labels[i])))
            writer.writerow(row)


def split(ds, train_fraction, seed):
    """Deterministic stratified train/test split by (group, label).

    Every nonempty cell must contain both labels; a stratum with a single
    row goes to the training side with a warning. Declared-but-empty cells
    are skipped. The two parts preserve original row order and partition
    the input.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(
            f"train_fraction must be in (0,1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    cells = ds.space.cells()
    idx_by_cell = [ds.rows_for(g) for g in cells]
    train_rows = []
    for g, rows in zip(cells, idx_by_cell):
        if rows.size == 0:
            continue
        for label in (-1, 1):
            stratum = rows[ds.labels[rows] == label]
            if stratum.size == 0:
                raise ValueError(
                    f"group {g} has no rows with label {label:+d}; every "
                    "(group, label) stratum of a nonempty cell must be "
                    "nonempty to split")
            if stratum.size == 1:
                warnings.warn(
                    f"stratum (group {g}, label {label:+d}) has one row; "
                    "placing it in the training part", stacklevel=2)
                train_rows.append(stratum)
                continue
            k = int(round(train_fraction * stratum.size))
            k = min(max(k, 1), stratum.size)
            perm = rng.permutation(stratum)
            train_rows.append(perm[:k])
    train_idx = np.sort(np.concatenate(train_rows)) if train_rows else \
        np.zeros(0, dtype=int)
    mask = np.zeros(ds.n, dtype=bool)
    mask[train_idx] = True
    test_idx = np.flatnonzero(~mask)
    return ds.subset(train_idx), ds.subset(test_idx)
