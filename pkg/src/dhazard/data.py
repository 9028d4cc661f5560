"""Person-level survival records, person-period augmentation, and batching.

A discrete-time survival dataset stores one record per individual: the
observed interval ``t`` (event or censoring time), the event indicator,
and a vector of time-invariant covariates.  Fitting works on the
*augmented* (person-period) representation: one binary row per individual
per interval at risk, with ``y = 1`` only in the final interval of an
individual who experienced the event.

:class:`AugmentedDataset` keeps covariates per individual rather than per
row; row-level views are produced by index gathers so the augmented table
never has to be materialised with duplicated covariates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, HorizonError, ValidationError

__all__ = [
    "IndividualRecord",
    "ColumnSchema",
    "AugmentedDataset",
    "Batch",
    "augment",
    "truncate_to_horizon",
    "sample_batch",
    "load_csv",
]


@dataclass(frozen=True)
class IndividualRecord:
    """One subject: observed time, event indicator, named covariates.

    ``time`` is the 1-based interval index ``min(T, C, k)``; ``event`` is 1
    if the event was observed in that interval, 0 if censored.
    """

    id: object
    time: int
    event: int
    covariates: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ColumnSchema:
    """Column roles for person-level CSV input."""

    id: str = "id"
    time: str = "time"
    event: str = "event"
    covariates: tuple = ()
    categorical: tuple = ()

    def __post_init__(self):
        unknown = set(self.categorical) - set(self.covariates)
        if unknown:
            raise ConfigError(
                f"categorical columns not listed as covariates: {sorted(unknown)}"
            )


def _validate_records(records, k):
    if k < 1:
        raise ValidationError(f"horizon must be >= 1, got {k}")
    names = None
    for rec in records:
        t = rec.time
        if int(t) != t or t < 1:
            raise ValidationError(
                f"record {rec.id!r}: time must be a positive integer, got {t!r}"
            )
        if t > k:
            raise HorizonError(
                f"record {rec.id!r}: time {t} exceeds horizon {k}; "
                "truncate with truncate_to_horizon() first"
            )
        if rec.event not in (0, 1):
            raise ValidationError(
                f"record {rec.id!r}: event must be 0 or 1, got {rec.event!r}"
            )
        keys = tuple(rec.covariates)
        if names is None:
            names = keys
        elif keys != names:
            raise ValidationError(
                f"record {rec.id!r}: covariate names {keys} differ from "
                f"first record {names}"
            )
    return names or ()


def truncate_to_horizon(records, k):
    """Clamp observation times at the horizon ``k``.

    A record with ``time > k`` is replaced by a right-censored record at
    ``time = k`` (the subject was still event-free when the study window
    closed).  Records already inside the horizon are returned unchanged.
    """
    out = []
    for rec in records:
        if rec.time > k:
            out.append(
                IndividualRecord(rec.id, k, 0, dict(rec.covariates))
            )
        else:
            out.append(rec)
    return out


class AugmentedDataset:
    """Person-period rows plus per-individual contiguous row blocks.

    Covariates are stored once per individual (``covariates[name][i]``);
    the per-row arrays ``row_individual``, ``row_t`` and ``row_y`` define
    the augmented table.  Individual ``i`` owns rows
    ``block_starts[i]:block_starts[i + 1]`` with ``t = 1..times[i]`` in
    order.  Instances are immutable after construction and safe to share
    across threads.
    """

    def __init__(self, ids, times, events, covariates, levels, horizon):
        self.ids = np.asarray(ids, dtype=object)
        self.times = np.asarray(times, dtype=np.int64)
        self.events = np.asarray(events, dtype=np.int8)
        self.covariates = {k: np.asarray(v) for k, v in covariates.items()}
        self.levels = dict(levels)
        self.horizon = int(horizon)

        n = self.times.size
        self.block_starts = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(self.times, out=self.block_starts[1:])
        self.n_rows = int(self.block_starts[-1])

        self.row_individual = np.repeat(
            np.arange(n, dtype=np.int64), self.times
        )
        offsets = np.repeat(self.block_starts[:-1], self.times)
        self.row_t = np.arange(self.n_rows, dtype=np.int64) - offsets + 1
        self.row_y = np.zeros(self.n_rows, dtype=np.int8)
        if n:
            self.row_y[self.block_starts[1:] - 1] = self.events

        for arr in (
            self.ids,
            self.times,
            self.events,
            self.block_starts,
            self.row_individual,
            self.row_t,
            self.row_y,
        ):
            arr.setflags(write=False)
        for arr in self.covariates.values():
            arr.setflags(write=False)

    @property
    def n_individuals(self):
        return self.times.size

    @property
    def covariate_names(self):
        return tuple(self.covariates)

    @property
    def max_time(self):
        return int(self.times.max()) if self.times.size else 0

    def block(self, i):
        """Row-index range (start, stop) for individual ``i``."""
        return int(self.block_starts[i]), int(self.block_starts[i + 1])

    def rows(self):
        """Iterate the augmented table as ``(id, t, y, covariates)`` tuples."""
        for r in range(self.n_rows):
            i = self.row_individual[r]
            cov = {}
            for name, vals in self.covariates.items():
                if name in self.levels:
                    cov[name] = self.levels[name][int(vals[i])]
                else:
                    cov[name] = vals[i]
            yield (self.ids[i], int(self.row_t[r]), int(self.row_y[r]), cov)

    def to_records(self):
        """Collapse back to person-level :class:`IndividualRecord` objects."""
        out = []
        for i in range(self.n_individuals):
            cov = {}
            for name, vals in self.covariates.items():
                if name in self.levels:
                    cov[name] = self.levels[name][int(vals[i])]
                else:
                    cov[name] = vals[i]
            out.append(
                IndividualRecord(
                    self.ids[i], int(self.times[i]), int(self.events[i]), cov
                )
            )
        return out


def augment(records, k, categorical=()):
    """Expand person-level records into the person-period form.

    Each record contributes ``time`` rows with ``t = 1..time`` and
    ``y = 0`` except for ``y = 1`` in the final row iff the event was
    observed.  Categorical covariates (named in ``categorical``) are
    stored as integer codes with sorted level sets; everything else is
    coerced to float.

    Raises :class:`HorizonError` for times beyond ``k`` and
    :class:`ValidationError` for malformed records.
    """
    records = list(records)
    names = _validate_records(records, k)
    unknown = set(categorical) - set(names)
    if unknown:
        raise ValidationError(
            f"categorical columns not present in records: {sorted(unknown)}"
        )

    ids = [rec.id for rec in records]
    times = [rec.time for rec in records]
    events = [rec.event for rec in records]

    covariates = {}
    levels = {}
    for name in names:
        raw = [rec.covariates[name] for rec in records]
        if name in categorical:
            values = [str(v) for v in raw]
            lv = tuple(sorted(set(values)))
            levels[name] = lv
            index = {v: c for c, v in enumerate(lv)}
            covariates[name] = np.array([index[v] for v in values], dtype=np.int64)
        else:
            try:
                covariates[name] = np.array(raw, dtype=np.float64)
            except (TypeError, ValueError) as exc:
                raise ValidationError(
                    f"covariate {name!r} is not numeric: {exc}"
                ) from None
    return AugmentedDataset(ids, times, events, covariates, levels, k)


@dataclass(frozen=True)
class Batch:
    """A whole-individual subset of an augmented dataset.

    ``row_indices`` is exactly the union of the chosen individuals' row
    blocks; a block is never split across batches.
    """

    individual_ids: np.ndarray
    individual_indices: np.ndarray
    row_indices: np.ndarray

    @property
    def row_count(self):
        return self.row_indices.size


def _block_rows(dataset, chosen):
    lens = dataset.times[chosen]
    total = int(lens.sum())
    starts = np.repeat(dataset.block_starts[chosen], lens)
    within = np.arange(total, dtype=np.int64) - np.repeat(
        np.cumsum(lens) - lens, lens
    )
    return starts + within


def sample_batch(dataset, M, rng):
    """Draw a batch of at least ``M`` augmented rows by whole individuals.

    Individuals are drawn uniformly without replacement and their full row
    blocks accumulated until the row count reaches ``M``; the individual
    whose block crosses the threshold is included, so the batch holds
    between ``M`` and ``M + max_i t_i - 1`` rows.  If the dataset has at
    most ``M`` rows the batch is the entire dataset.  Deterministic given
    the generator state.
    """
    if dataset.n_individuals == 0:
        raise ValidationError("cannot sample a batch from an empty dataset")
    if M < dataset.max_time:
        raise ConfigError(
            f"batch size {M} is smaller than the longest individual block "
            f"({dataset.max_time} rows)"
        )
    n = dataset.n_individuals
    if dataset.n_rows <= M:
        chosen = np.arange(n, dtype=np.int64)
    else:
        perm = rng.permutation(n)
        cum = np.cumsum(dataset.times[perm])
        stop = int(np.searchsorted(cum, M)) + 1
        chosen = np.sort(perm[:stop])
    return Batch(
        individual_ids=dataset.ids[chosen],
        individual_indices=chosen,
        row_indices=_block_rows(dataset, chosen),
    )


def load_csv(path, schema):
    """Read person-level records from a headed CSV file.

    Every parse failure is reported with the 1-based file row and column
    name.  Continuous covariates must be finite numbers; categorical
    covariates are kept as strings (their level sets are collected during
    :func:`augment`).
    """
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [schema.id, schema.time, schema.event, *schema.covariates]
        missing = [c for c in needed if c not in header]
        if missing:
            raise ValidationError(f"missing column(s) in {path}: {missing}")
        categorical = set(schema.categorical)
        for rownum, row in enumerate(reader, start=2):
            rid = row[schema.id]
            try:
                t = int(row[schema.time])
            except (TypeError, ValueError):
                raise ValidationError(
                    f"row {rownum}, column {schema.time!r}: "
                    f"expected a positive integer, got {row[schema.time]!r}"
                ) from None
            try:
                event = int(row[schema.event])
            except (TypeError, ValueError):
                event = -1
            if event not in (0, 1):
                raise ValidationError(
                    f"row {rownum}, column {schema.event!r}: "
                    f"expected 0 or 1, got {row[schema.event]!r}"
                )
            cov = {}
            for name in schema.covariates:
                cell = row[name]
                if name in categorical:
                    if cell is None or cell == "":
                        raise ValidationError(
                            f"row {rownum}, column {name!r}: missing value"
                        )
                    cov[name] = cell
                else:
                    try:
                        value = float(cell)
                    except (TypeError, ValueError):
                        value = np.nan
                    if not np.isfinite(value):
                        raise ValidationError(
                            f"row {rownum}, column {name!r}: "
                            f"expected a finite number, got {cell!r}"
                        )
                    cov[name] = value
            records.append(IndividualRecord(rid, t, event, cov))
    return records
