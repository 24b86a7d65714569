"""
Core data types of the generalized grade-of-membership model, the
quasi-tensor flattening map and structural validation of model inputs.

Category indices are 1-based at this boundary (a response is a value in
{1, ..., C_l}); column offsets inside a flattened matrix are 0-based.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ValidationError

LOGGER = logging.getLogger(__name__)

BLOCK_SUM_TOL: float = 1e-12
ROW_SUM_TOL: float = 1e-12
# validate() stops listing individual entries of one kind past this count
MAX_REPORTED: int = 50


class Family(str, Enum):
    """Data family of a flattened matrix, and of the model fitted to it"""

    BERNOULLI_ONEHOT = "bernoulli-onehot"
    BERNOULLI_GENERAL = "bernoulli-general"
    BINOMIAL_HALVED = "binomial-halved"
    POISSON = "poisson"

    @classmethod
    def parse(cls, name: "str | Family") -> "Family":
        """
        Accepts either a flat-matrix family or the model name used on the command line
        """
        if isinstance(name, Family):
            return name
        key = str(name).strip().lower()
        aliases = {
            "polytomous": cls.BERNOULLI_ONEHOT,
            "bernoulli": cls.BERNOULLI_GENERAL,
            "binomial": cls.BINOMIAL_HALVED,
        }
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ValidationError(f"unknown data family {name!r}") from None

    @property
    def model_name(self) -> str:
        return {
            Family.BERNOULLI_ONEHOT: "polytomous",
            Family.BERNOULLI_GENERAL: "bernoulli",
            Family.BINOMIAL_HALVED: "binomial",
            Family.POISSON: "poisson",
        }[self]

    @property
    def bounded(self) -> bool:
        """True when item parameters are probabilities in [0, 1]"""
        return self is not Family.POISSON


def _frozen_array(values, dtype=float) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Violation:
    """One broken invariant found by validate()"""

    kind: str
    message: str
    row: Optional[int] = None
    block: Optional[int] = None
    column: Optional[int] = None
    severity: str = "error"

    def __str__(self) -> str:
        where = [
            f"{name}={value}"
            for name, value in (
                ("row", self.row),
                ("block", self.block),
                ("column", self.column),
            )
            if value is not None
        ]
        suffix = f" [{', '.join(where)}]" if where else ""
        return f"{self.severity}: {self.kind}: {self.message}{suffix}"


@dataclass(frozen=True)
class BlockPartition:
    """
    Ordered, contiguous partition S_1..S_L of the J columns, stored as block sizes
    """

    sizes: Tuple[int, ...]

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes:
            raise ValidationError("a block partition needs at least one block")
        bad = [idx for idx, size in enumerate(sizes) if size < 1]
        if bad:
            raise ValidationError(
                "block sizes must be positive", location=f"block {bad[0]}"
            )
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def singletons(cls, n_columns: int) -> "BlockPartition":
        return cls(tuple([1] * int(n_columns)))

    @classmethod
    def uniform(cls, n_columns: int, block_size: int) -> "BlockPartition":
        if block_size < 1 or n_columns % block_size != 0:
            raise ValidationError(
                f"J={n_columns} is not divisible by block size M={block_size}"
            )
        return cls(tuple([int(block_size)] * (int(n_columns) // int(block_size))))

    @classmethod
    def from_ranges(
        cls, ranges: Sequence[Tuple[int, int]], n_columns: int
    ) -> "BlockPartition":
        """
        Builds a partition from half-open (start, stop) column ranges, checking that
        they are ordered, disjoint, contiguous and cover exactly [0, J)
        """
        expected_start = 0
        sizes = []
        for idx, (start, stop) in enumerate(ranges):
            if start != expected_start:
                raise ValidationError(
                    f"block starts at column {start}, expected {expected_start}",
                    location=f"block {idx}",
                )
            if stop <= start:
                raise ValidationError("empty block", location=f"block {idx}")
            sizes.append(stop - start)
            expected_start = stop
        if expected_start != n_columns:
            raise ValidationError(
                f"blocks cover {expected_start} columns, matrix has {n_columns}"
            )
        return cls(tuple(sizes))

    @property
    def n_blocks(self) -> int:
        return len(self.sizes)

    @property
    def n_columns(self) -> int:
        return int(sum(self.sizes))

    @property
    def max_block(self) -> int:
        return max(self.sizes)

    @property
    def offsets(self) -> np.ndarray:
        """Start column of each block, followed by J"""
        return np.concatenate(([0], np.cumsum(self.sizes))).astype(int)

    @property
    def blocks(self) -> List[range]:
        offsets = self.offsets
        return [range(offsets[l], offsets[l + 1]) for l in range(self.n_blocks)]

    def block_sums(self, matrix: np.ndarray) -> np.ndarray:
        """
        Sums the columns of matrix inside each block: (n, J) -> (n, L)
        """
        return np.add.reduceat(np.asarray(matrix, dtype=float), self.offsets[:-1], axis=1)


@dataclass(frozen=True)
class QuasiTensor:
    """
    N x L polytomous responses with per-item category counts C_l
    """

    responses: np.ndarray
    category_counts: Tuple[int, ...]

    def __post_init__(self) -> None:
        responses = np.asarray(self.responses)
        if responses.ndim != 2 or responses.shape[0] < 1 or responses.shape[1] < 1:
            raise ValidationError(
                f"responses must be a non-empty N x L array, got shape {responses.shape}"
            )
        if not np.issubdtype(responses.dtype, np.integer):
            if not np.all(np.isfinite(responses)) or np.any(
                responses != np.round(responses)
            ):
                raise ValidationError("responses must be integer category indices")
        counts = tuple(int(c) for c in self.category_counts)
        if len(counts) != responses.shape[1]:
            raise ValidationError(
                f"{len(counts)} category counts given for {responses.shape[1]} items"
            )
        small = [l for l, c in enumerate(counts) if c < 2]
        if small:
            raise ValidationError(
                "every item needs at least 2 categories", location=f"item {small[0]}"
            )
        responses = responses.astype(int)
        out_of_range = (responses < 1) | (responses > np.asarray(counts)[None, :])
        if out_of_range.any():
            i, l = (int(v) for v in np.argwhere(out_of_range)[0])
            raise ValidationError(
                f"response {responses[i, l]} outside 1..{counts[l]}",
                location=(i, l),
            )
        object.__setattr__(self, "responses", _frozen_array(responses, dtype=int))
        object.__setattr__(self, "category_counts", counts)

    @property
    def n_subjects(self) -> int:
        return self.responses.shape[0]

    @property
    def n_items(self) -> int:
        return self.responses.shape[1]

    @property
    def partition(self) -> BlockPartition:
        return BlockPartition(self.category_counts)


@dataclass(frozen=True)
class FlatMatrix:
    """
    N x J data matrix with its column block partition and data family
    """

    values: np.ndarray
    partition: BlockPartition
    family: Family = Family.BERNOULLI_ONEHOT

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValidationError(f"flat data must be 2-D, got shape {values.shape}")
        if values.shape[1] != self.partition.n_columns:
            raise ValidationError(
                f"partition covers {self.partition.n_columns} columns, "
                f"matrix has {values.shape[1]}"
            )
        object.__setattr__(self, "values", _frozen_array(values))
        object.__setattr__(self, "family", Family.parse(self.family))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def permute_rows(self, order: Sequence[int]) -> "FlatMatrix":
        return FlatMatrix(self.values[np.asarray(order)], self.partition, self.family)


@dataclass(frozen=True)
class ModelParams:
    """
    Membership matrix Pi (N x K) and item parameter matrix Theta (J x K)
    """

    memberships: np.ndarray
    item_params: np.ndarray
    family: Family
    partition: Optional[BlockPartition] = field(default=None)

    def __post_init__(self) -> None:
        memberships = np.asarray(self.memberships, dtype=float)
        item_params = np.asarray(self.item_params, dtype=float)
        if memberships.ndim != 2 or item_params.ndim != 2:
            raise ValidationError("memberships and item parameters must be 2-D")
        if memberships.shape[1] != item_params.shape[1]:
            raise ValidationError(
                f"memberships have K={memberships.shape[1]} columns, "
                f"item parameters K={item_params.shape[1]}"
            )
        if (
            self.partition is not None
            and self.partition.n_columns != item_params.shape[0]
        ):
            raise ValidationError(
                f"partition covers {self.partition.n_columns} rows of Theta, "
                f"Theta has {item_params.shape[0]}"
            )
        object.__setattr__(self, "memberships", _frozen_array(memberships))
        object.__setattr__(self, "item_params", _frozen_array(item_params))
        object.__setattr__(self, "family", Family.parse(self.family))

    @property
    def n_profiles(self) -> int:
        return self.memberships.shape[1]

    def mean_matrix(self) -> np.ndarray:
        """R* = Pi Theta^T"""
        return self.memberships @ self.item_params.T


def flatten(quasi: QuasiTensor) -> FlatMatrix:
    """
    One-hot encodes every item into a block of C_l columns
    """
    partition = quasi.partition
    n_subjects = quasi.n_subjects
    values = np.zeros((n_subjects, partition.n_columns))
    columns = partition.offsets[:-1][None, :] + quasi.responses - 1
    values[np.arange(n_subjects)[:, None], columns] = 1.0
    return FlatMatrix(values, partition, Family.BERNOULLI_ONEHOT)


def unflatten(flat: FlatMatrix) -> QuasiTensor:
    """
    Inverse of flatten: the 1-based argmax inside each block
    """
    if flat.family is not Family.BERNOULLI_ONEHOT:
        raise ValidationError(
            f"only one-hot data can be unflattened, got {flat.family.value}"
        )
    responses = np.column_stack(
        [np.argmax(flat.values[:, block], axis=1) + 1 for block in flat.partition.blocks]
    )
    return QuasiTensor(responses, flat.partition.sizes)


def flatten_params(
    theta_tilde: Sequence[np.ndarray],
    category_counts: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    Stacks per-item (C_l x K) probability tables into the J x K flattened Theta
    """
    tables = [np.atleast_2d(np.asarray(table, dtype=float)) for table in theta_tilde]
    if not tables:
        raise ValidationError("no item tables given")
    n_profiles = tables[0].shape[1]
    if category_counts is not None:
        if len(category_counts) != len(tables):
            raise ValidationError(
                f"{len(tables)} item tables for {len(category_counts)} category counts"
            )
        for l, (table, count) in enumerate(zip(tables, category_counts)):
            if table.shape[0] != int(count):
                raise ValidationError(
                    f"table has {table.shape[0]} categories, expected {count}",
                    location=f"item {l}",
                )
    for l, table in enumerate(tables):
        if table.shape[1] != n_profiles:
            raise ValidationError(
                f"table has {table.shape[1]} profiles, expected {n_profiles}",
                location=f"item {l}",
            )
        column_sums = table.sum(axis=0)
        if np.any(np.abs(column_sums - 1.0) > 1e-9) or np.any(table < 0):
            k = int(np.argmax(np.abs(column_sums - 1.0)))
            raise ValidationError(
                f"category probabilities sum to {column_sums[k]:.12g}",
                location=(l, k),
            )
    return np.vstack(tables)


def halve_binomial(
    counts: np.ndarray, partition: Optional[BlockPartition] = None
) -> FlatMatrix:
    """
    Ingests Binomial(2, p) counts in {0, 1, 2} as the binomial-halved matrix R / 2
    """
    counts = np.asarray(counts, dtype=float)
    if counts.ndim != 2:
        raise ValidationError(f"binomial counts must be 2-D, got shape {counts.shape}")
    bad = ~np.isin(counts, (0.0, 1.0, 2.0))
    if bad.any():
        i, j = (int(v) for v in np.argwhere(bad)[0])
        raise ValidationError(
            f"binomial count {counts[i, j]} is not in {{0, 1, 2}}", location=(i, j)
        )
    partition = partition or BlockPartition.singletons(counts.shape[1])
    return FlatMatrix(counts / 2.0, partition, Family.BINOMIAL_HALVED)


def _entry_violations(
    mask: np.ndarray, kind: str, message: str, partition: BlockPartition
) -> List[Violation]:
    block_of = np.repeat(np.arange(partition.n_blocks), partition.sizes)
    hits = np.argwhere(mask)
    report = [
        Violation(kind, message, row=int(i), block=int(block_of[j]), column=int(j))
        for i, j in hits[:MAX_REPORTED]
    ]
    if len(hits) > MAX_REPORTED:
        report.append(
            Violation(kind, f"{len(hits) - MAX_REPORTED} more entries not listed")
        )
    return report


def validate(flat: FlatMatrix, include_warnings: bool = False) -> List[Violation]:
    """
    Reports every invariant the flat matrix breaks for its family; never raises.

    With include_warnings, categories nobody chose (all-zero one-hot columns)
    are flagged too. They are kept in the data, not dropped.
    """
    values = flat.values
    partition = flat.partition
    report: List[Violation] = []

    finite = np.isfinite(values)
    if not finite.all():
        report += _entry_violations(~finite, "non-finite", "entry is NaN or inf", partition)
    values = np.where(finite, values, 0.0)

    if flat.family is Family.BERNOULLI_ONEHOT:
        report += _entry_violations(
            finite & ~np.isin(values, (0.0, 1.0)),
            "non-binary",
            "one-hot entry is not 0 or 1",
            partition,
        )
        sums = partition.block_sums(values)
        for i, l in np.argwhere(np.abs(sums - 1.0) > BLOCK_SUM_TOL)[:MAX_REPORTED]:
            report.append(
                Violation(
                    "block-sum",
                    f"row block sums to {sums[i, l]:g}, expected 1",
                    row=int(i),
                    block=int(l),
                )
            )
        if include_warnings:
            for j in np.flatnonzero(values.sum(axis=0) == 0):
                block = int(np.searchsorted(partition.offsets, j, side="right") - 1)
                report.append(
                    Violation(
                        "degenerate-category",
                        "category never chosen by any subject",
                        block=block,
                        column=int(j),
                        severity="warning",
                    )
                )
    elif flat.family is Family.BERNOULLI_GENERAL:
        report += _entry_violations(
            finite & ((values < 0) | (values > 1)),
            "out-of-range",
            "entry outside [0, 1]",
            partition,
        )
    elif flat.family is Family.BINOMIAL_HALVED:
        report += _entry_violations(
            finite & ~np.isin(values, (0.0, 0.5, 1.0)),
            "non-halved",
            "entry is not 0, 0.5 or 1",
            partition,
        )
    elif flat.family is Family.POISSON:
        report += _entry_violations(
            finite & (values < 0), "negative", "count is negative", partition
        )
        report += _entry_violations(
            finite & (values != np.round(values)),
            "non-integer",
            "count is not an integer",
            partition,
        )
    return report


def validate_params(params: ModelParams) -> List[Violation]:
    """
    Reports every invariant broken by a (Pi, Theta) pair
    """
    report: List[Violation] = []
    pi = params.memberships
    theta = params.item_params

    for i in np.flatnonzero((pi < 0).any(axis=1))[:MAX_REPORTED]:
        report.append(Violation("negative-membership", "negative membership", row=int(i)))
    row_sums = pi.sum(axis=1)
    for i in np.flatnonzero(np.abs(row_sums - 1.0) > ROW_SUM_TOL)[:MAX_REPORTED]:
        report.append(
            Violation(
                "membership-sum", f"memberships sum to {row_sums[i]:.15g}", row=int(i)
            )
        )

    if params.family.bounded and ((theta < 0) | (theta > 1)).any():
        report.append(Violation("item-range", "item parameter outside [0, 1]"))
    if params.family is Family.POISSON and (theta < 0).any():
        report.append(Violation("item-range", "Poisson rate is negative"))
    if params.family is Family.BERNOULLI_ONEHOT:
        if params.partition is None:
            report.append(
                Violation("partition", "polytomous parameters need a block partition")
            )
        else:
            sums = params.partition.block_sums(theta.T)
            for k, l in np.argwhere(np.abs(sums - 1.0) > BLOCK_SUM_TOL)[:MAX_REPORTED]:
                report.append(
                    Violation(
                        "item-block-sum",
                        f"profile {k} block sums to {sums[k, l]:.15g}",
                        block=int(l),
                    )
                )
    return report
