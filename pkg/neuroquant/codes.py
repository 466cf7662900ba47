# SPDX-FileCopyrightText: 2024 The neuroquant contributors
#
# SPDX-License-Identifier: MPL-2.0
"""Parity-check matrices, Tanner graphs and systematic encoding.

Matrices are read from alist files. Indices are one-based in the file and zero-based everywhere in this package.

"""
from collections.abc import Iterator
from pathlib import Path

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator


class AlistParseError(ValueError):
    """Malformed alist input; ``line_number`` points at the offending line (one-based)."""

    def __init__(self, message: str, line_number: int) -> None:
        """Initialize the error.

        :param message: description of the defect
        :param line_number: one-based line number in the parsed text

        """
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class TannerGraph(BaseModel):
    """Bipartite graph of a parity-check matrix H.

    Edges are numbered check-major: all edges of check 0 in increasing variable order, then check 1, and so on.
    Message arrays of the decoder are indexed by these edge ids.

    :param BaseModel: Pydantic base model

    """

    model_config = ConfigDict(frozen=True)

    n: int = Field(..., ge=1, description="Number of variable nodes")
    m: int = Field(..., ge=1, description="Number of check nodes")
    check_adj: tuple[tuple[int, ...], ...] = Field(
        ..., description="A(i): sorted variables of every check"
    )
    var_adj: tuple[tuple[int, ...], ...] = Field(
        ..., description="B(j): sorted checks of every variable"
    )

    _edge_check: np.ndarray = PrivateAttr()
    _edge_var: np.ndarray = PrivateAttr()
    _check_edges: list[np.ndarray] = PrivateAttr()
    _var_edges: list[np.ndarray] = PrivateAttr()

    @model_validator(mode="after")
    def check_consistency(self) -> "TannerGraph":
        """Check that both adjacency lists describe the same edge set."""
        if len(self.check_adj) != self.m or len(self.var_adj) != self.n:
            raise ValueError("Adjacency lists do not match the dimensions.")
        for check, variables in enumerate(self.check_adj):
            if not _sorted_within(variables, self.n):
                raise ValueError(
                    f"Check {check} has unsorted, repeated or out of range variables."
                )
        for variable, checks in enumerate(self.var_adj):
            if not _sorted_within(checks, self.m):
                raise ValueError(
                    f"Variable {variable} has unsorted, repeated "
                    "or out of range checks."
                )
        by_check = {
            (i, j) for i, variables in enumerate(self.check_adj) for j in variables
        }
        by_var = {(i, j) for j, checks in enumerate(self.var_adj) for i in checks}
        if by_check != by_var:
            raise ValueError(
                "Check and variable adjacency lists are not transposes of each other."
            )
        return self

    def model_post_init(self, __context: object) -> None:
        """Build the edge index."""
        edge_check = [
            i for i, variables in enumerate(self.check_adj) for _ in variables
        ]
        edge_var = [j for variables in self.check_adj for j in variables]
        self._edge_check = np.array(edge_check, dtype=np.int64)
        self._edge_var = np.array(edge_var, dtype=np.int64)
        offsets = np.cumsum([0] + [len(variables) for variables in self.check_adj])
        self._check_edges = [
            np.arange(offsets[i], offsets[i + 1]) for i in range(self.m)
        ]
        var_edges: list[list[int]] = [[] for _ in range(self.n)]
        for edge, variable in enumerate(edge_var):
            var_edges[variable].append(edge)
        self._var_edges = [np.array(edges, dtype=np.int64) for edges in var_edges]

    @classmethod
    def from_matrix(cls, matrix: np.ndarray | list[list[int]]) -> "TannerGraph":
        """Build the graph of a dense 0/1 parity-check matrix."""
        dense = np.asarray(matrix, dtype=np.uint8)
        if dense.ndim != 2 or not np.isin(dense, (0, 1)).all():
            raise ValueError("Parity-check matrix must be a 2D array of bits.")
        m, n = dense.shape
        return cls(
            n=n,
            m=m,
            check_adj=tuple(
                tuple(int(j) for j in np.flatnonzero(dense[i])) for i in range(m)
            ),
            var_adj=tuple(
                tuple(int(i) for i in np.flatnonzero(dense[:, j])) for j in range(n)
            ),
        )

    @property
    def num_edges(self) -> int:
        """Number of edges |E|."""
        return int(self._edge_var.size)

    @property
    def edge_check(self) -> np.ndarray:
        """Check node of every edge."""
        return self._edge_check

    @property
    def edge_var(self) -> np.ndarray:
        """Variable node of every edge."""
        return self._edge_var

    def check_edges(self, check: int) -> np.ndarray:
        """Edge ids of ``check`` in increasing variable order."""
        return self._check_edges[check]

    def var_edges(self, variable: int) -> np.ndarray:
        """Edge ids of ``variable`` in increasing check order."""
        return self._var_edges[variable]

    def padded_check_edges(self) -> np.ndarray:
        """(m, max check degree) edge ids, padded with the sentinel ``num_edges``."""
        return _pad(self._check_edges, self.num_edges)

    def padded_var_edges(self) -> np.ndarray:
        """(n, max variable degree) edge ids, padded with the sentinel ``num_edges``."""
        return _pad(self._var_edges, self.num_edges)

    def to_matrix(self) -> np.ndarray:
        """Dense (m, n) parity-check matrix."""
        matrix = np.zeros((self.m, self.n), dtype=np.uint8)
        matrix[self._edge_check, self._edge_var] = 1
        return matrix

    def variable_degrees(self) -> list[int]:
        """Degree of every variable node."""
        return [len(checks) for checks in self.var_adj]

    def check_degrees(self) -> list[int]:
        """Degree of every check node."""
        return [len(variables) for variables in self.check_adj]


def _sorted_within(indices: tuple[int, ...], limit: int) -> bool:
    """Strictly increasing indices in 0..limit-1."""
    return list(indices) == sorted(set(indices)) and all(
        0 <= index < limit for index in indices
    )


def _pad(groups: list[np.ndarray], sentinel: int) -> np.ndarray:
    width = max((group.size for group in groups), default=0)
    padded = np.full((len(groups), max(width, 1)), sentinel, dtype=np.int64)
    for row, group in enumerate(groups):
        padded[row, : group.size] = group
    return padded


class AlistParser:
    """Parser for the alist sparse matrix format.

    The format is: ``n m``; ``max_col_degree max_row_degree``; n column degrees; m row degrees; n lines with the
    one-based checks of every variable; m lines with the one-based variables of every check. Zero entries are padding
    and may be present or absent.

    """

    def __init__(self) -> None:
        """Initialize the parser."""
        self.logger = structlog.getLogger(self.__class__.__name__)

    def parse(self, text: str) -> TannerGraph:
        """Parse alist text into a Tanner graph.

        :param text: content of an alist file
        :return: the validated Tanner graph

        """
        lines = self._lines(text)
        last_line = len(text.splitlines())

        def take(what: str) -> tuple[int, list[int]]:
            try:
                return next(lines)
            except StopIteration:
                raise AlistParseError(
                    f"Unexpected end of input while reading {what}.", last_line + 1
                ) from None

        number, header = take("the dimensions")
        if len(header) != 2 or min(header) < 1:
            raise AlistParseError("Expected two positive integers 'n m'.", number)
        n, m = header

        number, max_degrees = take("the maximum degrees")
        if len(max_degrees) != 2 or min(max_degrees) < 0:
            raise AlistParseError(
                "Expected two non-negative integers 'max_col_degree max_row_degree'.",
                number,
            )
        max_col_degree, max_row_degree = max_degrees

        col_line, col_degrees = take("the column degrees")
        self._check_degrees(col_degrees, n, max_col_degree, m, "column", col_line)
        row_line, row_degrees = take("the row degrees")
        self._check_degrees(row_degrees, m, max_row_degree, n, "row", row_line)
        if sum(col_degrees) != sum(row_degrees):
            raise AlistParseError(
                f"Column degrees sum to {sum(col_degrees)} "
                f"but row degrees sum to {sum(row_degrees)}.",
                row_line,
            )

        var_adj = []
        for variable in range(n):
            number, entries = take(f"the checks of variable {variable + 1}")
            owner = f"variable {variable + 1}"
            var_adj.append(
                self._indices(entries, col_degrees[variable], m, owner, number)
            )

        by_var: list[set[int]] = [set() for _ in range(m)]
        for variable, checks in enumerate(var_adj):
            for check in checks:
                by_var[check].add(variable)

        check_adj = []
        for check in range(m):
            number, entries = take(f"the variables of check {check + 1}")
            owner = f"check {check + 1}"
            variables = self._indices(entries, row_degrees[check], n, owner, number)
            if set(variables) != by_var[check]:
                raise AlistParseError(
                    f"Check {check + 1} lists variables {[v + 1 for v in variables]} "
                    "but the variable block connects it to "
                    f"{sorted(v + 1 for v in by_var[check])}.",
                    number,
                )
            check_adj.append(variables)

        for number, _ in lines:
            raise AlistParseError(
                "Unexpected trailing content after the check block.", number
            )

        graph = TannerGraph(
            n=n, m=m, check_adj=tuple(check_adj), var_adj=tuple(var_adj)
        )
        self.logger.debug("Parsed alist.", n=n, m=m, edges=graph.num_edges)
        return graph

    @staticmethod
    def _lines(text: str) -> Iterator[tuple[int, list[int]]]:
        for number, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                yield number, [int(token) for token in line.split()]
            except ValueError:
                raise AlistParseError(
                    f"Non-integer token in {line.strip()!r}.", number
                ) from None

    @staticmethod
    def _check_degrees(
        degrees: list[int], count: int, maximum: int, limit: int, kind: str, number: int
    ) -> None:
        if len(degrees) != count:
            raise AlistParseError(
                f"Expected {count} {kind} degrees, found {len(degrees)}.", number
            )
        if any(not 0 <= degree <= min(maximum, limit) for degree in degrees):
            raise AlistParseError(
                f"A {kind} degree is negative or exceeds "
                f"its declared maximum {maximum}.",
                number,
            )

    @staticmethod
    def _indices(
        entries: list[int], degree: int, limit: int, owner: str, number: int
    ) -> tuple[int, ...]:
        indices = [entry for entry in entries if entry != 0]
        if len(indices) != degree:
            raise AlistParseError(
                f"{owner.capitalize()} lists {len(indices)} entries, "
                f"expected {degree}.",
                number,
            )
        if any(not 1 <= index <= limit for index in indices):
            raise AlistParseError(
                f"{owner.capitalize()} has an index outside 1..{limit}.", number
            )
        if len(set(indices)) != len(indices):
            raise AlistParseError(f"{owner.capitalize()} repeats an index.", number)
        return tuple(sorted(index - 1 for index in indices))


def parse_alist(text: str) -> TannerGraph:
    """Parse alist text; see :class:`AlistParser`."""
    return AlistParser().parse(text)


def load_alist(path: Path) -> TannerGraph:
    """Read and parse an alist file."""
    return parse_alist(Path(path).read_text(encoding="utf-8"))


def serialize_alist(graph: TannerGraph) -> str:
    """Write ``graph`` in zero-padded alist format."""
    col_degrees = graph.variable_degrees()
    row_degrees = graph.check_degrees()
    max_col, max_row = max(col_degrees), max(row_degrees)

    def padded(indices: tuple[int, ...], width: int) -> str:
        entries = [index + 1 for index in indices] + [0] * (width - len(indices))
        return " ".join(str(entry) for entry in entries)

    lines = [
        f"{graph.n} {graph.m}",
        f"{max_col} {max_row}",
        " ".join(str(degree) for degree in col_degrees),
        " ".join(str(degree) for degree in row_degrees),
    ]
    lines += [padded(checks, max_col) for checks in graph.var_adj]
    lines += [padded(variables, max_row) for variables in graph.check_adj]
    return "\n".join(lines) + "\n"


def syndrome(graph: TannerGraph, x: np.ndarray | list[int]) -> np.ndarray:
    """Return H x^T over GF(2).

    :param graph: Tanner graph of H
    :param x: word of n bits
    :return: m syndrome bits

    """
    bits = np.asarray(x)
    if bits.shape != (graph.n,):
        raise ValueError(
            f"Expected a word of length {graph.n}, got shape {bits.shape}."
        )
    if not np.isin(bits, (0, 1)).all():
        raise ValueError("Word must contain only bits.")
    counts = np.bincount(
        graph.edge_check, weights=bits[graph.edge_var].astype(float), minlength=graph.m
    )
    return counts.astype(np.int64) % 2


def row_reduce(matrix: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Bring a binary matrix to reduced row echelon form over GF(2).

    :param matrix: (m, n) 0/1 matrix
    :return: the r non-zero rows of the reduced matrix and the pivot column of each row

    """
    work = np.array(matrix, dtype=np.uint8) % 2
    rows, cols = work.shape
    pivots: list[int] = []
    row = 0
    for col in range(cols):
        if row == rows:
            break
        candidates = np.flatnonzero(work[row:, col])
        if candidates.size == 0:
            continue
        pivot = row + int(candidates[0])
        if pivot != row:
            work[[row, pivot]] = work[[pivot, row]]
        others = work[:, col].astype(bool)
        others[row] = False
        work[others] ^= work[row]
        pivots.append(col)
        row += 1
    return work[:row], pivots


class SystematicEncoder(BaseModel):
    """Systematic encoder derived from a parity-check matrix.

    The message occupies the ``info_positions``; the bits at ``parity_positions`` (the pivot columns of the
    reduced H) follow from ``parity_matrix``.

    :param BaseModel: Pydantic base model

    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    n: int
    info_positions: tuple[int, ...]
    parity_positions: tuple[int, ...]
    parity_matrix: np.ndarray
    generator: np.ndarray

    @property
    def k(self) -> int:
        """Message length k = n - rank(H)."""
        return len(self.info_positions)

    @property
    def rate(self) -> float:
        """Code rate k / n."""
        return self.k / self.n

    @property
    def permutation(self) -> tuple[int, ...]:
        """Column permutation bringing H to systematic form: parity positions first."""
        return self.parity_positions + self.info_positions

    def encode(self, message: np.ndarray | list[int]) -> np.ndarray:
        """Encode k message bits into an n-bit codeword; see :func:`encode`."""
        bits = np.asarray(message, dtype=np.int64).reshape(-1)
        if bits.size != self.k:
            raise ValueError(f"Expected a message of length {self.k}, got {bits.size}.")
        if not np.isin(bits, (0, 1)).all():
            raise ValueError("Message must contain only bits.")
        codeword = np.zeros(self.n, dtype=np.int64)
        codeword[list(self.info_positions)] = bits
        if self.parity_positions:
            parity = self.parity_matrix.astype(np.int64) @ bits
            codeword[list(self.parity_positions)] = parity % 2
        return codeword

    def random_codeword(self, rng: np.random.Generator) -> np.ndarray:
        """Encode a uniformly random message."""
        return self.encode(rng.integers(0, 2, size=self.k))


def build_encoder(graph: TannerGraph) -> SystematicEncoder:
    """Derive a systematic encoder for the code of ``graph`` by GF(2) elimination with column pivoting."""
    reduced, pivots = row_reduce(graph.to_matrix())
    free = [col for col in range(graph.n) if col not in set(pivots)]
    parity_matrix = (
        reduced[:, free] if free else np.zeros((len(pivots), 0), dtype=np.uint8)
    )
    encoder = SystematicEncoder(
        n=graph.n,
        info_positions=tuple(free),
        parity_positions=tuple(pivots),
        parity_matrix=parity_matrix,
        generator=np.zeros((len(free), graph.n), dtype=np.uint8),
    )
    generator = np.array(
        [encoder.encode(row) for row in np.eye(len(free), dtype=np.int64)],
        dtype=np.uint8,
    )
    structlog.getLogger("Encoder").info(
        "Built systematic encoder.", n=graph.n, rank=len(pivots), k=len(free)
    )
    return encoder.model_copy(
        update={"generator": generator.reshape(len(free), graph.n)}
    )


def encode(encoder: SystematicEncoder, message: np.ndarray | list[int]) -> np.ndarray:
    """Encode a message; every result satisfies H c^T = 0 over GF(2).

    :param encoder: systematic encoder
    :param message: k message bits
    :return: n-bit codeword

    """
    return encoder.encode(message)
