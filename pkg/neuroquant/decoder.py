# SPDX-FileCopyrightText: 2024 The neuroquant contributors
#
# SPDX-License-Identifier: MPL-2.0
"""Log-domain sum-product decoding.

Decoding uses a flooding schedule with a fixed number of iterations. Two implementations share the same
semantics:

- a scalar implementation written with the primitives of :mod:`neuroquant.grad`, which can be recorded on a tape;
- :class:`UnrolledDecoder`, which runs on numpy arrays of shape (frames, edges), keeps every intermediate of the
  forward pass and computes the gradient with respect to the input LLRs in reverse order.

Positive LLRs favour bit 0. The soft output is sigmoid(-marginal), an estimate of the bit value itself.

"""
from enum import Enum

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit

from neuroquant import grad
from neuroquant.codes import TannerGraph
from neuroquant.grad import ATANH_LIMIT, Scalar, Tape

DEFAULT_CLIP: float = 30.0  # Bound on variable-to-check messages, in LLR units


class OutputMode(Enum):
    """Decoder output.

    :param Enum: Build-in python Enum class.

    """

    SIGMOID = "sigmoid"
    HARD = "hard"


class DecoderConfig(BaseModel):
    """Sum-product decoder settings.

    :param BaseModel: Pydantic base model

    """

    model_config = ConfigDict(frozen=True)

    iterations: int = Field(20, ge=1, description="Number of flooding iterations")
    clip: float = Field(
        DEFAULT_CLIP, gt=0.0, description="Variable-to-check message bound"
    )
    output: OutputMode = Field(
        OutputMode.SIGMOID, description="Sigmoid soft output or hard bits"
    )
    early_exit: bool = Field(
        False,
        description="Stop once every frame satisfies all checks (hard output only)",
    )


class MessageState(BaseModel):
    """Messages after the last iteration, one row per frame.

    :param BaseModel: Pydantic base model

    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    var_to_check: np.ndarray
    check_to_var: np.ndarray
    llr: np.ndarray
    iterations: int = Field(..., ge=0, description="Iterations actually run")


def variable_update(
    llr: Scalar, incoming: list[Scalar], clip: float = DEFAULT_CLIP
) -> Scalar:
    """Variable-to-check message: channel LLR plus the other incoming check messages, clipped to +-clip."""
    total = llr
    for message in incoming:
        total = total + message
    return grad.clip(total, -clip, clip)


def check_update(incoming: list[Scalar]) -> Scalar:
    """Check-to-variable message 2 tanh^-1(prod tanh(beta / 2)) over the other incoming messages."""
    product: Scalar = 1.0
    for message in incoming:
        product = product * grad.tanh(message * 0.5)
    return grad.atanh(product) * 2.0


def hard_decision(soft: np.ndarray | list[float]) -> np.ndarray:
    """Bit 1 where the soft estimate exceeds 0.5, else bit 0."""
    return (np.asarray(soft, dtype=float) > 0.5).astype(np.int64)


def _decode_scalar(
    graph: TannerGraph, llr: list[Scalar], config: DecoderConfig
) -> list[Scalar]:
    var_edges = [graph.var_edges(j).tolist() for j in range(graph.n)]
    check_edges = [graph.check_edges(i).tolist() for i in range(graph.m)]
    check_to_var: list[Scalar] = [0.0] * graph.num_edges
    var_to_check: list[Scalar] = [0.0] * graph.num_edges

    for _ in range(config.iterations):
        for variable, edges in enumerate(var_edges):
            for edge in edges:
                others = [check_to_var[other] for other in edges if other != edge]
                var_to_check[edge] = variable_update(llr[variable], others, config.clip)
        for edges in check_edges:
            updated = {
                edge: check_update(
                    [var_to_check[other] for other in edges if other != edge]
                )
                for edge in edges
            }
            for edge, message in updated.items():
                check_to_var[edge] = message

    marginals = []
    for variable, edges in enumerate(var_edges):
        total = llr[variable]
        for edge in edges:
            total = total + check_to_var[edge]
        marginals.append(total)

    if config.output is OutputMode.SIGMOID:
        return [grad.sigmoid(-total) for total in marginals]
    return [0 if grad.value_of(total) >= 0.0 else 1 for total in marginals]


class UnrolledDecoder:
    """Vectorized sum-product decoder with a reverse pass.

    Call :meth:`forward` on a (frames, n) LLR array, then :meth:`backward` with the gradient of a loss with respect to
    the sigmoid outputs to obtain the gradient with respect to the LLRs.

    """

    def __init__(self, graph: TannerGraph, config: DecoderConfig) -> None:
        """Initialize the decoder.

        :param graph: Tanner graph of the code
        :param config: decoder settings

        """
        self.logger = structlog.getLogger(self.__class__.__name__)
        self.graph = graph
        self.config = config
        self.num_edges = graph.num_edges
        self.edge_var = graph.edge_var
        self.check_slots = graph.padded_check_edges()
        self.var_slots = graph.padded_var_edges()
        rows, cols = np.nonzero(self.check_slots < self.num_edges)
        self._slot_rows = rows
        self._slot_cols = cols
        self._slot_edges = self.check_slots[rows, cols]
        self._matrix = graph.to_matrix().astype(np.int64)
        self._cache: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self._llr: np.ndarray | None = None
        self._outputs: np.ndarray | None = None

    def _variable_sums(self, messages: np.ndarray) -> np.ndarray:
        padded = np.concatenate([messages, np.zeros((messages.shape[0], 1))], axis=1)
        return padded[:, self.var_slots].sum(axis=2)

    def _to_slots(self, per_edge: np.ndarray, fill: float) -> np.ndarray:
        padding = np.full((per_edge.shape[0], 1), fill)
        padded = np.concatenate([per_edge, padding], axis=1)
        return padded[:, self.check_slots]

    def _from_slots(self, slots: np.ndarray) -> np.ndarray:
        per_edge = np.empty((slots.shape[0], self.num_edges))
        per_edge[:, self._slot_edges] = slots[:, self._slot_rows, self._slot_cols]
        return per_edge

    @staticmethod
    def _exclusive_products(slots: np.ndarray) -> np.ndarray:
        ones = np.ones(slots.shape[:-1] + (1,))
        prefix = np.cumprod(np.concatenate([ones, slots[..., :-1]], axis=-1), axis=-1)
        suffix = np.cumprod(np.concatenate([ones, slots[..., :0:-1]], axis=-1), axis=-1)
        return prefix * suffix[..., ::-1]

    def run(self, llr: np.ndarray, keep_cache: bool = False) -> MessageState:
        """Run the configured number of iterations.

        :param llr: (frames, n) channel LLRs
        :param keep_cache: keep the intermediates needed by :meth:`backward`
        :return: messages after the last iteration

        """
        frames = llr.shape[0]
        check_to_var = np.zeros((frames, self.num_edges))
        var_to_check = np.zeros((frames, self.num_edges))
        cache: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        iterations = 0
        for _ in range(self.config.iterations):
            totals = self._variable_sums(check_to_var)
            raw = llr[:, self.edge_var] + totals[:, self.edge_var] - check_to_var
            var_to_check = np.clip(raw, -self.config.clip, self.config.clip)
            halves = np.tanh(0.5 * var_to_check)
            slots = self._exclusive_products(self._to_slots(halves, 1.0))
            products = self._from_slots(slots)
            bounded = np.clip(products, -ATANH_LIMIT, ATANH_LIMIT)
            check_to_var = 2.0 * np.arctanh(bounded)
            iterations += 1
            if keep_cache:
                cache.append((raw, halves, products))
            elif self.config.early_exit and self._all_satisfied(
                llr + self._variable_sums(check_to_var)
            ):
                self.logger.debug(
                    "All checks satisfied, stopping early.", iterations=iterations
                )
                break
        if keep_cache:
            self._cache = cache
        return MessageState(
            var_to_check=var_to_check,
            check_to_var=check_to_var,
            llr=llr,
            iterations=iterations,
        )

    def _all_satisfied(self, marginals: np.ndarray) -> bool:
        bits = (marginals < 0.0).astype(np.int64)
        return not ((bits @ self._matrix.T) % 2).any()

    def marginals(self, llr: np.ndarray) -> np.ndarray:
        """Final total LLRs for a (frames, n) LLR array; leaves the decoder state untouched."""
        state = self.run(llr)
        return llr + self._variable_sums(state.check_to_var)

    def forward(self, llr: np.ndarray) -> np.ndarray:
        """Sigmoid outputs for a (frames, n) LLR array, keeping what :meth:`backward` needs."""
        state = self.run(llr, keep_cache=True)
        self._llr = llr
        self._outputs = expit(-(llr + self._variable_sums(state.check_to_var)))
        return self._outputs

    def backward(self, output_gradient: np.ndarray) -> np.ndarray:
        """Gradient with respect to the LLRs of the last :meth:`forward` call.

        :param output_gradient: (frames, n) gradient of a loss with respect to the sigmoid outputs
        :return: (frames, n) gradient of that loss with respect to the input LLRs

        """
        if self._outputs is None or self._llr is None:
            raise RuntimeError("backward called before forward.")
        outputs = self._outputs
        marginal_gradient = -output_gradient * outputs * (1.0 - outputs)
        llr_gradient = marginal_gradient.copy()
        message_gradient = marginal_gradient[:, self.edge_var]

        for raw, halves, products in reversed(self._cache):
            inside = np.abs(products) <= ATANH_LIMIT
            product_gradient = np.where(
                inside, message_gradient * 2.0 / (1.0 - products * products), 0.0
            )

            half_slots = self._to_slots(halves, 1.0)
            gradient_slots = self._to_slots(product_gradient, 0.0)
            half_gradient_slots = np.zeros_like(half_slots)
            for slot in range(half_slots.shape[-1]):
                without = half_slots.copy()
                without[..., slot] = 1.0
                pairs = self._exclusive_products(without)
                pairs[..., slot] = 0.0
                half_gradient_slots += gradient_slots[..., slot : slot + 1] * pairs
            half_gradient = self._from_slots(half_gradient_slots)

            clipped = np.abs(raw) <= self.config.clip
            raw_gradient = np.where(
                clipped, half_gradient * 0.5 * (1.0 - halves * halves), 0.0
            )
            per_variable = self._variable_sums(raw_gradient)
            llr_gradient += per_variable
            message_gradient = per_variable[:, self.edge_var] - raw_gradient
        return llr_gradient


def decode(
    graph: TannerGraph,
    llr: np.ndarray | list[Scalar],
    config: DecoderConfig,
    tape: Tape | None = None,
) -> np.ndarray | list[Scalar]:
    """Decode channel LLRs.

    :param graph: Tanner graph of the code
    :param llr: n input LLRs; with ``tape`` these may be taped variables, without it also a (frames, n) array
    :param config: decoder settings
    :param tape: record the computation on this tape (sigmoid output only)
    :return: sigmoid outputs in (0, 1) or hard bits, per bit

    """
    if tape is not None:
        if config.output is not OutputMode.SIGMOID:
            raise ValueError("Only the sigmoid output can be taped.")
        values = list(llr)
        if len(values) != graph.n:
            raise ValueError(f"Expected {graph.n} LLRs, got {len(values)}.")
        if any(np.isnan(grad.value_of(value)) for value in values):
            raise ValueError("LLR input contains NaN.")
        return _decode_scalar(graph, values, config)

    array = np.asarray(llr, dtype=float)
    frames = array.reshape(-1, array.shape[-1]) if array.ndim else array.reshape(1, 1)
    if frames.shape[1] != graph.n:
        raise ValueError(f"Expected {graph.n} LLRs per frame, got {frames.shape[1]}.")
    if np.isnan(frames).any():
        raise ValueError("LLR input contains NaN.")
    marginals = UnrolledDecoder(graph, config).marginals(frames)
    if config.output is OutputMode.SIGMOID:
        result = expit(-marginals)
    else:
        result = (marginals < 0.0).astype(np.int64)
    return result.reshape(array.shape)
