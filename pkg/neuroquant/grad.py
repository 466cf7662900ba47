# SPDX-FileCopyrightText: 2024 The neuroquant contributors
#
# SPDX-License-Identifier: MPL-2.0
"""Reverse-mode automatic differentiation over scalar operations.

Every primitive works on plain floats as well as on taped variables. With plain floats it simply evaluates; with a
:class:`Var` it also appends a node to the variable's :class:`Tape`. Because both paths call the same ``math``
functions in the same order, a taped evaluation produces bit-identical values to an untaped one.

"""
import math
from collections.abc import Callable, Sequence

import numpy as np

ATANH_LIMIT: float = 1.0 - 1e-12  # tanh^-1 input is clipped to +-ATANH_LIMIT

LEAF_OPCODES = frozenset({"leaf", "const"})


class TapeError(ValueError):
    """Raised on contract violations, such as mixing variables from different tapes."""


class Tape:
    """Append-only record of scalar operations.

    Nodes are stored as parallel lists indexed by node id. Every operand of a node has a smaller id than the node
    itself, so the list order is a topological order.

    """

    def __init__(self) -> None:
        """Initialize an empty tape."""
        self.opcodes: list[str] = []
        self.operands: list[tuple[int, ...]] = []
        self.values: list[float] = []
        self.aux: list[tuple[float, ...] | None] = []
        self.leaves: list[int] = []
        self.adjoints: list[float] = []
        # Per-tape registry, e.g. quantizer parameters that must be shared by every symbol.
        self.registry: dict[int, object] = {}

    def __len__(self) -> int:
        """Return the number of recorded nodes."""
        return len(self.values)

    def variable(self, value: float) -> "Var":
        """Register a differentiable leaf.

        :param value: forward value of the leaf
        :return: the leaf variable

        """
        var = self.push("leaf", (), float(value))
        self.leaves.append(var.index)
        return var

    def constant(self, value: float) -> "Var":
        """Register a constant; its adjoint is accumulated but never reported."""
        return self.push("const", (), float(value))

    def lift(self, value: "Var | float") -> "Var":
        """Return ``value`` as a variable on this tape, registering floats as constants."""
        if isinstance(value, Var):
            if value.tape is not self:
                raise TapeError("Variable belongs to a different tape.")
            return value
        return self.constant(value)

    def push(
        self,
        opcode: str,
        operands: tuple[int, ...],
        value: float,
        aux: tuple[float, ...] | None = None,
    ) -> "Var":
        """Append a node and return the variable pointing at it."""
        self.opcodes.append(opcode)
        self.operands.append(operands)
        self.values.append(value)
        self.aux.append(aux)
        return Var(self, len(self.values) - 1, value)

    def gradient(self, var: "Var") -> float:
        """Adjoint of ``var`` from the most recent backward pass."""
        if var.tape is not self:
            raise TapeError("Variable belongs to a different tape.")
        if not self.adjoints:
            return 0.0
        return self.adjoints[var.index]


class Var:
    """A scalar on a tape: node index plus cached forward value."""

    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: Tape, index: int, value: float) -> None:
        """Initialize a variable; use :meth:`Tape.variable` rather than calling this directly."""
        self.tape = tape
        self.index = index
        self.value = value

    def __repr__(self) -> str:
        """Show index and value."""
        return f"Var(index={self.index}, value={self.value!r})"

    def __add__(self, other: "Var | float") -> "Var":
        """Record the operator on the tape."""
        return add(self, other)  # type: ignore[return-value]

    def __radd__(self, other: float) -> "Var":
        """Record the operator on the tape."""
        return add(other, self)  # type: ignore[return-value]

    def __sub__(self, other: "Var | float") -> "Var":
        """Record the operator on the tape."""
        return sub(self, other)  # type: ignore[return-value]

    def __rsub__(self, other: float) -> "Var":
        """Record the operator on the tape."""
        return sub(other, self)  # type: ignore[return-value]

    def __mul__(self, other: "Var | float") -> "Var":
        """Record the operator on the tape."""
        return mul(self, other)  # type: ignore[return-value]

    def __rmul__(self, other: float) -> "Var":
        """Record the operator on the tape."""
        return mul(other, self)  # type: ignore[return-value]

    def __truediv__(self, other: "Var | float") -> "Var":
        """Record the operator on the tape."""
        return div(self, other)  # type: ignore[return-value]

    def __rtruediv__(self, other: float) -> "Var":
        """Record the operator on the tape."""
        return div(other, self)  # type: ignore[return-value]

    def __neg__(self) -> "Var":
        """Record the operator on the tape."""
        return neg(self)  # type: ignore[return-value]


Scalar = Var | float


def value_of(x: Scalar) -> float:
    """Forward value of a float or variable."""
    return x.value if isinstance(x, Var) else float(x)


def _tape_of(*args: Scalar) -> Tape | None:
    tape = None
    for arg in args:
        if isinstance(arg, Var):
            if tape is None:
                tape = arg.tape
            elif arg.tape is not tape:
                raise TapeError("Cannot combine variables from different tapes.")
    return tape


def _record(
    opcode: str, value: float, *args: Scalar, aux: tuple[float, ...] | None = None
) -> Scalar:
    tape = _tape_of(*args)
    if tape is None:
        return value
    operands = tuple(tape.lift(arg).index for arg in args)
    return tape.push(opcode, operands, value, aux)


def _sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def add(a: Scalar, b: Scalar) -> Scalar:
    """Return a + b."""
    return _record("add", value_of(a) + value_of(b), a, b)


def sub(a: Scalar, b: Scalar) -> Scalar:
    """Return a - b."""
    return _record("sub", value_of(a) - value_of(b), a, b)


def mul(a: Scalar, b: Scalar) -> Scalar:
    """Return a * b."""
    return _record("mul", value_of(a) * value_of(b), a, b)


def div(a: Scalar, b: Scalar) -> Scalar:
    """Return a / b."""
    return _record("div", value_of(a) / value_of(b), a, b)


def neg(a: Scalar) -> Scalar:
    """Return -a."""
    return _record("neg", -value_of(a), a)


def square(a: Scalar) -> Scalar:
    """Return a * a."""
    v = value_of(a)
    return _record("square", v * v, a)


def exp(a: Scalar) -> Scalar:
    """Return e ** a."""
    return _record("exp", math.exp(value_of(a)), a)


def tanh(a: Scalar) -> Scalar:
    """Return tanh(a)."""
    return _record("tanh", math.tanh(value_of(a)), a)


def atanh(a: Scalar) -> Scalar:
    """Return tanh^-1(a) with the input clipped to [-ATANH_LIMIT, ATANH_LIMIT]."""
    v = min(max(value_of(a), -ATANH_LIMIT), ATANH_LIMIT)
    return _record("atanh", math.atanh(v), a)


def relu(a: Scalar) -> Scalar:
    """Return max(0, a)."""
    v = value_of(a)
    return _record("relu", v if v > 0.0 else 0.0, a)


def sigmoid(a: Scalar) -> Scalar:
    """Return 1 / (1 + e ** -a)."""
    return _record("sigmoid", _sigmoid(value_of(a)), a)


def clip(a: Scalar, low: float, high: float) -> Scalar:
    """Clamp ``a`` into [low, high]; the derivative is zero outside the interval."""
    v = min(max(value_of(a), low), high)
    return _record("clip", v, a, aux=(low, high))


def _atanh_partial(
    _out: float, args: list[float], _aux: tuple[float, ...] | None
) -> tuple[float, ...]:
    x = args[0]
    if abs(x) > ATANH_LIMIT:
        return (0.0,)
    return (1.0 / (1.0 - x * x),)


def _clip_partial(
    _out: float, args: list[float], aux: tuple[float, ...] | None
) -> tuple[float, ...]:
    low, high = aux  # type: ignore[misc]
    return (1.0 if low <= args[0] <= high else 0.0,)


AdjointRule = Callable[
    [float, list[float], tuple[float, ...] | None], tuple[float, ...]
]

# Local partial derivatives of each opcode given (output value, operand values, aux).
ADJOINT_RULES: dict[str, AdjointRule] = {
    "add": lambda out, args, aux: (1.0, 1.0),
    "sub": lambda out, args, aux: (1.0, -1.0),
    "mul": lambda out, args, aux: (args[1], args[0]),
    "div": lambda out, args, aux: (1.0 / args[1], -out / args[1]),
    "neg": lambda out, args, aux: (-1.0,),
    "square": lambda out, args, aux: (2.0 * args[0],),
    "exp": lambda out, args, aux: (out,),
    "tanh": lambda out, args, aux: (1.0 - out * out,),
    "atanh": _atanh_partial,
    "relu": lambda out, args, aux: (1.0 if args[0] > 0.0 else 0.0,),
    "sigmoid": lambda out, args, aux: (out * (1.0 - out),),
    "clip": _clip_partial,
}


def backward(tape: Tape, output: Var) -> dict[int, float]:
    """Run the reverse sweep from a scalar output.

    Nodes are visited in strictly decreasing index order, so every adjoint is complete before it is read.

    :param tape: tape holding the forward computation
    :param output: scalar output variable
    :return: mapping from leaf node index to the partial derivative of the output with respect to that leaf

    """
    if not isinstance(output, Var):
        raise TapeError(
            f"Backward needs a scalar taped output, got {type(output).__name__}."
        )
    if output.tape is not tape:
        raise TapeError("Output variable belongs to a different tape.")

    adjoints = [0.0] * len(tape)
    adjoints[output.index] = 1.0
    values = tape.values
    for index in range(output.index, -1, -1):
        adjoint = adjoints[index]
        if adjoint == 0.0:
            continue
        opcode = tape.opcodes[index]
        if opcode in LEAF_OPCODES:
            continue
        operands = tape.operands[index]
        partials = ADJOINT_RULES[opcode](
            values[index], [values[i] for i in operands], tape.aux[index]
        )
        for operand, partial in zip(operands, partials):
            adjoints[operand] += adjoint * partial

    tape.adjoints = adjoints
    return {leaf: adjoints[leaf] for leaf in tape.leaves}


def gradient(
    f: Callable[[list[Var]], Scalar], x: Sequence[float]
) -> tuple[float, np.ndarray]:
    """Evaluate ``f`` at ``x`` on a fresh tape and return its value and gradient.

    Functions that do not depend on their inputs may return a plain float; their gradient is zero.

    """
    tape = Tape()
    leaves = [tape.variable(xi) for xi in x]
    out = f(leaves)
    if not isinstance(out, Var):
        return float(out), np.zeros(len(leaves))
    adjoints = backward(tape, out)
    return out.value, np.array([adjoints[leaf.index] for leaf in leaves])


def grad_check(
    f: Callable[[list], Scalar], x: Sequence[float], h: float = 1e-6
) -> float:
    """Compare the taped gradient of ``f`` against central finite differences.

    :param f: scalar function of a list of scalars, written with the primitives of this module
    :param x: evaluation point
    :param h: finite difference step
    :return: max over coordinates of |analytic - numeric| / max(1, |analytic|); NaN if either side is NaN

    """
    point = [float(xi) for xi in x]
    _, analytic = gradient(f, point)
    numeric = np.empty(len(point))
    for i in range(len(point)):
        plus = list(point)
        minus = list(point)
        plus[i] += h
        minus[i] -= h
        numeric[i] = (value_of(f(plus)) - value_of(f(minus))) / (2.0 * h)
    if len(point) == 0:
        return 0.0
    errors = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(np.max(errors))
