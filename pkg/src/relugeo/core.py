"""Network specification, weights, activations and the weight map.

A network with widths ``d_1, ..., d_{k+1}`` alternates affine maps with a
coordinatewise activation; the last affine map is not followed by an
activation.  Weights are stored per layer as ``(A_i, b_i)`` and flattened
layer by layer (``A_i`` row-major, then ``b_i``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from relugeo import _backend


class Activation(enum.Enum):
    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"

    @classmethod
    def parse(cls, value) -> "Activation":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown activation {value!r}") from None

    @property
    def code(self) -> int:
        return _ACT_CODES[self]


_ACT_CODES = {Activation.RELU: 0, Activation.TANH: 1, Activation.SIGMOID: 2}


class ShapeError(ValueError):
    """Raised when arrays do not match the network specification."""


class KinkError(ValueError):
    """Raised when an analytic ReLU derivative is requested at a kink.

    Attributes
    ----------
    locations : list of (layer, sample, unit)
        Hidden pre-activations that are exactly zero.
    """

    def __init__(self, locations):
        self.locations = list(locations)
        super().__init__(
            f"{len(self.locations)} hidden pre-activation(s) exactly zero, "
            f"first at (layer, sample, unit) = {self.locations[0]}"
        )


@dataclass(frozen=True)
class NetworkSpec:
    """Layer widths ``(d_1, ..., d_{k+1})`` and activation kind."""

    widths: tuple
    activation: Activation = Activation.RELU

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        if min(widths) < 1:
            raise ValueError("all widths must be >= 1")
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "activation", Activation.parse(self.activation))

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    @property
    def p(self) -> int:
        return self.widths[0]

    @property
    def q(self) -> int:
        return self.widths[-1]

    @property
    def hidden_units(self) -> int:
        return sum(self.widths[1:-1])

    @property
    def param_count(self) -> int:
        w = self.widths
        return sum((w[i] + 1) * w[i + 1] for i in range(len(w) - 1))

    def layer_shapes(self):
        w = self.widths
        return [(w[i + 1], w[i]) for i in range(len(w) - 1)]


@dataclass(frozen=True)
class Weights:
    """Per-layer affine parameters ``((A_1, b_1), ..., (A_k, b_k))``."""

    layers: tuple

    def __post_init__(self):
        layers = tuple(
            (np.array(A, dtype=float, ndmin=2), np.array(b, dtype=float, ndmin=1))
            for A, b in self.layers
        )
        for A, b in layers:
            A.setflags(write=False)
            b.setflags(write=False)
            if A.shape[0] != b.shape[0]:
                raise ShapeError(f"A has {A.shape[0]} rows but b has {b.shape[0]} entries")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def zeros(cls, spec: NetworkSpec) -> "Weights":
        return cls(tuple((np.zeros(s), np.zeros(s[0])) for s in spec.layer_shapes()))

    @classmethod
    def from_flat(cls, spec: NetworkSpec, theta) -> "Weights":
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != spec.param_count:
            raise ShapeError(f"expected {spec.param_count} parameters, got {theta.size}")
        layers, pos = [], 0
        for rows, cols in spec.layer_shapes():
            A = theta[pos:pos + rows * cols].reshape(rows, cols)
            pos += rows * cols
            b = theta[pos:pos + rows]
            pos += rows
            layers.append((A, b))
        return cls(tuple(layers))

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.concatenate([A.ravel(), b]) for A, b in self.layers])

    def check(self, spec: NetworkSpec) -> None:
        shapes = spec.layer_shapes()
        if len(shapes) != len(self.layers):
            raise ShapeError(f"spec has {len(shapes)} layers, weights have {len(self.layers)}")
        for i, ((A, b), shape) in enumerate(zip(self.layers, shapes)):
            if A.shape != shape or b.shape != (shape[0],):
                raise ShapeError(
                    f"layer {i + 1}: expected A {shape} and b ({shape[0]},), "
                    f"got A {A.shape} and b {b.shape}"
                )

    def norm(self) -> float:
        return weight_norm(self)


def _as_theta(spec: NetworkSpec, w) -> np.ndarray:
    if isinstance(w, Weights):
        w.check(spec)
        return w.flatten()
    theta = np.asarray(w, dtype=float).ravel()
    if theta.size != spec.param_count:
        raise ShapeError(f"expected {spec.param_count} parameters, got {theta.size}")
    return theta


def _as_samples(spec: NetworkSpec, S) -> np.ndarray:
    S = np.array(S, dtype=float, ndmin=2)
    if S.shape[1] != spec.p:
        raise ShapeError(f"samples have {S.shape[1]} columns, network expects p={spec.p}")
    return S


def sech2(x):
    """Derivative of tanh, stable for large ``|x|``."""
    e = np.exp(-2.0 * np.abs(x))
    return 4.0 * e / (1.0 + e) ** 2


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def activate(kind, x) -> np.ndarray:
    """Apply the activation coordinatewise.

    Examples
    --------
    >>> activate("relu", [-1.0, 2.0, 0.0])
    array([0., 2., 0.])
    """
    kind = Activation.parse(kind)
    x = np.asarray(x, dtype=float)
    if kind is Activation.RELU:
        return np.maximum(x, 0.0)
    if kind is Activation.TANH:
        return np.tanh(x)
    return sigmoid(x)


def activate_deriv(kind, x) -> np.ndarray:
    """Derivative of the activation, with the ReLU derivative at 0 taken as 0."""
    kind = Activation.parse(kind)
    x = np.asarray(x, dtype=float)
    if kind is Activation.RELU:
        return (x > 0).astype(float)
    if kind is Activation.TANH:
        return sech2(x)
    e = np.exp(-np.abs(x))
    return e / (1.0 + e) ** 2


def forward(spec: NetworkSpec, w, s) -> np.ndarray:
    """Evaluate the network at a single input ``s`` (length p)."""
    s = np.asarray(s, dtype=float).ravel()
    if s.size != spec.p:
        raise ShapeError(f"input has length {s.size}, network expects p={spec.p}")
    return weight_map(spec, w, s[None, :])[0]


def weight_map(spec: NetworkSpec, w, S) -> np.ndarray:
    """Stack the network outputs on the rows of ``S`` into an n x q matrix."""
    theta = _as_theta(spec, w)
    S = _as_samples(spec, S)
    return _backend.kernels.forward(theta, np.asarray(spec.widths, dtype=np.intp),
                                    spec.activation.code, S)


def hidden_preactivations(spec: NetworkSpec, w, S) -> list:
    """Pre-activations of each hidden layer, as a list of n x d_l arrays."""
    weights = w if isinstance(w, Weights) else Weights.from_flat(spec, w)
    weights.check(spec)
    H = _as_samples(spec, S)
    out = []
    for A, b in weights.layers[:-1]:
        Z = H @ A.T + b
        out.append(Z)
        H = activate(spec.activation, Z)
    return out


def weight_norm(w) -> float:
    """Euclidean norm of all weights and biases."""
    if isinstance(w, Weights):
        return float(np.sqrt(sum(np.sum(A * A) + np.sum(b * b) for A, b in w.layers)))
    return float(np.linalg.norm(np.asarray(w, dtype=float)))


def jacobian(spec: NetworkSpec, w, S, mode: str = "analytic") -> np.ndarray:
    """Derivative of the vectorized weight map with respect to the flat weights.

    Rows are ordered sample-major (row ``i*q + o`` is output ``o`` at sample
    ``i``); columns follow the flattening order of :class:`Weights`.

    Parameters
    ----------
    mode : {"analytic", "finite_difference"}
        Finite differences are central with step ``1e-6 * (1 + |theta_j|)``.

    Raises
    ------
    KinkError
        In analytic mode for ReLU when a hidden pre-activation is exactly 0.
    """
    theta = _as_theta(spec, w)
    S = _as_samples(spec, S)
    widths = np.asarray(spec.widths, dtype=np.intp)
    if mode == "analytic":
        if spec.activation is Activation.RELU and spec.depth > 1:
            kinks = []
            for layer, Z in enumerate(hidden_preactivations(spec, theta, S), start=1):
                kinks.extend((layer, int(i), int(j)) for i, j in zip(*np.nonzero(Z == 0.0)))
            if kinks:
                raise KinkError(kinks)
        T = np.zeros((S.shape[0], spec.q))
        _, J, _, _ = _backend.kernels.residual_jacobian(
            theta, widths, spec.activation.code, S, T, None, False)
        return J
    if mode == "finite_difference":
        J = np.empty((S.shape[0] * spec.q, theta.size))
        for j in range(theta.size):
            h = 1e-6 * (1.0 + abs(theta[j]))
            tp, tm = theta.copy(), theta.copy()
            tp[j] += h
            tm[j] -= h
            J[:, j] = (weight_map(spec, tp, S) - weight_map(spec, tm, S)).ravel() / (2.0 * h)
        return J
    raise ValueError(f"unknown jacobian mode {mode!r}")
