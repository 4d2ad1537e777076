"""Dense float64 matrix autodiff with a dynamic gradient tape.

Values are 2-D (or scalar) numpy arrays. A :class:`GradTape` records every
primitive application in order; replaying the tape in reverse yields exact
analytic gradients, with additive accumulation whenever a value feeds several
consumers. :func:`finite_diff_check` verifies any scalar loss against central
finite differences.

All arithmetic is 64-bit. The model is small enough that a dynamic tape costs
nothing measurable and keeps every backward rule next to its forward rule.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import (
    BatchTooSmallError,
    ContractViolation,
    DegenerateVectorError,
    DimensionError,
    GradientCheckError,
)

_NORM_FLOOR = 1e-150  # below this a vector counts as degenerate
_SIGMOID_MARGIN = 1e-12


def _check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise ContractViolation(f"non-finite values in {what}")
    return arr


class Tensor2:
    """Immutable 2-D matrix of 64-bit reals, row-major, all entries finite."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        if arr.ndim != 2:
            raise DimensionError(f"Tensor2 requires 2-D data, got shape {arr.shape}")
        _check_finite(arr, "Tensor2")
        arr.flags.writeable = False
        self.data = arr

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def __repr__(self):
        return f"Tensor2({self.rows}x{self.cols})"


class Param:
    """Trainable 2-D array plus its SGD momentum buffer."""

    __slots__ = ("value", "velocity", "name")

    def __init__(self, value, name: str = ""):
        self.value = np.ascontiguousarray(np.asarray(value, dtype=np.float64))
        if self.value.ndim != 2:
            raise DimensionError(f"Param requires 2-D data, got {self.value.shape}")
        self.velocity = np.zeros_like(self.value)
        self.name = name


class Var:
    """A value on a tape. ``requires`` marks whether gradients flow into it."""

    __slots__ = ("value", "grad", "requires", "tape")

    def __init__(self, value, tape, requires):
        self.value = value
        self.grad = None
        self.requires = requires
        self.tape = tape

    def detach(self) -> np.ndarray:
        return self.value


class GradTape:
    """Ordered record of primitive applications for one forward pass.

    With ``recording=False`` the tape runs the same forward math but records
    nothing, which is the cheap path for inference and full-dataset passes.
    """

    def __init__(self, recording: bool = True):
        self._records: list[tuple[Var, tuple[Var, ...], Callable]] = []
        self._watched: dict[int, Var] = {}
        self.recording = recording

    def const(self, value) -> Var:
        return Var(np.asarray(value, dtype=np.float64), self, False)

    def watch(self, param: Param) -> Var:
        """Leaf Var for a Param; repeated watches share one Var so gradients
        from every use of the parameter accumulate."""
        var = self._watched.get(id(param))
        if var is None:
            var = Var(param.value, self, True)
            self._watched[id(param)] = var
        return var

    def emit(self, value, parents: tuple[Var, ...], backward: Callable) -> Var:
        out = Var(value, self, self.recording and any(p.requires for p in parents))
        if out.requires:
            self._records.append((out, parents, backward))
        return out

    def gradients(self, loss: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
        """Gradients of a scalar loss for the given leaves (zeros if unused).

        Resets all grad buffers first, so it may be called repeatedly on one
        tape with different losses.
        """
        if np.ndim(loss.value) != 0:
            raise DimensionError("gradients() expects a scalar loss")
        for out, parents, _ in self._records:
            out.grad = None
            for p in parents:
                p.grad = None
        for w in wrt:
            w.grad = None
        loss.grad = np.ones_like(loss.value)
        for out, parents, backward in reversed(self._records):
            if out.grad is None:
                continue
            gs = backward(out.grad)
            for p, g in zip(parents, gs):
                if g is None or not p.requires:
                    continue
                p.grad = g if p.grad is None else p.grad + g
        return [
            w.grad if w.grad is not None else np.zeros_like(w.value) for w in wrt
        ]


def _as_var(tape: GradTape, x) -> Var:
    return x if isinstance(x, Var) else tape.const(x)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    for _ in range(extra):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Var, b: Var) -> Var:
    if a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(
            f"matmul: inner dims differ {a.value.shape} x {b.value.shape}"
        )
    av, bv = a.value, b.value

    def backward(g):
        return (
            g @ bv.T if a.requires else None,
            av.T @ g if b.requires else None,
        )

    return a.tape.emit(av @ bv, (a, b), backward)


def transpose(a: Var) -> Var:
    return a.tape.emit(a.value.T, (a,), lambda g: (g.T,))


def add(a: Var, b: Var) -> Var:
    ash, bsh = np.shape(a.value), np.shape(b.value)

    def backward(g):
        return (_unbroadcast(g, ash), _unbroadcast(g, bsh))

    return a.tape.emit(a.value + b.value, (a, b), backward)


def sub(a: Var, b: Var) -> Var:
    ash, bsh = np.shape(a.value), np.shape(b.value)

    def backward(g):
        return (_unbroadcast(g, ash), _unbroadcast(-g, bsh))

    return a.tape.emit(a.value - b.value, (a, b), backward)


def mul(a: Var, b: Var) -> Var:
    av, bv = a.value, b.value
    ash, bsh = np.shape(av), np.shape(bv)

    def backward(g):
        return (
            _unbroadcast(g * bv, ash) if a.requires else None,
            _unbroadcast(g * av, bsh) if b.requires else None,
        )

    return a.tape.emit(av * bv, (a, b), backward)


def affine(a: Var, scale: float, shift: float = 0.0) -> Var:
    return a.tape.emit(a.value * scale + shift, (a,), lambda g: (g * scale,))


def relu(a: Var) -> Var:
    mask = a.value > 0.0
    return a.tape.emit(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Var) -> Var:
    v = a.value
    s = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                 np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    # saturate strictly inside (0,1) so downstream logs stay finite
    s = np.clip(s, _SIGMOID_MARGIN, 1.0 - _SIGMOID_MARGIN)
    return a.tape.emit(s, (a,), lambda g: (g * s * (1.0 - s),))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return a.tape.emit(out, (a,), lambda g: (g * out,))


def log(a: Var) -> Var:
    if np.any(a.value <= 0.0):
        raise ContractViolation("log of non-positive value")
    av = a.value
    return a.tape.emit(np.log(av), (a,), lambda g: (g / av,))


def xlogx(a: Var) -> Var:
    """x*log(x) with the 0*log(0) := 0 convention (and zero gradient there)."""
    av = a.value
    pos = av > 0.0
    out = np.where(pos, av * np.log(np.where(pos, av, 1.0)), 0.0)
    dv = np.where(pos, np.log(np.where(pos, av, 1.0)) + 1.0, 0.0)
    return a.tape.emit(out, (a,), lambda g: (g * dv,))


def clamp(a: Var, lo: float, hi: float) -> Var:
    inside = (a.value > lo) & (a.value < hi)
    return a.tape.emit(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,))


def gather_rows(a: Var, idx: np.ndarray) -> Var:
    """Pick one column per row: out[i, 0] = a[i, idx[i]]."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != (a.value.shape[0],):
        raise DimensionError("gather_rows: one index per row required")
    rows = np.arange(a.value.shape[0])
    out = a.value[rows, idx][:, None]
    shape = a.value.shape

    def backward(g):
        z = np.zeros(shape)
        np.add.at(z, (rows, idx), g[:, 0])
        return (z,)

    return a.tape.emit(out, (a,), backward)


def sum_all(a: Var) -> Var:
    shape = np.shape(a.value)
    return a.tape.emit(
        np.asarray(a.value.sum()), (a,), lambda g: (np.full(shape, g),)
    )


def mean_rows(a: Var) -> Var:
    """Column means: (B, K) -> (1, K)."""
    b = a.value.shape[0]
    shape = a.value.shape

    def backward(g):
        return (np.broadcast_to(g / b, shape).copy(),)

    return a.tape.emit(a.value.mean(axis=0, keepdims=True), (a,), backward)


def concat_rows(a: Var, b: Var) -> Var:
    if a.value.shape[1] != b.value.shape[1]:
        raise DimensionError("concat_rows: column counts differ")
    na = a.value.shape[0]

    def backward(g):
        return (g[:na], g[na:])

    return a.tape.emit(np.concatenate([a.value, b.value], axis=0), (a, b), backward)


def log_softmax_rows(a: Var) -> Var:
    out = kernels.log_softmax_rows(a.value)

    def backward(g):
        p = np.exp(out)
        return (g - p * g.sum(axis=1, keepdims=True),)

    return a.tape.emit(out, (a,), backward)


def cosine_rows(a: Var, m: np.ndarray) -> Var:
    """Row-by-row cosine similarity against a fixed matrix (no grad into m)."""
    m = np.asarray(m, dtype=np.float64)
    if a.value.shape[1] != m.shape[1]:
        raise DimensionError("cosine_rows: feature dims differ")
    if np.min(kernels.row_norms(a.value)) <= _NORM_FLOOR:
        raise DegenerateVectorError("cosine_rows: zero-norm input row")
    if np.min(kernels.row_norms(m)) <= _NORM_FLOOR:
        raise DegenerateVectorError("cosine_rows: zero-norm reference row")
    out = kernels.cosine_rows(a.value, m)
    av = a.value

    def backward(g):
        return (kernels.cosine_rows_grad(av, m, g),)

    return a.tape.emit(out, (a,), backward)


# ---------------------------------------------------------------------------
# layers backed by the primitives above
# ---------------------------------------------------------------------------

def linear_apply(tape: GradTape, x, weight, bias) -> Var:
    """x @ weight + bias with exact gradients for all three operands."""
    xv = _as_var(tape, x)
    wv = weight if isinstance(weight, Var) else tape.watch(weight) \
        if isinstance(weight, Param) else tape.const(weight)
    out = matmul(xv, wv)
    if bias is not None:
        if isinstance(bias, Var):
            bv = bias
        elif isinstance(bias, Param):
            bv = tape.watch(bias)
        else:
            bv = tape.const(np.reshape(np.asarray(bias, dtype=np.float64), (1, -1)))
        if np.shape(bv.value) != (1, out.value.shape[1]):
            raise DimensionError("linear_apply: bias shape mismatch")
        out = add(out, bv)
    _check_finite(out.value, "linear_apply output")
    return out


class BatchNormState:
    """Per-feature scale/shift plus running statistics."""

    def __init__(self, dim: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Param(np.ones((1, dim)), "bn.gamma")
        self.beta = Param(np.zeros((1, dim)), "bn.beta")
        self.running_mean = np.zeros((1, dim))
        self.running_var = np.ones((1, dim))
        self.eps = eps
        self.momentum = momentum


def batchnorm_apply(tape: GradTape, x, state: BatchNormState, train: bool) -> Var:
    """Batch normalization; training mode updates the running statistics."""
    xv = _as_var(tape, x)
    b, d = xv.value.shape
    if d != state.gamma.value.shape[1]:
        raise DimensionError("batchnorm_apply: feature dim mismatch")
    gamma = tape.watch(state.gamma)
    beta = tape.watch(state.beta)
    if train:
        if b < 2:
            raise BatchTooSmallError("train-mode batch norm needs at least 2 rows")
        y, mean, var = kernels.batchnorm_train(
            xv.value, state.gamma.value.ravel(), state.beta.value.ravel(), state.eps
        )
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mean[None, :]
        state.running_var = (1.0 - m) * state.running_var + m * var[None, :] * (
            b / (b - 1.0)
        )
        gval = state.gamma.value.ravel()
        xval = xv.value
        eps = state.eps

        def backward(g):
            dx, dgamma, dbeta = kernels.batchnorm_train_grad(
                xval, gval, mean, var, eps, g
            )
            return (dx, dgamma[None, :], dbeta[None, :])

        out = tape.emit(y, (xv, gamma, beta), backward)
    else:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = add(xv, tape.const(-state.running_mean))
        xhat = mul(xhat, tape.const(inv))
        out = add(mul(xhat, gamma), beta)
    _check_finite(out.value, "batchnorm_apply output")
    return out


# ---------------------------------------------------------------------------
# array-level operations
# ---------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax of a vector; positive entries summing to one."""
    v = np.asarray(logits, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise DimensionError("softmax expects a non-empty vector")
    _check_finite(v, "softmax input")
    return kernels.softmax_rows(v[None, :])[0]


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two nonzero vectors, in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError("cosine_sim expects two equal-length vectors")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na <= _NORM_FLOOR or nb <= _NORM_FLOOR:
        raise DegenerateVectorError("cosine_sim: zero-norm vector")
    return float(a @ b / (na * nb))


def sgd_step(params, grads, lr: float, momentum: float, velocities):
    """v <- momentum*v + g; p <- p - lr*v. Returns (new_params, new_velocities)."""
    if lr < 0:
        raise ContractViolation("sgd_step: negative learning rate")
    new_p, new_v = [], []
    for p, g, v in zip(params, grads, velocities, strict=True):
        if p.shape != g.shape or p.shape != v.shape:
            raise DimensionError("sgd_step: shape mismatch")
        nv = momentum * v + g
        new_p.append(p - lr * nv)
        new_v.append(nv)
    return new_p, new_v


def finite_diff_check(
    loss_fn: Callable[[GradTape], Var],
    params: Sequence[Param],
    h: float = 1e-5,
    tolerance: float = 1e-4,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` rebuilds the forward pass on the tape it is given, reading the
    current values of ``params`` through ``tape.watch``. Raises
    :class:`GradientCheckError` when the worst relative error exceeds
    ``tolerance`` and :class:`ContractViolation` on a non-finite loss.
    """
    if h <= 0:
        raise ContractViolation("finite_diff_check: h must be positive")

    def eval_loss() -> float:
        val = loss_fn(GradTape()).value
        if not np.isfinite(val):
            raise ContractViolation("finite_diff_check: non-finite loss")
        return float(val)

    tape = GradTape()
    loss = loss_fn(tape)
    if not np.isfinite(loss.value):
        raise ContractViolation("finite_diff_check: non-finite loss")
    analytic = tape.gradients(loss, [tape.watch(p) for p in params])

    worst = 0.0
    for p, a in zip(params, analytic):
        it = np.nditer(p.value, flags=["multi_index"])
        for _ in it:
            ij = it.multi_index
            orig = p.value[ij]
            p.value[ij] = orig + h
            lp = eval_loss()
            p.value[ij] = orig - h
            lm = eval_loss()
            p.value[ij] = orig
            numeric = (lp - lm) / (2.0 * h)
            ana = float(a[ij])
            rel = abs(ana - numeric) / max(1e-8, abs(ana) + abs(numeric))
            worst = max(worst, rel)
    if worst > tolerance:
        raise GradientCheckError(
            f"gradient check failed: max relative error {worst:.3e} > {tolerance:.1e}"
        )
    return worst
