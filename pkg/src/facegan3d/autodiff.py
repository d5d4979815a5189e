"""Tape-based reverse-mode autodiff over numpy arrays.

The operator set is exactly what the UV autoencoder networks need: 3x3
stride-1 convolution, 1x1 projection, 2x2 average pooling, nearest
upsampling, ELU/tanh, fully connected layers, channel concatenation and
an elementwise-mean L1 loss, plus a handful of scalar glue ops. Forward
values are plain ndarrays held by :class:`Tensor`; executing an op with
any input attached to a :class:`Tape` records the op so that
:func:`backward` can replay the tape in reverse.

Training runs in float32; gradient checking should build the graph in
float64 (see :func:`check_gradients`).
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError

ELU_ALPHA = 1.0

_node_ids = itertools.count()


class Tensor:
    """An n-d array node. Data is immutable by convention once it has been
    consumed by an op; parameters are the exception and are updated in place
    by the optimizer, which owns them."""

    __slots__ = ("data", "grad", "requires_grad", "frozen", "name", "node_id", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values in tensor {name or '<anon>'}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.frozen = False
        self.name = name
        self.node_id = next(_node_ids)
        self._tape: Tape | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        """A tape-free view of the same data."""
        return Tensor(self.data, name=self.name)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r}, id={self.node_id})"


class _Record:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered list of recorded ops. Construction order is execution order,
    so the list is topologically sorted by definition."""

    def __init__(self):
        self.records: list[_Record] = []
        self._produced: set[int] = set()
        self.watched: list[Tensor] = []
        self._watched_ids: set[int] = set()

    def leaf(self, data, requires_grad: bool = False, name: str | None = None) -> Tensor:
        t = data if isinstance(data, Tensor) else Tensor(data, requires_grad, name)
        t._tape = self
        return t

    def _note_input(self, t: Tensor):
        if t.requires_grad and t.node_id not in self._produced and t.node_id not in self._watched_ids:
            self._watched_ids.add(t.node_id)
            self.watched.append(t)

    def _add(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, backward_fn):
        for t in inputs:
            self._note_input(t)
        output._tape = self
        self._produced.add(output.node_id)
        self.records.append(_Record(op, inputs, output, backward_fn))

    def is_intermediate(self, t: Tensor) -> bool:
        return t.node_id in self._produced


def _tape_of(inputs: Sequence[Tensor]) -> Tape | None:
    tape = None
    for t in inputs:
        if t._tape is not None:
            if tape is None:
                tape = t._tape
            elif tape is not t._tape:
                raise ValueError("inputs belong to different tapes")
    return tape


def _emit(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray,
          backward_fn: Callable) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.requires_grad = False
    out.frozen = False
    out.name = None
    out.node_id = next(_node_ids)
    out._tape = None
    tape = _tape_of(inputs)
    if tape is not None:
        tape._add(op, inputs, out, backward_fn)
    return out


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Populate gradients of everything reachable from ``loss``.

    Walks the tape once, in reverse. Leaves accumulate into ``.grad`` only
    when ``requires_grad`` is set; intermediate grads are freed as soon as
    their producing record has been processed. Watched parameters that turn
    out to be unreachable get explicit zero grads.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if tape is not loss._tape:
        raise ValueError("loss does not live on this tape")
    loss.grad = np.ones_like(loss.data)
    for rec in reversed(tape.records):
        g = rec.output.grad
        if g is None:
            continue
        needs = tuple(
            t.requires_grad or tape.is_intermediate(t) for t in rec.inputs
        )
        gins = rec.backward_fn(g, needs)
        for t, gi in zip(rec.inputs, gins):
            if gi is None:
                continue
            if t.grad is None:
                t.grad = gi
            else:
                t.grad += gi
        if tape.is_intermediate(rec.output):
            rec.output.grad = None
    targets = tape.watched if params is None else list(params)
    for p in targets:
        if p.requires_grad and p.grad is None:
            p.grad = np.zeros_like(p.data)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, H: int, W: int) -> np.ndarray:
    # xp: (N, C, H+2, W+2) zero-padded input; returns (N, C*9, H*W)
    N, C = xp.shape[:2]
    s = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (N, C, 3, 3, H, W), (s[0], s[1], s[2], s[3], s[2], s[3])
    )
    return view.reshape(N, C * 9, H * W)


def _conv_raw(x: np.ndarray, w2: np.ndarray) -> np.ndarray:
    # x: (N, C1, H, W), w2: (C2, C1*9) -> (N, C2, H, W)
    N, C1, H, W = x.shape
    xp = np.zeros((N, C1, H + 2, W + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    cols = _im2col(xp, H, W)
    out = np.matmul(w2, cols)  # (N, C2, H*W)
    return out.reshape(N, w2.shape[0], H, W)


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """3x3 cross-correlation, stride 1, zero padding 1."""
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be rank 4, got shape {x.shape}")
    N, C1, H, W = x.data.shape
    if w.data.ndim != 4 or w.data.shape[1:] != (C1, 3, 3):
        raise ShapeError(
            f"conv2d weight must be (C2, {C1}, 3, 3) for input channels {C1}, got {w.shape}"
        )
    C2 = w.data.shape[0]
    if b.data.shape != (C2,):
        raise ShapeError(f"conv2d bias must be ({C2},), got {b.shape}")
    w2 = w.data.reshape(C2, C1 * 9)
    out = _conv_raw(x.data, w2)
    out += b.data[:, None, None]

    def bwd(g, needs):
        dx = dw = db = None
        if needs[2]:
            db = g.sum(axis=(0, 2, 3))
        if needs[1]:
            xp = np.zeros((N, C1, H + 2, W + 2), dtype=x.data.dtype)
            xp[:, :, 1:-1, 1:-1] = x.data
            cols = _im2col(xp, H, W)  # (N, C1*9, HW)
            gf = g.reshape(N, C2, H * W).transpose(1, 0, 2).reshape(C2, N * H * W)
            cf = cols.transpose(1, 0, 2).reshape(C1 * 9, N * H * W)
            dw = (gf @ cf.T).reshape(C2, C1, 3, 3)
        if needs[0]:
            wt = np.ascontiguousarray(
                w.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
            ).reshape(C1, C2 * 9)
            dx = _conv_raw(g, wt)
        return dx, dw, db

    return _emit("conv2d", (x, w, b), out, bwd)


def conv1x1(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Pointwise channel projection used by the skip connections."""
    if x.data.ndim != 4:
        raise ShapeError(f"conv1x1 input must be rank 4, got shape {x.shape}")
    N, C1, H, W = x.data.shape
    if w.data.shape != (w.data.shape[0], C1):
        raise ShapeError(f"conv1x1 weight must be (C2, {C1}), got {w.shape}")
    C2 = w.data.shape[0]
    if b.data.shape != (C2,):
        raise ShapeError(f"conv1x1 bias must be ({C2},), got {b.shape}")
    out = np.einsum("oc,nchw->nohw", w.data, x.data, optimize=True)
    out += b.data[:, None, None]

    def bwd(g, needs):
        dx = dw = db = None
        if needs[0]:
            dx = np.einsum("oc,nohw->nchw", w.data, g, optimize=True)
        if needs[1]:
            dw = np.einsum("nohw,nchw->oc", g, x.data, optimize=True)
        if needs[2]:
            db = g.sum(axis=(0, 2, 3))
        return dx, dw, db

    return _emit("conv1x1", (x, w, b), out, bwd)


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2."""
    if x.data.ndim != 4:
        raise ShapeError(f"avg_pool2 input must be rank 4, got shape {x.shape}")
    N, C, H, W = x.data.shape
    if H % 2 or W % 2:
        raise ShapeError(f"avg_pool2 needs even spatial dims, got {H}x{W}")
    out = x.data.reshape(N, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def bwd(g, needs):
        if not needs[0]:
            return (None,)
        quarter = x.data.dtype.type(0.25)
        dx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3)
        dx *= quarter
        return (dx,)

    return _emit("avg_pool2", (x,), out, bwd)


def upsample_nearest2(x: Tensor) -> Tensor:
    """Nearest-neighbor upsampling by 2 in both spatial dims."""
    if x.data.ndim != 4:
        raise ShapeError(f"upsample_nearest2 input must be rank 4, got shape {x.shape}")
    N, C, H, W = x.data.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bwd(g, needs):
        if not needs[0]:
            return (None,)
        return (g.reshape(N, C, H, 2, W, 2).sum(axis=(3, 5)),)

    return _emit("upsample_nearest2", (x,), out, bwd)


def activation(kind: str, x: Tensor) -> Tensor:
    """Elementwise nonlinearity, ``kind`` in {"elu", "tanh"}."""
    if kind == "elu":
        alpha = x.data.dtype.type(ELU_ALPHA)
        neg = np.expm1(np.minimum(x.data, 0))
        neg *= alpha
        out = np.where(x.data >= 0, x.data, neg)

        def bwd(g, needs):
            if not needs[0]:
                return (None,)
            slope = np.where(x.data >= 0, x.data.dtype.type(1.0), out + alpha)
            return (g * slope,)

    elif kind == "tanh":
        out = np.tanh(x.data)

        def bwd(g, needs):
            if not needs[0]:
                return (None,)
            return (g * (x.data.dtype.type(1.0) - out * out),)

    else:
        raise ValueError(f"unknown activation kind {kind!r}")
    return _emit(kind, (x,), out, bwd)


def elu(x: Tensor) -> Tensor:
    return activation("elu", x)


def tanh(x: Tensor) -> Tensor:
    return activation("tanh", x)


def fully_connected(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: (N, D1) @ (D2, D1)^T + (D2,)."""
    if x.data.ndim != 2:
        raise ShapeError(f"fully_connected input must be rank 2, got shape {x.shape}")
    N, D1 = x.data.shape
    if w.data.ndim != 2 or w.data.shape[1] != D1:
        raise ShapeError(f"fully_connected weight must be (D2, {D1}), got {w.shape}")
    D2 = w.data.shape[0]
    if b.data.shape != (D2,):
        raise ShapeError(f"fully_connected bias must be ({D2},), got {b.shape}")
    out = x.data @ w.data.T + b.data

    def bwd(g, needs):
        dx = g @ w.data if needs[0] else None
        dw = g.T @ x.data if needs[1] else None
        db = g.sum(axis=0) if needs[2] else None
        return dx, dw, db

    return _emit("fully_connected", (x, w, b), out, bwd)


def l1_mean(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference over all elements (scalar output).

    The subgradient of |v| at v = 0 is taken to be 0.
    """
    if a.data.shape != b.data.shape:
        raise ShapeError(f"l1_mean shape mismatch: {a.shape} vs {b.shape}")
    d = a.data - b.data
    out = np.asarray(np.mean(np.abs(d), dtype=np.float64), dtype=a.data.dtype)

    def bwd(g, needs):
        s = np.sign(d)
        s *= g * a.data.dtype.type(1.0 / d.size)
        da = s if needs[0] else None
        db = -s if needs[1] else None
        return da, db

    return _emit("l1_mean", (a, b), out, bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = a.data + b.data

    def bwd(g, needs):
        return (g.copy() if needs[0] else None, g.copy() if needs[1] else None)

    return _emit("add", (a, b), out, bwd)


def scale(a: Tensor, c: float) -> Tensor:
    cc = a.data.dtype.type(c)
    out = a.data * cc

    def bwd(g, needs):
        return (g * cc if needs[0] else None,)

    return _emit("scale", (a,), out, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(dtype=np.float64), dtype=a.data.dtype)

    def bwd(g, needs):
        if not needs[0]:
            return (None,)
        return (np.full_like(a.data, g),)

    return _emit("sum_all", (a,), out, bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.data.reshape(shape)

    def bwd(g, needs):
        if not needs[0]:
            return (None,)
        return (g.reshape(a.data.shape),)

    return _emit("reshape", (a,), out, bwd)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two rank-4 tensors along the channel axis."""
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeError("concat_channels needs rank-4 inputs")
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2:] != b.data.shape[2:]:
        raise ShapeError(f"concat_channels mismatch: {a.shape} vs {b.shape}")
    ca = a.data.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def bwd(g, needs):
        da = np.ascontiguousarray(g[:, :ca]) if needs[0] else None
        db = np.ascontiguousarray(g[:, ca:]) if needs[1] else None
        return da, db

    return _emit("concat_channels", (a, b), out, bwd)


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[int, np.ndarray] = {}
        self.v: dict[int, np.ndarray] = {}


def adam_step(params: Sequence[Tensor], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update. Frozen parameters are skipped and
    stay bit-identical; their moment buffers are not advanced either."""
    live = [p for p in params if not p.frozen]
    for p in live:
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {p.name or p.node_id} has no grad")
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"adam_step: non-finite grad for {p.name or p.node_id}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p in live:
        g = p.grad
        m = state.m.get(p.node_id)
        if m is None:
            m = state.m[p.node_id] = np.zeros_like(p.data)
            state.v[p.node_id] = np.zeros_like(p.data)
        v = state.v[p.node_id]
        m *= p.data.dtype.type(b1)
        m += p.data.dtype.type(1.0 - b1) * g
        v *= p.data.dtype.type(b2)
        v += p.data.dtype.type(1.0 - b2) * (g * g)
        mhat = m / p.data.dtype.type(c1)
        vhat = v / p.data.dtype.type(c2)
        p.data -= p.data.dtype.type(lr) * mhat / (np.sqrt(vhat) + p.data.dtype.type(state.eps))


# ---------------------------------------------------------------------------
# gradient checking


def check_gradients(build: Callable[[], tuple[Tape, Tensor]],
                    params: Sequence[Tensor],
                    eps: float = 1e-4,
                    coords_per_param: int | None = None,
                    rng: np.random.Generator | None = None,
                    rel_floor: float = 1e-6,
                    denominator: str = "elementwise") -> float:
    """Compare tape gradients against central finite differences.

    ``build`` must construct a fresh (tape, scalar loss) from the parameters'
    current data every call. Parameters should be float64; finite differences
    at float32 are meaningless. Returns the worst relative error.

    ``denominator`` picks the relative-error scale: "elementwise" divides
    each |analytic - numeric| by that coordinate's own magnitude (floored at
    ``rel_floor``), which is the strict mode for single ops with inputs kept
    away from activation kinks. "tensor" divides by the parameter tensor's
    gradient infinity norm, i.e. vector-relative error: through a deep ELU
    net, central differences that straddle the C1 kink carry O(eps) noise
    commensurate with the tensor's gradient scale, so elementwise division
    on a coordinate far below that scale only measures the noise.
    """
    if denominator not in ("elementwise", "tensor"):
        raise ValueError(f"unknown denominator mode {denominator!r}")
    tape, loss = build()
    zero_grad(params)
    backward(tape, loss, params=params)
    analytic = {p.node_id: np.array(p.grad, copy=True) for p in params}
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        if coords_per_param is None or coords_per_param >= n:
            idxs = range(n)
        else:
            assert rng is not None, "sampled coordinates need an rng"
            idxs = sorted(rng.choice(n, size=coords_per_param, replace=False).tolist())
        aflat = analytic[p.node_id].reshape(-1)
        tensor_scale = float(np.abs(aflat).max()) if aflat.size else 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            lp = float(build()[1].data)
            flat[i] = orig - eps
            lm = float(build()[1].data)
            flat[i] = orig
            num = (lp - lm) / (2.0 * eps)
            a = float(aflat[i])
            if denominator == "elementwise":
                den = max(abs(a), abs(num), rel_floor)
            else:
                den = max(tensor_scale, abs(num), rel_floor)
            worst = max(worst, abs(a - num) / den)
    return worst
