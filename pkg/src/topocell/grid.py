"""Dense float64 tensors with reverse-mode autodiff and conv primitives.

Everything the W-Net needs and nothing else: elementwise arithmetic, ReLU,
sigmoid, log, abs, clamp, full reductions, a spatial mean, channel concat,
conv2d and its adjoint conv2d_transpose, plus an Adam-style optimizer.

Grids are always float64, C-order, rank <= 4. Gradients are recorded on an
explicit `Tape` (a Wengert list): ops executed while a tape is active append
one node each, and `backward(loss, tape)` replays the list once in reverse.
Creation order is a topological order, so each node is visited exactly once
and a Grid the loss never touched keeps a zero gradient.

conv2d lowers to im2col + one BLAS matmul; conv2d_transpose is its exact
adjoint (same kernel array, first two axes read as in/out instead of
out/in), so <conv2d(x), y> == <x, conv2d_transpose(y)> for zero bias.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

MAX_RANK = 4


class GradientNaNError(RuntimeError):
    """A parameter gradient went non-finite; message names the parameter."""


# ---------------------------------------------------------------------------
# tape machinery

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of primitive ops. Re-entrant context manager."""

    def __init__(self):
        self.nodes: list[Grid] = []
        self._consumed = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"
        return False


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(loss: "Grid", tape: Tape) -> None:
    """Accumulate d(loss)/d(grid) into `.grad` of every Grid on the tape."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape._consumed:
        raise RuntimeError("tape already consumed by a previous backward call")
    tape._consumed = True
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node.grad is None or node._vjp is None:
            continue
        node._vjp(node.grad)


class Grid:
    """float64 tensor, rank <= 4, with an optional gradient accumulator.

    Scalars are stored as shape-(1,) arrays (contiguity normalization
    promotes rank 0), so scalar-valued ops compare sizes, not shapes.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_vjp", "_parents")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _check: bool = True):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        if arr.ndim > MAX_RANK:
            raise ValueError(f"rank {arr.ndim} exceeds maximum {MAX_RANK}")
        if _check and not np.all(np.isfinite(arr)):
            raise ValueError("non-finite values in Grid data")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._vjp = None
        self._parents: tuple[Grid, ...] = ()

    # -- basic interface ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar shape {self.shape}")
        return float(self.data.reshape(()))

    def grad_value(self) -> np.ndarray:
        """Gradient accumulated so far; exactly zero if the loss never saw us."""
        return np.zeros_like(self.data) if self.grad is None else self.grad

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Grid":
        """Same values, no history: gradients never flow through."""
        return Grid(self.data.copy(), _check=False)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Grid(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # -- autodiff plumbing ---------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    @staticmethod
    def _record(out: "Grid", parents, vjp) -> "Grid":
        tape = _active_tape()
        if tape is not None:
            out._parents = tuple(parents)
            out._vjp = vjp
            tape.nodes.append(out)
        return out

    # -- elementwise arithmetic ----------------------------------------------

    def _binary(self, other, fwd, vjp_self, vjp_other):
        if isinstance(other, Grid):
            if other.shape != self.shape:
                raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
            out = Grid(fwd(self.data, other.data), _check=False)

            def vjp(g):
                self._accumulate(vjp_self(g, self.data, other.data))
                other._accumulate(vjp_other(g, self.data, other.data))

            return Grid._record(out, (self, other), vjp)
        if isinstance(other, (int, float)):
            c = float(other)
            out = Grid(fwd(self.data, c), _check=False)

            def vjp(g):
                self._accumulate(vjp_self(g, self.data, c))

            return Grid._record(out, (self,), vjp)
        return NotImplemented

    def __add__(self, other):
        return self._binary(other, lambda a, b: a + b,
                            lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, lambda a, b: a - b,
                            lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, other):
        # scalar - grid
        if not isinstance(other, (int, float)):
            return NotImplemented
        c = float(other)
        out = Grid(c - self.data, _check=False)

        def vjp(g):
            self._accumulate(-g)

        return Grid._record(out, (self,), vjp)

    def __mul__(self, other):
        return self._binary(other, lambda a, b: a * b,
                            lambda g, a, b: g * b, lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __neg__(self):
        out = Grid(-self.data, _check=False)

        def vjp(g):
            self._accumulate(-g)

        return Grid._record(out, (self,), vjp)


# ---------------------------------------------------------------------------
# elementwise functions


def relu(x: Grid) -> Grid:
    out = Grid(np.maximum(x.data, 0.0), _check=False)

    def vjp(g):
        x._accumulate(g * (x.data > 0.0))

    return Grid._record(out, (x,), vjp)


def sigmoid(x: Grid) -> Grid:
    # split by sign so exp never overflows
    d = x.data
    s = np.empty_like(d)
    pos = d >= 0.0
    s[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    s[~pos] = e / (1.0 + e)
    out = Grid(s, _check=False)

    def vjp(g):
        x._accumulate(g * s * (1.0 - s))

    return Grid._record(out, (x,), vjp)


def log(x: Grid) -> Grid:
    if np.any(x.data <= 0.0):
        raise ValueError("log of non-positive value; clamp first")
    out = Grid(np.log(x.data), _check=False)

    def vjp(g):
        x._accumulate(g / x.data)

    return Grid._record(out, (x,), vjp)


def absolute(x: Grid) -> Grid:
    out = Grid(np.abs(x.data), _check=False)

    def vjp(g):
        x._accumulate(g * np.sign(x.data))

    return Grid._record(out, (x,), vjp)


def clamp(x: Grid, lo: float, hi: float) -> Grid:
    out = Grid(np.clip(x.data, lo, hi), _check=False)
    inside = (x.data >= lo) & (x.data <= hi)

    def vjp(g):
        x._accumulate(g * inside)

    return Grid._record(out, (x,), vjp)


# ---------------------------------------------------------------------------
# reductions and shape ops


def grid_sum(x: Grid) -> Grid:
    out = Grid(np.asarray(x.data.sum()), _check=False)

    def vjp(g):
        x._accumulate(np.full_like(x.data, float(np.asarray(g).sum())))

    return Grid._record(out, (x,), vjp)


def mean(x: Grid) -> Grid:
    n = x.data.size
    out = Grid(np.asarray(x.data.mean()), _check=False)

    def vjp(g):
        x._accumulate(np.full_like(x.data, float(np.asarray(g).sum()) / n))

    return Grid._record(out, (x,), vjp)


def mean_hw(x: Grid) -> Grid:
    """(C, H, W) -> (C,) spatial mean, the discriminator's pooling head."""
    if x.data.ndim != 3:
        raise ValueError(f"mean_hw expects (C, H, W), got {x.shape}")
    c, h, w = x.shape
    out = Grid(x.data.mean(axis=(1, 2)), _check=False)

    def vjp(g):
        x._accumulate(np.broadcast_to(g[:, None, None], x.shape) / (h * w))

    return Grid._record(out, (x,), vjp)


def concat_channels(parts: list[Grid]) -> Grid:
    """Concatenate (Ci, H, W) grids along the channel axis."""
    if not parts:
        raise ValueError("concat_channels needs at least one grid")
    hw = parts[0].shape[1:]
    for p in parts:
        if p.data.ndim != 3 or p.shape[1:] != hw:
            raise ValueError(
                f"concat_channels spatial mismatch: {[p.shape for p in parts]}")
    out = Grid(np.concatenate([p.data for p in parts], axis=0), _check=False)
    splits = np.cumsum([p.shape[0] for p in parts])[:-1]

    def vjp(g):
        for p, piece in zip(parts, np.split(g, splits, axis=0)):
            p._accumulate(piece)

    return Grid._record(out, tuple(parts), vjp)


# ---------------------------------------------------------------------------
# convolution


def _pad4(padding):
    """Normalize padding to (top, bottom, left, right)."""
    if isinstance(padding, int):
        if padding < 0:
            raise ValueError("padding must be non-negative")
        return (padding,) * 4
    t, b, l, r = padding
    if min(t, b, l, r) < 0:
        raise ValueError("padding must be non-negative")
    return (t, b, l, r)


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(C, Hp, Wp) padded input -> (C*kh*kw, ho*wo) patch matrix."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (C, ho, wo, kh, kw)
    return win.transpose(0, 3, 4, 1, 2).reshape(xp.shape[0] * kh * kw, ho * wo)


def _col2im(cols: np.ndarray, c: int, kh: int, kw: int, stride: int,
            hp: int, wp: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patches back to a (c, hp, wp) array."""
    out = np.zeros((c, hp, wp))
    colr = cols.reshape(c, kh, kw, ho, wo)
    for di in range(kh):
        for dj in range(kw):
            out[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride] += colr[:, di, dj]
    return out


def conv2d(x: Grid, weight: Grid, bias: Grid | None = None,
           stride: int = 2, padding=1) -> Grid:
    """Cross-correlation of (C, H, W) with (O, C, kh, kw) kernels.

    Output (O, Ho, Wo) with Ho = (H + pt + pb - kh) // stride + 1; the
    window grid must tile exactly (no dangling rows/columns).
    """
    if x.data.ndim != 3 or weight.data.ndim != 4:
        raise ValueError(f"conv2d expects (C,H,W) and (O,C,kh,kw), got {x.shape}, {weight.shape}")
    cin, h, w = x.shape
    o, ck, kh, kw = weight.shape
    if ck != cin:
        raise ValueError(f"conv2d channel mismatch: input {cin} vs kernel {ck} "
                         f"(input {x.shape}, kernel {weight.shape})")
    pt, pb, pl, pr = _pad4(padding)
    hp, wp = h + pt + pb, w + pl + pr
    if (hp - kh) % stride or (wp - kw) % stride:
        raise ValueError(f"conv2d geometry does not tile: input {x.shape}, kernel "
                         f"({kh},{kw}), stride {stride}, padding {(pt, pb, pl, pr)}")
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d output would be empty: input {x.shape}, kernel ({kh},{kw})")

    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr)))
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = weight.data.reshape(o, cin * kh * kw)
    res = (wmat @ cols).reshape(o, ho, wo)
    if bias is not None:
        if bias.shape != (o,):
            raise ValueError(f"bias shape {bias.shape} != ({o},)")
        res = res + bias.data[:, None, None]
    if not np.all(np.isfinite(res)):
        raise ValueError("conv2d produced non-finite values")
    out = Grid(res, _check=False)

    def vjp(g):
        gmat = g.reshape(o, ho * wo)
        weight._accumulate((gmat @ cols.T).reshape(weight.shape))
        if bias is not None:
            bias._accumulate(gmat.sum(axis=1))
        dcols = wmat.T @ gmat
        dxp = _col2im(dcols, cin, kh, kw, stride, hp, wp, ho, wo)
        x._accumulate(dxp[:, pt:hp - pb, pl:wp - pr])

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Grid._record(out, parents, vjp)


def conv2d_transpose(x: Grid, weight: Grid, bias: Grid | None = None,
                     stride: int = 2, padding=1) -> Grid:
    """Adjoint of conv2d: (C, H, W) with (C, O, kh, kw) kernels.

    Output (O, Ho, Wo) with Ho = (H - 1) * stride + kh - pt - pb; stride 2
    with 4x4 kernels and padding 1 exactly doubles the spatial size.
    """
    if x.data.ndim != 3 or weight.data.ndim != 4:
        raise ValueError(f"conv2d_transpose expects (C,H,W) and (C,O,kh,kw), "
                         f"got {x.shape}, {weight.shape}")
    cin, h, w = x.shape
    ck, o, kh, kw = weight.shape
    if ck != cin:
        raise ValueError(f"conv2d_transpose channel mismatch: input {cin} vs kernel {ck} "
                         f"(input {x.shape}, kernel {weight.shape})")
    pt, pb, pl, pr = _pad4(padding)
    hp, wp = (h - 1) * stride + kh, (w - 1) * stride + kw
    ho, wo = hp - pt - pb, wp - pl - pr
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d_transpose output would be empty: input {x.shape}")

    xmat = x.data.reshape(cin, h * w)
    wmat = weight.data.reshape(cin, o * kh * kw)
    prod = wmat.T @ xmat  # (o*kh*kw, h*w)
    full = _col2im(prod, o, kh, kw, stride, hp, wp, h, w)
    res = full[:, pt:hp - pb, pl:wp - pr]
    if bias is not None:
        if bias.shape != (o,):
            raise ValueError(f"bias shape {bias.shape} != ({o},)")
        res = res + bias.data[:, None, None]
    if not np.all(np.isfinite(res)):
        raise ValueError("conv2d_transpose produced non-finite values")
    out = Grid(np.ascontiguousarray(res), _check=False)

    def vjp(g):
        gp = np.pad(g, ((0, 0), (pt, pb), (pl, pr)))
        gcols = _im2col(gp, kh, kw, stride, h, w)  # (o*kh*kw, h*w)
        x._accumulate((wmat @ gcols).reshape(x.shape))
        weight._accumulate((xmat @ gcols.T).reshape(weight.shape))
        if bias is not None:
            bias._accumulate(g.sum(axis=(1, 2)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Grid._record(out, parents, vjp)


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """Adam-style moments, one slot per parameter, stepped in lockstep."""

    def __init__(self, params: list[Grid], lr: float = 0.0005,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def optim_step(params: list[Grid], state: AdamState) -> None:
    """One Adam update over `params`, reading each Grid's `.grad`."""
    if len(params) != len(state.m):
        raise ValueError(f"optimizer state holds {len(state.m)} slots, got {len(params)} params")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"no gradient for parameter {p.name or i}")
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise GradientNaNError(f"non-finite gradient in parameter {p.name or i}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        p.data -= state.lr * (state.m[i] / bias1) / (np.sqrt(state.v[i] / bias2) + state.eps)


def zero_grads(params: list[Grid]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# determinism


@contextmanager
def single_thread_mode():
    """Force single-threaded BLAS for bit-exact runs.

    The library itself never spawns threads; the only parallelism lives in
    the BLAS behind matmul, which this scope pins to one thread.
    """
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield
