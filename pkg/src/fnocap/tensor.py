"""A minimal reverse-mode autodiff tensor over numpy arrays.

Values are float64 or complex128.  For a complex node ``z`` the stored
gradient of a real scalar root ``L`` is ``dL/dRe(z) + 1j * dL/dIm(z)``;
with that convention a linear map ``y = M x`` back-propagates as
``g_x = M^H g_y`` and real inputs simply keep the real part.

Elementwise binary ops require equal shapes (python scalars are allowed on
either side); there is no implicit broadcasting.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from . import fft as _fft

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Build no graph inside the block (thread-local)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "op")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, _parents=(), op: str = ""):
        arr = np.asarray(data)
        if np.iscomplexobj(arr):
            arr = arr.astype(np.complex128, copy=False)
        else:
            arr = arr.astype(np.float64, copy=False)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[tuple[Tensor, Callable[[np.ndarray], np.ndarray]], ...] = _parents
        self.op = op

    # -- metadata -----------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        kind = "complex" if self.is_complex else "real"
        return f"Tensor(shape={self.shape}, {kind}, op={self.op or 'leaf'})"

    # -- autodiff -----------------------------------------------------------
    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate ``.grad`` on every node reachable from this scalar root."""
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar root, got shape {self.shape}")
        if self.is_complex:
            raise ValueError("backward needs a real-valued root")
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            for parent, fn in node._parents:
                pg = fn(g)
                if not parent.is_complex and np.iscomplexobj(pg):
                    pg = pg.real
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __rsub__(self, other):
        return add(_as_tensor(other), -self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return contract(self, other, ([self.ndim - 1], [0]))

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self):
        return tsum(self)


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _cj(x: np.ndarray) -> np.ndarray:
    return np.conj(x) if np.iscomplexobj(x) else x


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, op: str) -> Tensor:
    live = tuple((t, fn) for t, fn in parents if t.requires_grad or t._parents)
    if not grad_enabled() or not live:
        return Tensor(data)
    return Tensor(data, _parents=live, op=op)


def leaf(data) -> Tensor:
    """A trainable leaf (``requires_grad=True``)."""
    return Tensor(np.array(data, copy=True), requires_grad=True)


# -- elementwise ---------------------------------------------------------------

def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.data.size != 1 and b.data.size != 1:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "add")
    out = a.data + b.data

    def red(t: Tensor):
        if t.data.size == 1 and out.size != 1:
            return lambda g: np.sum(g).reshape(t.shape)
        return lambda g: g

    return _make(out, ((a, red(a)), (b, red(b))), "add")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "mul")
    out = a.data * b.data

    def grad_for(t: Tensor, other: Tensor):
        def fn(g):
            r = g * _cj(other.data)
            if t.data.size == 1 and out.size != 1:
                return np.sum(r).reshape(t.shape)
            return r
        return fn

    return _make(out, ((a, grad_for(a, b)), (b, grad_for(b, a))), "mul")


def square(x: Tensor) -> Tensor:
    if x.is_complex:
        raise TypeError("square is defined for real tensors only")
    return _make(x.data * x.data, ((x, lambda g: 2.0 * x.data * g),), "square")


def abs2(x: Tensor) -> Tensor:
    """|x|^2 elementwise, real output."""
    out = (x.data * np.conj(x.data)).real
    return _make(out, ((x, lambda g: 2.0 * g * x.data),), "abs2")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), ((x, lambda g: g * mask),), "relu")


_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu_np(x: np.ndarray) -> np.ndarray:
    return x * ndtr(x)


def gelu_grad_np(x: np.ndarray) -> np.ndarray:
    return ndtr(x) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU, x * Phi(x)."""
    cdf = ndtr(x.data)
    out = x.data * cdf

    def fn(g):
        return g * (cdf + x.data * _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data))

    return _make(out, ((x, fn),), "gelu")


def real(x: Tensor) -> Tensor:
    if not x.is_complex:
        return x
    return _make(x.data.real.copy(), ((x, lambda g: g.astype(np.complex128)),), "real")


def complex_(re: Tensor, im: Tensor) -> Tensor:
    """Assemble ``re + 1j*im`` from two real tensors."""
    if re.shape != im.shape:
        raise ValueError(f"complex: shape mismatch {re.shape} vs {im.shape}")
    out = re.data + 1j * im.data
    return _make(out, ((re, lambda g: g.real), (im, lambda g: g.imag)), "complex")


# -- reductions / shape --------------------------------------------------------

def tsum(x: Tensor) -> Tensor:
    return _make(np.sum(x.data), ((x, lambda g: np.broadcast_to(g, x.shape).copy()),), "sum")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _make(x.data.reshape(shape), ((x, lambda g: g.reshape(x.shape)),), "reshape")


def moveaxis(x: Tensor, src, dst) -> Tensor:
    out = np.moveaxis(x.data, src, dst)
    return _make(out, ((x, lambda g: np.moveaxis(g, dst, src)),), "moveaxis")


def getitem(x: Tensor, idx) -> Tensor:
    out = x.data[idx]

    def fn(g):
        full = np.zeros(x.shape, dtype=np.result_type(g, x.data))
        if _needs_add_at(idx):
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return full

    return _make(np.array(out, copy=True), ((x, fn),), "getitem")


def _needs_add_at(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def pad(x: Tensor, widths: Sequence[tuple[int, int]]) -> Tensor:
    """Zero padding; ``widths`` has one (before, after) pair per axis."""
    widths = [tuple(w) for w in widths]
    if len(widths) != x.ndim:
        raise ValueError("pad: need one (before, after) pair per axis")
    out = np.pad(x.data, widths)
    sl = tuple(slice(b, b + n) for (b, _), n in zip(widths, x.shape))
    return _make(out, ((x, lambda g: g[sl].copy()),), "pad")


def stack_sum(xs: Sequence[Tensor]) -> Tensor:
    """Sum of equally shaped tensors as a single graph node."""
    shape = xs[0].shape
    for t in xs:
        if t.shape != shape:
            raise ValueError("stack_sum: shape mismatch")
    out = xs[0].data.copy() if len(xs) == 1 else np.sum([t.data for t in xs], axis=0)
    return _make(out, tuple((t, lambda g: g) for t in xs), "stack_sum")


# -- contractions ----------------------------------------------------------------

def contract(a: Tensor, b: Tensor, axes: tuple[Sequence[int], Sequence[int]]) -> Tensor:
    """Tensor contraction pairing ``axes[0]`` of ``a`` with ``axes[1]`` of ``b``.

    Result axes are the free axes of ``a`` followed by those of ``b``, in order.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    ax_a = [i % a.ndim for i in axes[0]]
    ax_b = [i % b.ndim for i in axes[1]]
    if len(ax_a) != len(ax_b):
        raise ValueError("contract: unequal number of paired axes")
    for i, j in zip(ax_a, ax_b):
        if a.shape[i] != b.shape[j]:
            raise ValueError(f"contract: axis {i} of a ({a.shape[i]}) != axis {j} of b ({b.shape[j]})")
    out = np.tensordot(a.data, b.data, axes=(ax_a, ax_b))
    free_a = [i for i in range(a.ndim) if i not in ax_a]
    free_b = [j for j in range(b.ndim) if j not in ax_b]
    na = len(free_a)

    def grad_a(g):
        # g axes: free_a + free_b; contract with conj(b) over free_b
        r = np.tensordot(g, _cj(b.data), axes=(list(range(na, g.ndim)), free_b))
        # r axes: free_a + ax_b (in b's order of remaining axes == ax_b sorted as they appear)
        rem_b = [j for j in range(b.ndim) if j not in free_b]
        current = free_a + [ax_a[ax_b.index(j)] for j in rem_b]
        return np.transpose(r, np.argsort(current))

    def grad_b(g):
        r = np.tensordot(_cj(a.data), g, axes=(free_a, list(range(na))))
        rem_a = [i for i in range(a.ndim) if i not in free_a]
        current = [ax_b[ax_a.index(i)] for i in rem_a] + free_b
        return np.transpose(r, np.argsort(current))

    return _make(out, ((a, grad_a), (b, grad_b)), "contract")


def einsum(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum with explicit output (``'ij,jk->ik'``)."""
    a, b = _as_tensor(a), _as_tensor(b)
    ins, out_s = spec.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    out = np.einsum(spec, a.data, b.data, optimize=True)

    def grad_a(g):
        return _einsum_back(f"{out_s},{sb}->{sa}", g, _cj(b.data), a.shape)

    def grad_b(g):
        return _einsum_back(f"{out_s},{sa}->{sb}", g, _cj(a.data), b.shape)

    return _make(out, ((a, grad_a), (b, grad_b)), "einsum")


def _einsum_back(spec: str, g, other, shape):
    r = np.einsum(spec, g, other, optimize=True)
    return np.broadcast_to(r, shape).copy() if r.shape != shape else r


def _matmul_axis(m: np.ndarray, x: np.ndarray, axis: int, real_out: bool = False) -> np.ndarray:
    # m @ x along ``axis``; real x never gets promoted to complex
    # .real/.imag views are strided; matmul only hits BLAS on contiguous operands
    xm = np.moveaxis(x, axis, -2)
    if np.iscomplexobj(m) and not np.iscomplexobj(x):
        re = np.matmul(np.ascontiguousarray(m.real), xm)
        y = re if real_out else re + 1j * np.matmul(np.ascontiguousarray(m.imag), xm)
    elif real_out and np.iscomplexobj(m):
        xr, xi = np.ascontiguousarray(xm.real), np.ascontiguousarray(xm.imag)
        y = np.matmul(np.ascontiguousarray(m.real), xr) - np.matmul(np.ascontiguousarray(m.imag), xi)
    else:
        y = np.matmul(m, xm)
        if real_out:
            y = y.real
    return np.moveaxis(y, -2, axis)


def linear_along(x: Tensor, matrix: np.ndarray, axis: int, real_out: bool = False) -> Tensor:
    """Apply a fixed (possibly complex) matrix along one axis: y = M x.

    With ``real_out`` the result is Re(M x), computed without forming the
    imaginary part.
    """
    axis %= x.ndim
    m = np.asarray(matrix)
    if m.shape[1] != x.shape[axis]:
        raise ValueError(f"linear_along: matrix has {m.shape[1]} columns, axis has {x.shape[axis]}")
    out = _matmul_axis(m, x.data, axis, real_out)
    mh = np.ascontiguousarray(np.conj(m.T))

    def fn(g):
        return _matmul_axis(mh, g, axis)

    return _make(out, ((x, fn),), "linear_along")


def mode_mix(V: Tensor, R: Tensor) -> Tensor:
    """Per-mode channel mixing: out[b, f, o] = sum_i V[b, f, i] R[f, i, o].

    ``V`` is (B, f_1..f_d, in), ``R`` is (f_1..f_d, in, out); the mode axes
    are flattened and handled as one batched matrix product.
    """
    B, fshape, cin = V.shape[0], V.shape[1:-1], V.shape[-1]
    if R.shape[:-2] != fshape or R.shape[-2] != cin:
        raise ValueError(f"mode_mix: {V.shape} incompatible with {R.shape}")
    F, cout = int(np.prod(fshape)), R.shape[-1]
    v3 = np.moveaxis(V.data.reshape(B, F, cin), 1, 0)   # (F, B, in)
    r3 = R.data.reshape(F, cin, cout)
    out = np.moveaxis(np.matmul(v3, r3), 0, 1).reshape((B,) + fshape + (cout,))

    def grad_v(g):
        g3 = np.moveaxis(g.reshape(B, F, cout), 1, 0)
        gv = np.matmul(g3, np.swapaxes(_cj(r3), 1, 2))
        return np.moveaxis(gv, 0, 1).reshape(V.shape)

    def grad_r(g):
        g3 = np.moveaxis(g.reshape(B, F, cout), 1, 0)
        return np.matmul(np.swapaxes(_cj(v3), 1, 2), g3).reshape(R.shape)

    return _make(out, ((V, grad_v), (R, grad_r)), "mode_mix")


# -- Fourier --------------------------------------------------------------------

def fft(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Unitary DFT; the gradient is the adjoint (= inverse) transform."""
    axes = tuple(range(x.ndim)) if axes is None else tuple(axes)
    out = _fft.fft(x.data, axes)
    return _make(out, ((x, lambda g: _fft.ifft(g, axes)),), "fft")


def ifft(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(range(x.ndim)) if axes is None else tuple(axes)
    out = _fft.ifft(x.data, axes)
    return _make(out, ((x, lambda g: _fft.fft(g, axes)),), "ifft")


def truncated_dft(x: Tensor, axis: int, n_modes: int) -> Tensor:
    """Unitary forward DFT along ``axis`` keeping modes ``0..n_modes-1``."""
    n = x.shape[axis]
    return linear_along(x, _fft.dft_matrix(n, -1)[:n_modes] / np.sqrt(n), axis)


def truncated_idft(x: Tensor, axis: int, n: int, real_out: bool = False) -> Tensor:
    """Unitary inverse DFT along ``axis`` from modes ``0..k-1`` onto ``n`` points."""
    k = x.shape[axis]
    return linear_along(x, _fft.dft_matrix(n, +1)[:, :k] / np.sqrt(n), axis, real_out)


def windows(x: Tensor, axes: Sequence[int], sizes: Sequence[int]) -> Tensor:
    """Sliding windows of ``x`` (no padding); window axes are appended last.

    Output shape is ``x.shape`` with each ``axes[j]`` shrunk to
    ``n_j - sizes[j] + 1``, followed by ``sizes``.
    """
    axes = tuple(a % x.ndim for a in axes)
    sizes = tuple(int(s) for s in sizes)
    out = np.lib.stride_tricks.sliding_window_view(x.data, sizes, axis=axes)
    lens = [x.shape[a] - s + 1 for a, s in zip(axes, sizes)]

    def fn(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        lead = (slice(None),) * (g.ndim - len(sizes))
        for offset in np.ndindex(*sizes):
            sl = [slice(None)] * x.ndim
            for a, o, n in zip(axes, offset, lens):
                sl[a] = slice(o, o + n)
            full[tuple(sl)] += g[lead + offset]
        return full

    return _make(np.ascontiguousarray(out), ((x, fn),), "windows")
