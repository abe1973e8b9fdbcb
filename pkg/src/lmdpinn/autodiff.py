"""Second-order forward jets through MLPs plus a reverse-mode tape for parameter gradients.

Input derivatives (value, first and second directional derivative along a
coordinate axis) are pushed forward through the network as jets.  Losses built
from those jets are recorded on a :class:`GradTape` and differentiated with
respect to the network parameters in reverse, so the parameter gradient of a
residual loss is exact up to rounding ("reverse over forward").
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when a jet or loss evaluation produces inf/nan."""

    def __init__(self, message: str, offending_input: Any = None, breakdown: dict | None = None):
        super().__init__(message)
        self.offending_input = offending_input
        self.breakdown = breakdown or {}


# ---------------------------------------------------------------------------
# scalar / elementwise jets
# ---------------------------------------------------------------------------

def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x):
    # branch-free stable logistic
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass(frozen=True)
class Jet2:
    """Value with first and second derivative along a single direction.

    Works on floats and on numpy arrays (elementwise).
    """

    value: Any
    d1: Any = 0.0
    d2: Any = 0.0

    @staticmethod
    def seed(x) -> "Jet2":
        return Jet2(x, np.ones_like(x, dtype=float) if np.ndim(x) else 1.0, 0.0 * x)

    @staticmethod
    def const(c) -> "Jet2":
        return Jet2(c, 0.0, 0.0)

    def lift(self, f0, f1, f2) -> "Jet2":
        """Apply a scalar map with value f0 and derivatives f1, f2 at ``self.value``."""
        return Jet2(f0, f1 * self.d1, f2 * self.d1 * self.d1 + f1 * self.d2)

    def __add__(self, other):
        o = _as_jet(other)
        return Jet2(self.value + o.value, self.d1 + o.d1, self.d2 + o.d2)

    __radd__ = __add__

    def __neg__(self):
        return Jet2(-self.value, -self.d1, -self.d2)

    def __sub__(self, other):
        return self + (-_as_jet(other))

    def __rsub__(self, other):
        return _as_jet(other) - self

    def __mul__(self, other):
        o = _as_jet(other)
        return Jet2(
            self.value * o.value,
            self.d1 * o.value + self.value * o.d1,
            self.d2 * o.value + 2.0 * self.d1 * o.d1 + self.value * o.d2,
        )

    __rmul__ = __mul__

    def reciprocal(self) -> "Jet2":
        inv = 1.0 / self.value
        return self.lift(inv, -inv * inv, 2.0 * inv * inv * inv)

    def __truediv__(self, other):
        return self * _as_jet(other).reciprocal()

    def __rtruediv__(self, other):
        return _as_jet(other) * self.reciprocal()

    def __pow__(self, p):
        if isinstance(p, int) and p >= 0:
            if p == 0:
                return Jet2.const(np.ones_like(self.value) if np.ndim(self.value) else 1.0)
            x = self.value
            return self.lift(x**p, p * x ** (p - 1), p * (p - 1) * x ** (p - 2) if p > 1 else 0.0 * x)
        x = self.value
        return self.lift(x**p, p * x ** (p - 1), p * (p - 1) * x ** (p - 2))

    def square(self) -> "Jet2":
        return self * self


def _as_jet(x) -> Jet2:
    return x if isinstance(x, Jet2) else Jet2.const(x)


def tanh(j: Jet2) -> Jet2:
    t = np.tanh(j.value)
    s1 = 1.0 - t * t
    return j.lift(t, s1, -2.0 * t * s1)


def softplus(j: Jet2) -> Jet2:
    s = _sigmoid(j.value)
    return j.lift(_softplus(j.value), s, s * (1.0 - s))


def exp(j: Jet2) -> Jet2:
    e = np.exp(j.value)
    return j.lift(e, e, e)


def jet_eval(fn: Callable[[Jet2], Jet2], x) -> Jet2:
    """Evaluate ``fn`` on a seeded jet: value, f'(x), f''(x)."""
    return fn(Jet2.seed(x))


# ---------------------------------------------------------------------------
# vectorised MLP jets
# ---------------------------------------------------------------------------

def _activation(name: str, a):
    """Return f, f', f'', f''' of the activation at ``a``."""
    if name == "tanh":
        f = np.tanh(a)
        f1 = 1.0 - f * f
        f2 = -2.0 * f * f1
        f3 = f1 * (4.0 * f * f - 2.0 * f1)
        return f, f1, f2, f3
    if name == "softplus":
        s = _sigmoid(a)
        f1 = s
        f2 = s * (1.0 - s)
        f3 = f2 * (1.0 - 2.0 * s)
        return _softplus(a), f1, f2, f3
    if name == "linear":
        one = np.ones_like(a)
        zero = np.zeros_like(a)
        return a, one, zero, zero
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class JetCache:
    """Everything the reverse sweep needs from one forward jet pass."""

    x: np.ndarray
    axes: tuple[int, ...]
    second: tuple[int, ...]
    layers: list  # (h_prev, d1_prev, d2_prev, f1, f2, f3, a1, a2) per layer
    acts: tuple[str, ...]
    weights: list
    dtype: Any
    second_sum: bool = False
    seed: Any = None


def mlp_jet_forward(
    weights: Sequence[np.ndarray],
    biases: Sequence[np.ndarray],
    acts: Sequence[str],
    x: np.ndarray,
    axes: Sequence[int] = (),
    second: Sequence[int] = (),
    dtype=np.float64,
    keep: bool = True,
    second_sum: bool = False,
    axis_scale=None,
):
    """Push jets through ``y = act_L(W_L ... act_1(W_1 x + b_1) ...)``.

    ``axes`` are the input axes that get a first derivative; ``second`` indexes
    into ``axes`` and selects which of them also get a second derivative.
    Returns ``(value (n, o), d1 (n, len(axes), o), d2 (n, len(second), o))``
    and, if ``keep``, a :class:`JetCache` for :func:`mlp_jet_backward`.
    With ``second_sum`` only the sum of those second derivatives is carried
    (a Laplacian), so ``d2`` has shape (n, 1, o).  ``axis_scale`` multiplies
    each seed direction, e.g. by 1/half-width to get physical derivatives.
    """
    axes = tuple(int(a) for a in axes)
    second = tuple(int(s) for s in second)
    x = np.asarray(x, dtype=dtype)
    n = x.shape[0]
    k1, k2 = len(axes), len(second)
    sec = list(second)
    seed = None if axis_scale is None else np.asarray(axis_scale, dtype=dtype).reshape(k1, 1)
    layers = []
    h = x
    d1 = d2 = None
    for li, (W, b) in enumerate(zip(weights, biases)):
        W = np.asarray(W, dtype=dtype)
        a0 = h @ W + np.asarray(b, dtype=dtype)
        if li == 0:
            Wa = W[list(axes), :] if seed is None else W[list(axes), :] * seed
            a1 = np.broadcast_to(Wa[None], (n, k1, W.shape[1])) if k1 else None
            a2 = None
        else:
            a1 = d1 @ W if k1 else None
            a2 = d2 @ W if k2 else None
        f, f1, f2, f3 = _activation(acts[li], a0)
        if k1:
            new_d1 = f1[:, None, :] * a1
        if k2:
            a1s = a1[:, sec, :]
            q = a1s * a1s
            if second_sum:
                q = q.sum(axis=1, keepdims=True)
            new_d2 = f2[:, None, :] * q
            if a2 is not None:
                new_d2 = new_d2 + f1[:, None, :] * a2
        if keep:
            layers.append((h, d1, d2, f1, f2, f3, a1, a2))
        h = f
        d1 = new_d1 if k1 else None
        d2 = new_d2 if k2 else None
    value = h
    d1 = d1 if k1 else np.zeros((n, 0, value.shape[1]), dtype=dtype)
    d2 = d2 if k2 else np.zeros((n, 0, value.shape[1]), dtype=dtype)
    cache = JetCache(x, axes, second, layers, tuple(acts), [np.asarray(W, dtype=dtype) for W in weights], dtype, second_sum, seed) if keep else None
    return (value, d1, d2), cache


def mlp_jet_backward(cache: JetCache, g_value, g_d1=None, g_d2=None):
    """Reverse sweep: gradients of a scalar w.r.t. all weights and biases.

    ``g_*`` are the gradients of the scalar with respect to the outputs of
    :func:`mlp_jet_forward` (``None`` means zero).
    """
    second = list(cache.second)
    k1, k2 = len(cache.axes), len(second)
    dt = cache.dtype
    gh = np.asarray(g_value, dtype=dt)
    gd1 = None if (g_d1 is None or k1 == 0) else np.asarray(g_d1, dtype=dt)
    gd2 = None if (g_d2 is None or k2 == 0) else np.asarray(g_d2, dtype=dt)
    L = len(cache.layers)
    gW: list = [None] * L
    gb: list = [None] * L
    for li in range(L - 1, -1, -1):
        h_prev, d1_prev, d2_prev, f1, f2, f3, a1, a2 = cache.layers[li]
        ga = gh * f1
        ga1 = ga2 = None
        if gd1 is not None:
            ga = ga + np.einsum("nkw,nkw->nw", gd1, a1) * f2
            ga1 = gd1 * f1[:, None, :]
        if gd2 is not None:
            a1s = a1[:, second, :]
            q = a1s * a1s
            if cache.second_sum:
                q = q.sum(axis=1, keepdims=True)
            ga = ga + np.einsum("nkw,nkw->nw", gd2, q) * f3
            if a2 is not None:
                ga = ga + np.einsum("nkw,nkw->nw", gd2, a2) * f2
            extra = 2.0 * gd2 * f2[:, None, :] * a1s
            if ga1 is None:
                ga1 = np.zeros(a1.shape, dtype=dt)
            else:
                ga1 = ga1.copy() if ga1.base is not None else ga1
            for j, s in enumerate(second):
                ga1[:, s, :] += extra[:, j, :]
            ga2 = gd2 * f1[:, None, :]
        W = cache.weights[li]
        gWl = h_prev.T @ ga
        if li == 0:
            if ga1 is not None:
                col = ga1.sum(axis=0)
                if cache.seed is not None:
                    col = col * cache.seed
                for j, ax in enumerate(cache.axes):
                    gWl[ax, :] += col[j]
        else:
            if ga1 is not None:
                w = ga1.shape[-1]
                gWl += d1_prev.reshape(-1, d1_prev.shape[-1]).T @ ga1.reshape(-1, w)
            if ga2 is not None and d2_prev is not None:
                w = ga2.shape[-1]
                gWl += d2_prev.reshape(-1, d2_prev.shape[-1]).T @ ga2.reshape(-1, w)
        gW[li] = gWl
        gb[li] = ga.sum(axis=0)
        if li > 0:
            gh = ga @ W.T
            gd1 = ga1 @ W.T if ga1 is not None else None
            gd2 = ga2 @ W.T if ga2 is not None else None
    return gW, gb


def directional_jet(net, x, direction) -> Jet2:
    """Value, first and second derivative of every network output along an axis.

    ``net`` is an :class:`~lmdpinn.network.MlpParams`; ``x`` is a scaled input
    of shape (4,) or (n, 4).  ``direction`` is an axis index or a 4-vector
    with a single nonzero entry (its sign and length scale the derivatives).
    The output transform (softplus/linear) is included; no unscaling is done.
    """
    axis, length = _axis_of(direction)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    (v, d1, d2), _ = mlp_jet_forward(net.weights, net.biases, net.activations, xb, (axis,), (0,), keep=False)
    d1 = d1[:, 0, :] * length
    d2 = d2[:, 0, :] * length * length
    bad = ~(np.isfinite(v).all(1) & np.isfinite(d1).all(1) & np.isfinite(d2).all(1))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NonFiniteError(f"non-finite jet at input {xb[i].tolist()}", offending_input=xb[i])
    if single:
        return Jet2(v[0], d1[0], d2[0])
    return Jet2(v, d1, d2)


def _axis_of(direction) -> tuple[int, float]:
    if np.isscalar(direction):
        return int(direction), 1.0
    d = np.asarray(direction, dtype=float)
    nz = np.flatnonzero(d)
    if len(nz) != 1:
        raise ValueError("direction must have exactly one nonzero component")
    return int(nz[0]), float(d[nz[0]])


# ---------------------------------------------------------------------------
# reverse-mode tape over array values
# ---------------------------------------------------------------------------

_ACTIVE: list["GradTape"] = []


def _unbroadcast(g, shape):
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Var:
    """Array-valued node.  Arithmetic on Vars is recorded on the active tape."""

    __slots__ = ("value", "parents", "vjp", "index")
    __array_priority__ = 100.0

    def __init__(self, value, parents: tuple = (), vjp: Callable | None = None):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.index = -1
        if _ACTIVE:
            _ACTIVE[-1]._record(self)

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var(shape={self.shape})"

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        if not isinstance(other, Var):
            return Var(self.value + other, (self,), lambda g, s=self.shape: (_unbroadcast(g, s),))
        sa, sb = self.shape, other.shape
        return Var(self.value + other.value, (self, other), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-other if isinstance(other, Var) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Var):
            c = other
            s = self.shape
            return Var(self.value * c, (self,), lambda g: (_unbroadcast(g * c, s),))
        a, b = self.value, other.value
        sa, sb = self.shape, other.shape
        return Var(a * b, (self, other), lambda g: (_unbroadcast(g * b, sa), _unbroadcast(g * a, sb)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Var):
            return self * (1.0 / np.asarray(other))
        return self * other ** -1

    def __rtruediv__(self, other):
        return (self ** -1) * other

    def __pow__(self, p):
        x = self.value
        return Var(x**p, (self,), lambda g: (g * p * x ** (p - 1),))

    def __getitem__(self, idx):
        x = self.value
        basic = all(isinstance(i, (int, slice, type(None))) for i in (idx if isinstance(idx, tuple) else (idx,)))

        def vjp(g):
            out = np.zeros_like(x)
            if basic:
                out[idx] = g
            else:
                np.add.at(out, idx, g)
            return (out,)
        return Var(x[idx], (self,), vjp)

    # reductions ----------------------------------------------------------
    def sum(self):
        s = self.shape
        return Var(np.sum(self.value), (self,), lambda g: (np.broadcast_to(g, s),))

    def mean(self):
        s = self.shape
        n = max(int(np.prod(s)), 1)
        return Var(np.sum(self.value) / n, (self,), lambda g: (np.broadcast_to(g / n, s),))


def value_of(x):
    return x.value if isinstance(x, Var) else x


def vexp(x):
    if not isinstance(x, Var):
        return np.exp(x)
    e = np.exp(x.value)
    return Var(e, (x,), lambda g: (g * e,))


def square_mean(x):
    """Mean of squares over all entries."""
    return (x * x).mean()


class GradTape:
    """Wengert list of :class:`Var` nodes recorded while the tape is active.

    >>> with GradTape() as tape:
    ...     w = tape.watch(np.array([2.0]))
    ...     loss = (w * w).sum()
    >>> tape.gradient(loss, [w])[0]
    array([4.])
    """

    def __init__(self):
        self.nodes: list[Var] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def _record(self, node: Var):
        node.index = len(self.nodes)
        self.nodes.append(node)

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    def watch(self, value) -> Var:
        return Var(np.asarray(value))

    def gradient(self, target: Var, sources: Sequence[Var]) -> list:
        """d target / d source for each source, accumulated in reverse tape order."""
        if target.index < 0:
            return [np.zeros_like(s.value) for s in sources]
        grads: dict[int, Any] = {target.index: np.ones_like(target.value)}
        for node in reversed(self.nodes[: target.index + 1]):
            g = grads.pop(node.index, None) if node.vjp is not None else grads.get(node.index)
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or parent.index < 0:
                    continue
                prev = grads.get(parent.index)
                grads[parent.index] = pg if prev is None else _accumulate(prev, pg)
        out = []
        for s in sources:
            g = grads.get(s.index)
            out.append(np.zeros_like(s.value) if g is None else np.asarray(g))
        return out


def _accumulate(a, b):
    if isinstance(a, tuple):
        return tuple(y if x is None else (x if y is None else x + y) for x, y in zip(a, b))
    return a + b


def mlp_jets(params: Sequence[Var], acts, x, axes=(), second=(), dtype=np.float64, second_sum=False, axis_scale=None):
    """Tape-aware MLP jet evaluation.

    ``params`` alternates weight and bias Vars layer by layer.  Returns three
    Vars: values (n, o), first derivatives (n, len(axes), o) and second
    derivatives (n, len(second), o) with respect to the scaled inputs
    (summed to (n, 1, o) when ``second_sum``); see :func:`mlp_jet_forward`.
    """
    weights = [p.value for p in params[0::2]]
    biases = [p.value for p in params[1::2]]
    (v, d1, d2), cache = mlp_jet_forward(weights, biases, acts, x, axes, second, dtype=dtype, second_sum=second_sum, axis_scale=axis_scale)

    def vjp(g):
        gv, g1, g2 = g
        if gv is None:
            gv = np.zeros_like(v)
        gW, gb = mlp_jet_backward(cache, gv, g1, g2)
        out = []
        for a, b in zip(gW, gb):
            out.extend((a, b))
        return tuple(out)

    packed = Var((v, d1, d2), tuple(params), vjp)

    def pick(i):
        def f(g):
            t = [None, None, None]
            t[i] = g
            return (tuple(t),)
        return f

    return (Var(v, (packed,), pick(0)), Var(d1, (packed,), pick(1)), Var(d2, (packed,), pick(2)))


@dataclass
class GradientResult:
    loss: float
    components: dict
    grads: list  # one flat vector per network
    node_count: int


def loss_param_gradient(loss_fn: Callable, nets: Sequence) -> GradientResult:
    """Value and flat parameter gradient of a scalar loss over one or more nets.

    ``loss_fn(param_vars)`` receives, per net, the list of weight/bias Vars
    (layer order, weight before bias) and returns ``(total, components)`` where
    ``components`` maps names to scalar Vars or floats.
    """
    with GradTape() as tape:
        pvars = [[tape.watch(a) for a in net.arrays()] for net in nets]
        total, comps = loss_fn(pvars)
    breakdown = {k: float(value_of(c)) for k, c in comps.items()}
    lval = float(value_of(total))
    if not np.isfinite(lval) or not all(np.isfinite(list(breakdown.values()))):
        raise NonFiniteError(f"non-finite loss {lval}: {breakdown}", breakdown=breakdown)
    grads = []
    for pv in pvars:
        gs = tape.gradient(total, pv)
        grads.append(np.concatenate([np.asarray(g, dtype=np.float64).ravel() for g in gs]))
    return GradientResult(lval, breakdown, grads, tape.node_count)


@dataclass
class SelfCheckReport:
    samples: int
    max_rel_err_d1: float
    max_rel_err_d2: float
    d1_tol: float = 1e-5
    d2_tol: float = 1e-3

    @property
    def ok(self) -> bool:
        return self.max_rel_err_d1 <= self.d1_tol and self.max_rel_err_d2 <= self.d2_tol

    def flagged(self, threshold: float = 1e-2) -> bool:
        return max(self.max_rel_err_d1, self.max_rel_err_d2) > threshold


def derivative_selfcheck(net, samples: int = 32, seed: int = 0, h: float = 1e-4, jet_fn=None) -> SelfCheckReport:
    """Compare jets with central finite differences at random scaled inputs.

    Relative errors are measured against the largest derivative magnitude of
    each output over the sample so near-zero entries do not dominate.
    ``jet_fn(net, x, axis)`` can replace :func:`directional_jet` (test hook).
    """
    jet_fn = jet_fn or directional_jet
    rng = np.random.default_rng(seed)
    d_in = net.weights[0].shape[0]
    x = rng.uniform(-1.0 + h, 1.0 - h, size=(samples, d_in))
    e1 = e2 = 0.0
    for axis in range(d_in):
        j = jet_fn(net, x, axis)
        step = np.zeros(d_in)
        step[axis] = h
        fp = net.apply(x + step)
        fm = net.apply(x - step)
        f0 = net.apply(x)
        fd1 = (fp - fm) / (2 * h)
        fd2 = (fp - 2 * f0 + fm) / (h * h)
        e1 = max(e1, _rel_err(np.asarray(j.d1), fd1))
        e2 = max(e2, _rel_err(np.asarray(j.d2), fd2))
    return SelfCheckReport(samples, e1, e2)


def _rel_err(a, b) -> float:
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    scale = np.maximum(np.abs(b).max(axis=0), 1e-12)
    return float((np.abs(a - b) / scale).max())
