"""Dense-network machinery: a batched reverse-mode tape, MLPs and Adam.

All values are float64 numpy arrays.  A :class:`Tape` records a small set of
primitives (affine maps, elementwise nonlinearities, concatenation, scaling,
sums and squared norms, plus user-supplied nodes with an explicit
vector-Jacobian product).  A batch dimension is carried through every
primitive, so one tape holds the arithmetic of a whole batch of independent
trajectories; their gradients add up during the reverse pass.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, TrainingError, UsageError

ACTIVATIONS = ("tanh", "relu", "silu")


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    """A value living on a tape. ``index`` is -1 for untracked constants."""

    __slots__ = ("value", "index")

    def __init__(self, value, index=-1):
        self.value = value
        self.index = index

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var(shape={self.shape}, index={self.index})"


class Tape:
    """Records primitive operations for one reverse pass.

    With ``record=False`` the same calls only compute forward values, which
    keeps sampling and training on identical arithmetic.
    """

    def __init__(self, record=True):
        self.record = record
        self._nodes = []      # (parents, vjp) per node; vjp is None for leaves
        self._leaves = {}     # node index -> ("param", slice) | ("input", k)
        self._n_inputs = 0
        self._param_size = 0
        self._consumed = False

    def __len__(self):
        return len(self._nodes)

    def _check_open(self):
        if self._consumed:
            raise UsageError("tape already consumed by backprop; record a new one")

    def _push(self, value, parents, vjp):
        if not self.record:
            return Var(value)
        self._check_open()
        tracked = tuple(p for p in parents)
        if all(p.index < 0 for p in tracked):
            return Var(value)
        self._nodes.append((tracked, vjp))
        return Var(value, len(self._nodes) - 1)

    def _leaf(self, value, kind):
        if not self.record:
            return Var(value)
        self._check_open()
        self._nodes.append(((), None))
        idx = len(self._nodes) - 1
        self._leaves[idx] = kind
        return Var(value, idx)

    # leaves -------------------------------------------------------------
    def constant(self, value):
        return Var(np.asarray(value, dtype=float))

    def input(self, value):
        """A leaf whose gradient is returned by :meth:`backprop`."""
        var = self._leaf(np.asarray(value, dtype=float), ("input", self._n_inputs))
        self._n_inputs += 1
        return var

    def parameter(self, store, name):
        """Leaf viewing the slice ``name`` of a :class:`ParameterStore`."""
        self._param_size = store.size
        return self._leaf(store.view(name), ("param", store.slice(name)))

    # primitives ---------------------------------------------------------
    def affine(self, x, w, b=None):
        xv, wv = x.value, w.value
        out = xv @ wv
        if b is not None:
            out = out + b.value

        def vjp(g):
            gb = None if b is None else g.sum(axis=0)
            return (g @ wv.T, xv.T @ g, gb)

        parents = (x, w) if b is None else (x, w, b)
        return self._push(out, parents, vjp)

    def tanh(self, x):
        y = np.tanh(x.value)
        return self._push(y, (x,), lambda g: (g * (1.0 - y * y),))

    def relu(self, x):
        mask = x.value > 0
        return self._push(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))

    def silu(self, x):
        xv = x.value
        sig = 0.5 * (1.0 + np.tanh(0.5 * xv))
        return self._push(xv * sig, (x,), lambda g: (g * sig * (1.0 + xv * (1.0 - sig)),))

    def activation(self, name, x):
        if name == "tanh":
            return self.tanh(x)
        if name == "relu":
            return self.relu(x)
        if name == "silu":
            return self.silu(x)
        raise ConfigurationError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")

    def concat(self, parts):
        """Concatenate along the last axis, broadcasting leading axes."""
        values = [p.value for p in parts]
        lead = np.broadcast_shapes(*[v.shape[:-1] for v in values])
        full = [np.broadcast_to(v, lead + v.shape[-1:]) for v in values]
        out = np.concatenate(full, axis=-1)
        widths = np.cumsum([v.shape[-1] for v in values])[:-1]
        shapes = [v.shape for v in values]

        def vjp(g):
            return tuple(_unbroadcast(gi, s)
                         for gi, s in zip(np.split(g, widths, axis=-1), shapes))

        return self._push(out, tuple(parts), vjp)

    def add(self, a, b):
        sa, sb = a.shape, b.shape
        return self._push(a.value + b.value, (a, b),
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def sub(self, a, b):
        sa, sb = a.shape, b.shape
        return self._push(a.value - b.value, (a, b),
                          lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))

    def mul(self, a, b):
        av, bv = a.value, b.value
        return self._push(av * bv, (a, b),
                          lambda g: (_unbroadcast(g * bv, av.shape),
                                     _unbroadcast(g * av, bv.shape)))

    def scale(self, x, c):
        """Multiply by a constant (scalar or broadcastable array)."""
        c = np.asarray(c, dtype=float)
        shape = x.shape
        return self._push(x.value * c, (x,), lambda g: (_unbroadcast(g * c, shape),))

    def sum(self, x, axis=None):
        shape = x.shape

        def vjp(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return self._push(np.sum(x.value, axis=axis), (x,), vjp)

    def mean(self, x):
        n = np.size(x.value)
        return self.scale(self.sum(x), 1.0 / n)

    def sqnorm(self, x):
        """Squared norm over the last axis."""
        xv = x.value
        return self._push(np.sum(xv * xv, axis=-1), (x,),
                          lambda g: (2.0 * xv * np.expand_dims(g, -1),))

    def take_row(self, x, k):
        """Row ``k`` of a 2-D value, kept 2-D (shape (1, n))."""
        xv = x.value

        def vjp(g):
            out = np.zeros_like(xv)
            out[k] += g[0]
            return (out,)

        return self._push(xv[k:k + 1], (x,), vjp)

    def clip_rows(self, x, max_norm):
        """Rescale each row whose Euclidean norm exceeds ``max_norm``."""
        xv = x.value
        norms = np.sqrt(np.sum(xv * xv, axis=-1, keepdims=True))
        over = norms > max_norm
        safe = np.where(over, norms, 1.0)
        factor = np.where(over, max_norm / safe, 1.0)

        def vjp(g):
            radial = np.sum(xv * g, axis=-1, keepdims=True) / (safe * safe)
            return (np.where(over, factor * (g - xv * radial), g),)

        return self._push(xv * factor, (x,), vjp)

    def custom(self, value, parents, vjp):
        """Node with a caller-supplied vector-Jacobian product.

        ``vjp(g)`` must return one gradient (or None) per parent.
        """
        return self._push(np.asarray(value, dtype=float), tuple(parents), vjp)

    # reverse pass -------------------------------------------------------
    def backprop(self, output, seed=None):
        """Reverse pass from ``output``.

        Returns ``(param_grads, input_grads)``: a flat vector laid out as the
        parameter store (empty when no parameter was used) and a list with one
        gradient per :meth:`input` leaf, in creation order.
        """
        if not self.record:
            raise UsageError("tape was created with record=False")
        self._check_open()
        self._consumed = True
        seed = np.ones_like(output.value) if seed is None else np.asarray(seed, dtype=float)
        if np.shape(seed) != output.shape:
            raise ConfigurationError(f"seed shape {np.shape(seed)} != output shape {output.shape}")
        param_grads = np.zeros(self._param_size)
        input_grads = [None] * self._n_inputs
        if output.index < 0:
            return param_grads, input_grads
        adj = [None] * len(self._nodes)
        adj[output.index] = seed
        for i in range(output.index, -1, -1):
            g = adj[i]
            if g is None:
                continue
            parents, vjp = self._nodes[i]
            if vjp is None:
                kind, where = self._leaves[i]
                if kind == "param":
                    param_grads[where] += np.reshape(g, -1)
                else:
                    input_grads[where] = g
                continue
            for p, gp in zip(parents, vjp(g)):
                if gp is None or p.index < 0:
                    continue
                adj[p.index] = gp if adj[p.index] is None else adj[p.index] + gp
            adj[i] = None
        self._nodes.clear()
        return param_grads, input_grads


def backprop(tape, seed_grad, output):
    """Functional alias of :meth:`Tape.backprop`."""
    return tape.backprop(output, seed_grad)


class ParameterStore:
    """Flat float64 parameter vector with a fixed named layout."""

    def __init__(self, shapes, flat=None):
        layout, offset = [], 0
        for name, shape in shapes:
            shape = tuple(int(s) for s in shape)
            layout.append((name, shape, offset))
            offset += int(np.prod(shape))
        self.layout = tuple(layout)
        self._index = {name: (shape, off) for name, shape, off in layout}
        if len(self._index) != len(layout):
            raise ConfigurationError("duplicate parameter names in layout")
        self.flat = np.zeros(offset) if flat is None else np.array(flat, dtype=float)
        if self.flat.shape != (offset,):
            raise ConfigurationError(f"flat vector has length {self.flat.size}, layout needs {offset}")

    @property
    def size(self):
        return self.flat.size

    @property
    def names(self):
        return [name for name, _, _ in self.layout]

    def slice(self, name):
        shape, off = self._index[name]
        return slice(off, off + int(np.prod(shape)))

    def view(self, name):
        shape, _ = self._index[name]
        return self.flat[self.slice(name)].reshape(shape)

    def set(self, name, value):
        self.flat[self.slice(name)] = np.reshape(value, -1)

    def copy(self):
        return ParameterStore([(n, s) for n, s, _ in self.layout], self.flat.copy())


@dataclass(frozen=True)
class MLPSpec:
    """Layer sizes ``(n_in, hidden..., n_out)`` and the hidden activation."""

    sizes: tuple
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ConfigurationError(f"invalid layer sizes {self.sizes}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    def shapes(self, prefix):
        out = []
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            out += [(f"{prefix}.{i}.w", (a, b)), (f"{prefix}.{i}.b", (b,))]
        return out

    @property
    def n_layers(self):
        return len(self.sizes) - 1


def init_mlp(store, spec, prefix, rng, zero_last=False):
    """Uniform fan-in initialisation, optionally zeroing the output layer."""
    for i, fan_in in enumerate(spec.sizes[:-1]):
        bound = 1.0 / np.sqrt(fan_in)
        for part in ("w", "b"):
            name = f"{prefix}.{i}.{part}"
            shape = store.view(name).shape
            if zero_last and i == spec.n_layers - 1:
                store.set(name, np.zeros(shape))
            else:
                store.set(name, rng.uniform(-bound, bound, size=shape))


def mlp_forward(params, spec, x, tape, prefix="mlp"):
    """Apply the MLP ``spec`` stored under ``prefix`` to the 2-D input ``x``."""
    if x.value.ndim != 2 or x.shape[-1] != spec.sizes[0]:
        raise ConfigurationError(
            f"input shape {x.shape} does not match first layer width {spec.sizes[0]}")
    h = x
    for i in range(spec.n_layers):
        w = tape.parameter(params, f"{prefix}.{i}.w")
        if w.shape != (spec.sizes[i], spec.sizes[i + 1]):
            raise ConfigurationError(f"layer {prefix}.{i} has shape {w.shape}")
        h = tape.affine(h, w, tape.parameter(params, f"{prefix}.{i}.b"))
        if i < spec.n_layers - 1:
            h = tape.activation(spec.activation, h)
    return h


def fourier_time_features(t, num_freq, horizon=1.0):
    """``[sin(2 pi k t / T)]_k ++ [cos(2 pi k t / T)]_k`` for k = 1..num_freq.

    ``t`` may be a scalar (result shape (2F,)) or a 1-D array (shape (n, 2F)).
    """
    if num_freq < 1:
        raise ConfigurationError("num_freq must be >= 1")
    t = np.asarray(t, dtype=float)
    phase = 2.0 * np.pi * np.multiply.outer(t, np.arange(1, num_freq + 1)) / horizon
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=-1)


def clip_vector(v, max_norm):
    """Rescale ``v`` onto the ball of radius ``max_norm`` if it lies outside."""
    if max_norm <= 0:
        raise ConfigurationError("max_norm must be positive")
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm <= max_norm:
        return v
    return v * (max_norm / norm)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n, **hyper):
        return cls(np.zeros(n), np.zeros(n), **hyper)

    def copy(self):
        return AdamState(self.m.copy(), self.v.copy(), self.t,
                         self.lr, self.beta1, self.beta2, self.eps)


def adam_step(state, params, grads):
    """One bias-corrected Adam update, in place on ``state`` and ``params``."""
    grads = np.asarray(grads, dtype=float)
    if grads.shape != params.flat.shape or state.m.shape != grads.shape:
        raise ConfigurationError("gradient, moment and parameter lengths differ")
    if not np.all(np.isfinite(grads)):
        raise TrainingError(f"non-finite gradient at Adam step {state.t + 1}", step=state.t + 1)
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    params.flat -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state, params
