"""Transformer encoder classifier in plain numpy, with hand-written backprop.

Activations are batched ``(B, T, d)``: B sequences of T time steps with d
features. Every op accepts any T, so one set of weights serves all
spreading factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError

LN_EPS = 1e-6
PROB_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# stateless building blocks


def pos_embedding(T: int, d: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal table: ``PE[t, 2i] = sin(t / 10000**(2i/d))``, ``PE[t, 2i+1] = cos(...)``."""
    if T < 1 or d < 1:
        raise ConfigurationError("position table needs T >= 1 and d >= 1")
    if d % 2:
        raise ConfigurationError(f"position embedding needs an even width, got {d}")
    t = np.arange(T, dtype=np.float64)[:, None]
    inv = 1.0 / 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.empty((T, d))
    pe[:, 0::2] = np.sin(t * inv)
    pe[:, 1::2] = np.cos(t * inv)
    return pe.astype(dtype)


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def _softmax_inplace(z):
    z -= z.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def cross_entropy(p: np.ndarray, label: int) -> float:
    p = np.asarray(p)
    if not 0 <= label < p.shape[-1]:
        raise IndexError(f"label {label} out of range for {p.shape[-1]} classes")
    return float(-np.log(max(p[label], PROB_FLOOR)))


def global_avg_pool(X: np.ndarray) -> np.ndarray:
    return X.mean(axis=-2)


def _layer_norm_fwd(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv, gain)


def _layer_norm_bwd(dy, cache):
    xhat, inv, gain = cache
    lead = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=lead)
    dbias = dy.sum(axis=lead)
    dxhat = dy * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def layer_norm(X: np.ndarray, gain, bias) -> np.ndarray:
    """Per-row standardization (variance epsilon 1e-6) followed by a per-feature affine map."""
    X = np.asarray(X)
    if X.shape[-1] < 2:
        raise DimensionError("layer norm needs at least two features")
    return _layer_norm_fwd(X, gain, bias)[0]


def _dense(x, W, b):
    lead = x.shape[:-1]
    return (x.reshape(-1, x.shape[-1]) @ W + b).reshape(*lead, W.shape[1])


def _dense_bwd(dy, x, W):
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dW = x2.T @ dy2
    db = dy2.sum(axis=0)
    dx = (dy2 @ W.T).reshape(x.shape)
    return dx, dW, db


def _split_heads(x, H):
    B, T, d = x.shape
    return x.reshape(B, T, H, d // H).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)


def _mha_fwd(x, p, H):
    d = x.shape[-1]
    if d % H:
        raise DimensionError(f"model width {d} is not divisible by {H} heads")
    if p["Wq"].shape[0] != d:
        raise DimensionError(f"attention expects width {p['Wq'].shape[0]}, got {d}")
    # python float keeps float32 activations from promoting
    scale = 1.0 / float(np.sqrt(d // H))
    q = _split_heads(_dense(x, p["Wq"], p["bq"]), H)
    k = _split_heads(_dense(x, p["Wk"], p["bk"]), H)
    v = _split_heads(_dense(x, p["Wv"], p["bv"]), H)
    a = _softmax_inplace((q * scale) @ k.transpose(0, 1, 3, 2))
    o = _merge_heads(a @ v)
    out = _dense(o, p["Wo"], p["bo"])
    return out, (x, q, k, v, a, o, scale, H)


def _mha_bwd(dout, p, cache):
    x, q, k, v, a, o, scale, H = cache
    g = {}
    do, g["Wo"], g["bo"] = _dense_bwd(dout, o, p["Wo"])
    do = _split_heads(do, H)
    dv = a.transpose(0, 1, 3, 2) @ do
    ds = do @ v.transpose(0, 1, 3, 2)
    # softmax backward, in place on the T x T buffer
    row = np.einsum("bhij,bhij->bhi", ds, a)[..., None]
    ds -= row
    ds *= a
    dq = (ds @ k) * scale
    dk = ds.transpose(0, 1, 3, 2) @ (q * scale)
    dx = np.zeros_like(x)
    for name, dh in (("q", dq), ("k", dk), ("v", dv)):
        dxi, g["W" + name], g["b" + name] = _dense_bwd(_merge_heads(dh), x, p["W" + name])
        dx += dxi
    return dx, g


def mha_forward(X: np.ndarray, params: dict, n_heads: int) -> np.ndarray:
    """Unmasked scaled dot-product self-attention over the rows of ``X``.

    ``params`` holds ``Wq, bq, Wk, bk, Wv, bv, Wo, bo``. Accepts ``(T, d)``
    or batched ``(B, T, d)``.
    """
    X = np.asarray(X)
    single = X.ndim == 2
    out = _mha_fwd(X[None] if single else X, params, n_heads)[0]
    return out[0] if single else out


def _ffn_fwd(x, p):
    u = _dense(x, p["W1"], p["b1"])
    r = np.maximum(u, 0)
    return _dense(r, p["W2"], p["b2"]), (x, u, r)


def _ffn_bwd(dy, p, cache):
    x, u, r = cache
    g = {}
    dr, g["W2"], g["b2"] = _dense_bwd(dy, r, p["W2"])
    du = dr * (u > 0)
    dx, g["W1"], g["b1"] = _dense_bwd(du, x, p["W1"])
    return dx, g


def ffn_forward(X: np.ndarray, params: dict) -> np.ndarray:
    """Row-wise dense -> ReLU -> dense with ``W1, b1, W2, b2``."""
    X = np.asarray(X)
    if X.shape[-1] != params["W1"].shape[0]:
        raise DimensionError(f"feed-forward expects width {params['W1'].shape[0]}, got {X.shape[-1]}")
    return _ffn_fwd(X, params)[0]


# ---------------------------------------------------------------------------
# model


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


class Transformer:
    """Position embedding, post-norm encoder blocks, average pooling and a softmax head.

    Parameters live in the flat ``params`` dict under dotted names such as
    ``block0.attn.Wq``; ``grads`` mirrors it after :meth:`backward`.
    """

    def __init__(self, d_model=64, n_heads=4, d_ff=128, n_blocks=2, n_classes=10, dtype=np.float32):
        if d_model % n_heads:
            raise ConfigurationError("d_model must be divisible by n_heads")
        if d_model % 2:
            raise ConfigurationError("d_model must be even for the sinusoidal position table")
        self.d_model, self.n_heads, self.d_ff = d_model, n_heads, d_ff
        self.n_blocks, self.n_classes = n_blocks, n_classes
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None
        self._pe = pos_embedding(1, d_model, np.float64)

    def init(self, seed: int) -> "Transformer":
        rng = np.random.default_rng(seed)
        d, f = self.d_model, self.d_ff
        p = {}
        for i in range(self.n_blocks):
            pre = f"block{i}."
            for name in "qkvo":
                p[pre + f"attn.W{name}"] = glorot_uniform(rng, d, d)
                p[pre + f"attn.b{name}"] = np.zeros(d)
            p[pre + "ln1.gain"], p[pre + "ln1.bias"] = np.ones(d), np.zeros(d)
            p[pre + "ffn.W1"], p[pre + "ffn.b1"] = glorot_uniform(rng, d, f), np.zeros(f)
            p[pre + "ffn.W2"], p[pre + "ffn.b2"] = glorot_uniform(rng, f, d), np.zeros(d)
            p[pre + "ln2.gain"], p[pre + "ln2.bias"] = np.ones(d), np.zeros(d)
        p["head.W"] = glorot_uniform(rng, d, self.n_classes)
        p["head.b"] = np.zeros(self.n_classes)
        self.params = {k: v.astype(self.dtype) for k, v in p.items()}
        return self

    def astype(self, dtype) -> "Transformer":
        self.dtype = np.dtype(dtype)
        self.params = {k: v.astype(self.dtype) for k, v in self.params.items()}
        return self

    @property
    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    def _sub(self, prefix):
        n = len(prefix)
        return {k[n:]: v for k, v in self.params.items() if k.startswith(prefix)}

    def position_table(self, T: int) -> np.ndarray:
        if self._pe.shape[0] < T:
            self._pe = pos_embedding(max(T, 2 * self._pe.shape[0]), self.d_model, np.float64)
        return self._pe[:T].astype(self.dtype)

    def forward(self, X: np.ndarray, keep_cache: bool = False) -> np.ndarray:
        """Class probabilities ``(B, K)`` for inputs ``(B, T, d_model)``."""
        X = np.asarray(X, dtype=self.dtype)
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3 or X.shape[-1] != self.d_model:
            raise DimensionError(f"expected input (B, T, {self.d_model}), got {X.shape}")
        if X.shape[1] < 1:
            raise DimensionError("input needs at least one time step")
        h = X + self.position_table(X.shape[1])
        caches = []
        for i in range(self.n_blocks):
            pre = f"block{i}."
            att, c_att = _mha_fwd(h, self._sub(pre + "attn."), self.n_heads)
            h1, c_ln1 = _layer_norm_fwd(h + att, self.params[pre + "ln1.gain"], self.params[pre + "ln1.bias"])
            ff, c_ffn = _ffn_fwd(h1, self._sub(pre + "ffn."))
            h, c_ln2 = _layer_norm_fwd(h1 + ff, self.params[pre + "ln2.gain"], self.params[pre + "ln2.bias"])
            caches.append((c_att, c_ln1, c_ffn, c_ln2))
        pooled = global_avg_pool(h)
        probs = softmax(pooled @ self.params["head.W"] + self.params["head.b"])
        if keep_cache:
            self._cache = (caches, pooled, probs, h.shape[1])
        return probs

    def loss(self, X: np.ndarray, labels: np.ndarray, keep_cache: bool = False) -> float:
        """Mean cross-entropy over the batch."""
        probs = self.forward(X, keep_cache=keep_cache)
        labels = np.asarray(labels)
        picked = probs[np.arange(labels.shape[0]), labels].astype(np.float64)
        return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))

    def backward(self, labels: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of the mean cross-entropy of the last cached forward pass."""
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        caches, pooled, probs, T = self._cache
        labels = np.asarray(labels)
        B = probs.shape[0]
        rows = np.arange(B)
        dz = probs.copy()
        dz[rows, labels] -= 1
        # loss is flat where the floor is active
        dz[probs[rows, labels] < PROB_FLOOR] = 0
        dz /= B
        g = {"head.W": pooled.T @ dz, "head.b": dz.sum(axis=0)}
        dh = np.repeat((dz @ self.params["head.W"].T)[:, None, :] / T, T, axis=1)
        for i in reversed(range(self.n_blocks)):
            pre = f"block{i}."
            c_att, c_ln1, c_ffn, c_ln2 = caches[i]
            dz2, g[pre + "ln2.gain"], g[pre + "ln2.bias"] = _layer_norm_bwd(dh, c_ln2)
            dh1, gf = _ffn_bwd(dz2, self._sub(pre + "ffn."), c_ffn)
            dh1 += dz2
            g.update({pre + "ffn." + k: v for k, v in gf.items()})
            dz1, g[pre + "ln1.gain"], g[pre + "ln1.bias"] = _layer_norm_bwd(dh1, c_ln1)
            dh, ga = _mha_bwd(dz1, self._sub(pre + "attn."), c_att)
            dh += dz1
            g.update({pre + "attn." + k: v for k, v in ga.items()})
        self.grads = {k: g[k].astype(self.dtype) for k in self.params}
        return self.grads

    def loss_and_grads(self, X, labels):
        loss = self.loss(X, labels, keep_cache=True)
        grads = self.backward(labels)
        self._cache = None
        return loss, grads


def backward(model: Transformer, batch) -> dict[str, np.ndarray]:
    """Gradients of the mean cross-entropy over ``batch = (X, labels)``."""
    X, labels = batch
    return model.loss_and_grads(X, labels)[1]


# ---------------------------------------------------------------------------
# optimizer


def rmsprop_step(params, grads, state, lr, rho=0.9, eps=1e-7):
    """In-place RMSprop update; ``state`` maps names to running mean squares."""
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        v = state.get(name)
        if v is None:
            v = state[name] = np.zeros_like(p)
        v *= rho
        v += (1 - rho) * g * g
        p -= (lr * g / (np.sqrt(v) + eps)).astype(p.dtype)
    return params, state


# ---------------------------------------------------------------------------
# gradient verification


def layer_type(name: str) -> str:
    for key in ("attn", "ffn", "ln", "head"):
        if f".{key}" in name or name.startswith(key):
            return key
    return name


# The key bias adds q.bk to every score of a query row; softmax cancels the
# shift, so its exact gradient is identically zero and a relative error is 0/0.
INERT_SUFFIXES = ("attn.bk",)
INERT_ABS_TOL = 1e-9


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: list = field(default_factory=list)  # (name, flat index, analytic, numeric, rel)
    inert_max_abs: float = 0.0

    def worst(self, n=5):
        return sorted(self.checked, key=lambda c: -c[4])[:n]


def rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(model: Transformer, batch, h=1e-5, n_per_type=200, seed=0, grads=None) -> GradCheckResult:
    """Compare analytic gradients with central differences on sampled scalars.

    Samples ``n_per_type`` scalars (or all, if fewer exist) from each of the
    attention, feed-forward, layer-norm and head parameter groups. Pass
    ``grads`` to check a supplied gradient instead of the model's own.
    Parameters in ``INERT_SUFFIXES`` are checked absolutely: both gradients
    must stay below ``INERT_ABS_TOL``, otherwise they count as rel error 1.
    """
    if model.dtype != np.float64:
        raise ConfigurationError("grad_check requires a float64 model")
    X, labels = batch
    if grads is None:
        grads = {k: v.copy() for k, v in backward(model, batch).items()}
    rng = np.random.default_rng(seed)
    groups: dict[str, list] = {}
    for name, p in model.params.items():
        groups.setdefault(layer_type(name), []).extend((name, i) for i in range(p.size))
    result = GradCheckResult(0.0)
    for key in sorted(groups):
        pool = groups[key]
        take = rng.choice(len(pool), size=min(n_per_type, len(pool)), replace=False)
        for j in np.sort(take):
            name, i = pool[j]
            flat = model.params[name].reshape(-1)
            orig = flat[i]
            flat[i] = orig + h
            fp = model.loss(X, labels)
            flat[i] = orig - h
            fm = model.loss(X, labels)
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            ana = float(grads[name].reshape(-1)[i])
            if name.endswith(INERT_SUFFIXES):
                worst = max(abs(ana), abs(num))
                result.inert_max_abs = max(result.inert_max_abs, worst)
                r = 0.0 if worst <= INERT_ABS_TOL else 1.0
            else:
                r = rel_error(ana, num)
            result.checked.append((name, int(i), ana, num, r))
            result.max_rel_error = max(result.max_rel_error, r)
    return result
