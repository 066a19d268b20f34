"""Implicit-quantile network with noisy dueling heads and a hand-written backward pass.

Parameters live in a flat ``dict[str, ndarray]`` so they can be copied,
serialized and compared without any framework. Every layer exposes
``forward(params, x, noise) -> (y, cache)`` and
``backward(params, cache, dy, grads) -> dx``, accumulating into ``grads``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

N_COS = 64


class ShapeError(ValueError):
    pass


def f_noise(x: np.ndarray) -> np.ndarray:
    """Factorized-noise transform ``sgn(x) * sqrt(|x|)``."""
    return np.sign(x) * np.sqrt(np.abs(x))


def sample_taus(count, rng: np.random.Generator, batch: int | None = None) -> np.ndarray:
    """I.i.d. uniform quantile fractions strictly inside (0, 1)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    shape = (count,) if batch is None else (batch, count)
    taus = rng.random(shape)
    # Generator.random can return exactly 0.0
    return np.where(taus == 0.0, np.nextafter(0.0, 1.0), taus)


def cosine_features(taus: np.ndarray, n_cos: int = N_COS) -> np.ndarray:
    """``cos(pi * i * tau)`` for ``i = 0..n_cos-1``, appended as a last axis."""
    i = np.arange(n_cos, dtype=np.float64)
    return np.cos(np.pi * np.asarray(taus, dtype=np.float64)[..., None] * i)


@dataclass
class NetworkSpec:
    """Architecture descriptor.

    ``input_kind`` is ``"flat"`` (vector input feeding the ``hidden`` MLP) or
    ``"conv"`` (``(C, H, W)`` input feeding ``conv`` layers given as
    ``(channels, kernel, stride)``).
    """

    input_kind: str = "flat"
    input_shape: tuple = (8,)
    hidden: tuple = (64, 64)
    conv: tuple = ((32, 8, 4), (64, 4, 2), (64, 3, 1))
    head_hidden: int = 64
    n_actions: int = 18
    n_cos: int = N_COS
    sigma0: float = 0.5
    noisy: bool = True

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.conv = tuple(tuple(int(v) for v in c) for c in self.conv)
        if self.input_kind not in ("flat", "conv"):
            raise ValueError(f"unknown input kind {self.input_kind!r}")
        if self.input_kind == "conv" and len(self.input_shape) != 3:
            raise ValueError("conv input needs a (C, H, W) shape")
        if self.input_kind == "flat" and len(self.input_shape) != 1:
            raise ValueError("flat input needs a 1-d shape")

    @classmethod
    def atari(cls, n_actions: int = 18) -> "NetworkSpec":
        return cls(input_kind="conv", input_shape=(4, 84, 84), head_hidden=512, n_actions=n_actions)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**d)


class Dense:
    """Affine layer; with ``noisy`` it carries factorized-Gaussian sigmas."""

    def __init__(self, name: str, n_in: int, n_out: int, noisy: bool = False):
        self.name, self.n_in, self.n_out, self.noisy = name, n_in, n_out, noisy

    def init(self, rng, params, sigma0, dtype):
        bound = 1.0 / math.sqrt(self.n_in)
        params[f"{self.name}.w_mu"] = rng.uniform(-bound, bound, (self.n_in, self.n_out)).astype(dtype)
        params[f"{self.name}.b_mu"] = rng.uniform(-bound, bound, self.n_out).astype(dtype)
        if self.noisy:
            s = sigma0 / math.sqrt(self.n_in)
            params[f"{self.name}.w_sigma"] = np.full((self.n_in, self.n_out), s, dtype=dtype)
            params[f"{self.name}.b_sigma"] = np.full(self.n_out, s, dtype=dtype)

    def effective(self, params, noise):
        w = params[f"{self.name}.w_mu"]
        b = params[f"{self.name}.b_mu"]
        eps = noise.get(self.name) if (self.noisy and noise) else None
        if eps is not None:
            e_in, e_out = eps
            w = w + params[f"{self.name}.w_sigma"] * np.outer(e_in, e_out).astype(w.dtype)
            b = b + params[f"{self.name}.b_sigma"] * e_out.astype(b.dtype)
        return w, b, eps

    def forward(self, params, x, noise=None):
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"{self.name}: expected last axis {self.n_in}, got {x.shape}")
        w, b, eps = self.effective(params, noise)
        return x @ w + b, (x, w, eps)

    def backward(self, params, cache, dy, grads):
        x, w, eps = cache
        x2 = x.reshape(-1, self.n_in)
        dy2 = dy.reshape(-1, self.n_out)
        dw = x2.T @ dy2
        db = dy2.sum(axis=0)
        grads[f"{self.name}.w_mu"] += dw
        grads[f"{self.name}.b_mu"] += db
        if self.noisy:
            if eps is not None:
                e_in, e_out = eps
                grads[f"{self.name}.w_sigma"] += dw * np.outer(e_in, e_out)
                grads[f"{self.name}.b_sigma"] += db * e_out
        return dy @ w.T


class Conv2D:
    """Valid-padding strided convolution on ``(B, C, H, W)`` via im2col."""

    def __init__(self, name: str, c_in: int, c_out: int, kernel: int, stride: int):
        self.name, self.c_in, self.c_out, self.k, self.s = name, c_in, c_out, kernel, stride

    def out_hw(self, h, w):
        ho = (h - self.k) // self.s + 1
        wo = (w - self.k) // self.s + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"{self.name}: input {h}x{w} smaller than kernel {self.k}")
        return ho, wo

    def init(self, rng, params, sigma0, dtype):
        fan_in = self.c_in * self.k * self.k
        bound = 1.0 / math.sqrt(fan_in)
        params[f"{self.name}.w"] = rng.uniform(-bound, bound, (self.c_out, self.c_in, self.k, self.k)).astype(dtype)
        params[f"{self.name}.b"] = rng.uniform(-bound, bound, self.c_out).astype(dtype)

    def forward(self, params, x, noise=None):
        B, C, H, W = x.shape
        if C != self.c_in:
            raise ShapeError(f"{self.name}: expected {self.c_in} channels, got {C}")
        ho, wo = self.out_hw(H, W)
        win = np.lib.stride_tricks.sliding_window_view(x, (self.k, self.k), axis=(2, 3))
        win = win[:, :, :: self.s, :: self.s][:, :, :ho, :wo]  # B,C,ho,wo,k,k
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B, ho, wo, C * self.k * self.k)
        wmat = params[f"{self.name}.w"].reshape(self.c_out, -1)
        y = cols @ wmat.T + params[f"{self.name}.b"]
        return y.transpose(0, 3, 1, 2), (x.shape, cols)

    def backward(self, params, cache, dy, grads):
        (B, C, H, W), cols = cache
        ho, wo = dy.shape[2], dy.shape[3]
        dy2 = dy.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        wmat = params[f"{self.name}.w"].reshape(self.c_out, -1)
        grads[f"{self.name}.w"] += (dy2.T @ cols.reshape(-1, cols.shape[-1])).reshape(grads[f"{self.name}.w"].shape)
        grads[f"{self.name}.b"] += dy2.sum(axis=0)
        dcols = (dy2 @ wmat).reshape(B, ho, wo, C, self.k, self.k)
        dx = np.zeros((B, C, H, W), dtype=dy.dtype)
        s = self.s
        for i in range(self.k):
            for j in range(self.k):
                dx[:, :, i: i + s * (ho - 1) + 1: s, j: j + s * (wo - 1) + 1: s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dx


def relu_backward(y, dy):
    return dy * (y > 0)


@dataclass
class ForwardCache:
    trunk: list = field(default_factory=list)
    psi: np.ndarray | None = None
    phi: np.ndarray | None = None
    emb: tuple | None = None
    heads: dict = field(default_factory=dict)


class QuantileNetwork:
    """State trunk, cosine quantile embedding, and dueling noisy heads.

    ``forward`` maps states ``(B, *input_shape)`` and fractions ``(B, N)`` to
    quantile values ``(B, N, n_actions)``.
    """

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.trunk: list = []
        if spec.input_kind == "flat":
            n = spec.input_shape[0]
            for i, h in enumerate(spec.hidden):
                self.trunk.append(Dense(f"trunk{i}", n, h))
                n = h
            self.feature_dim = n
        else:
            c, h, w = spec.input_shape
            for i, (ch, k, s) in enumerate(spec.conv):
                layer = Conv2D(f"conv{i}", c, ch, k, s)
                h, w = layer.out_hw(h, w)
                self.trunk.append(layer)
                c = ch
            self.feature_dim = c * h * w
        d = self.feature_dim
        self.embed = Dense("embed", spec.n_cos, d)
        self.v1 = Dense("value0", d, spec.head_hidden, spec.noisy)
        self.v2 = Dense("value1", spec.head_hidden, 1, spec.noisy)
        self.a1 = Dense("adv0", d, spec.head_hidden, spec.noisy)
        self.a2 = Dense("adv1", spec.head_hidden, spec.n_actions, spec.noisy)
        self.noisy_layers = [l for l in (self.v1, self.v2, self.a1, self.a2) if l.noisy]

    @property
    def layers(self):
        return [*self.trunk, self.embed, self.v1, self.v2, self.a1, self.a2]

    def init_params(self, rng: np.random.Generator, dtype=np.float64) -> dict:
        params: dict[str, np.ndarray] = {}
        for layer in self.layers:
            layer.init(rng, params, self.spec.sigma0, dtype)
        return params

    def zero_grads(self, params) -> dict:
        return {k: np.zeros(v.shape, dtype=np.float64) for k, v in params.items()}

    def noisy_resample(self, rng: np.random.Generator) -> dict:
        """Fresh factorized noise ``(f(eps_in), f(eps_out))`` for every noisy layer."""
        return {
            l.name: (f_noise(rng.standard_normal(l.n_in)), f_noise(rng.standard_normal(l.n_out)))
            for l in self.noisy_layers
        }

    def zero_noise(self) -> dict:
        return {l.name: (np.zeros(l.n_in), np.zeros(l.n_out)) for l in self.noisy_layers}

    # -- forward / backward --

    def _trunk_forward(self, params, x, cache):
        if x.shape[1:] != self.spec.input_shape:
            raise ShapeError(f"state shape {x.shape[1:]} != {self.spec.input_shape}")
        h = x
        for layer in self.trunk:
            y, c = layer.forward(params, h)
            h = np.maximum(y, 0)
            cache.trunk.append((c, h))
        return h.reshape(h.shape[0], -1)

    def forward(self, params, states, taus, noise=None):
        """Return ``(theta, cache)``; ``theta`` has shape ``(B, N, n_actions)``."""
        dtype = next(iter(params.values())).dtype
        states = np.asarray(states, dtype=dtype)
        taus = np.asarray(taus)
        if taus.ndim != 2 or taus.shape[0] != states.shape[0]:
            raise ShapeError(f"taus must be (B, N) with B={states.shape[0]}, got {taus.shape}")
        cache = ForwardCache()
        psi = self._trunk_forward(params, states, cache)
        feats = cosine_features(taus, self.spec.n_cos).astype(dtype)
        e, ec = self.embed.forward(params, feats)
        phi = np.maximum(e, 0)
        h = psi[:, None, :] * phi
        v_pre, vc1 = self.v1.forward(params, h, noise)
        v_hid = np.maximum(v_pre, 0)
        value, vc2 = self.v2.forward(params, v_hid, noise)
        a_pre, ac1 = self.a1.forward(params, h, noise)
        a_hid = np.maximum(a_pre, 0)
        adv, ac2 = self.a2.forward(params, a_hid, noise)
        theta = value + adv - adv.mean(axis=-1, keepdims=True)
        cache.psi, cache.phi, cache.emb = psi, phi, (ec, h)
        cache.heads = {"v": (vc1, v_hid, vc2), "a": (ac1, a_hid, ac2)}
        return theta, cache

    def backward(self, params, cache: ForwardCache, dtheta) -> dict:
        grads = self.zero_grads(params)
        dtheta = np.asarray(dtheta, dtype=np.float64)
        dvalue = dtheta.sum(axis=-1, keepdims=True)
        dadv = dtheta - dtheta.mean(axis=-1, keepdims=True)
        vc1, v_hid, vc2 = cache.heads["v"]
        ac1, a_hid, ac2 = cache.heads["a"]
        dh = self.v1.backward(params, vc1, relu_backward(v_hid, self.v2.backward(params, vc2, dvalue, grads)), grads)
        dh = dh + self.a1.backward(params, ac1, relu_backward(a_hid, self.a2.backward(params, ac2, dadv, grads)), grads)
        ec, _ = cache.emb
        dpsi = (dh * cache.phi).sum(axis=1)
        dphi = dh * cache.psi[:, None, :]
        self.embed.backward(params, ec, relu_backward(cache.phi, dphi), grads)
        d = dpsi
        for layer, (c, h) in zip(reversed(self.trunk), reversed(cache.trunk)):
            d = layer.backward(params, c, relu_backward(h, d.reshape(h.shape)), grads)
        return grads

    # -- action values --

    def q_values(self, params, states, taus=None, noise=None, k: int = 32, rng=None):
        """Mean over ``k`` quantile fractions of the quantile values, shape ``(B, n_actions)``.

        Without explicit ``taus`` the fractions are drawn from ``rng``, or taken
        from the midpoint grid ``(i + 0.5) / k`` when no generator is given.
        """
        states = np.asarray(states)
        B = states.shape[0]
        if taus is None:
            if rng is None:
                taus = np.broadcast_to((np.arange(k) + 0.5) / k, (B, k))
            else:
                taus = sample_taus(k, rng, batch=B)
        theta, _ = self.forward(params, states, taus, noise)
        return theta.mean(axis=1)


def copy_params(params: dict) -> dict:
    return {k: v.copy() for k, v in params.items()}


def params_equal(a: dict, b: dict) -> bool:
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)
