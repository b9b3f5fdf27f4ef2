"""Attention-based trajectory evaluator with hand-written backpropagation.

Sequence embedder: per-step linear map modulated by a sinusoidal position
code. Tracks and futures are mean-pooled to one vector before the tanh;
paths keep one tanh vector per waypoint. Four residual attention blocks
follow:

    P2T  track encodings attend to the path waypoints
    A2A  self-attention among the agents of one path
    P2F  future encodings attend to the path waypoints
    F2F  self-attention among all futures of the scene

The descriptor of future j on path i is [X_i(target), Y_i(target), Z_j].
Each descriptor is layer-normalized (no learned affine) and a 3-layer
leaky-ReLU MLP maps it to a logit; scores are the softmax of the logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .features import SceneFeatures

BLOCKS = ("p2t", "a2a", "p2f", "f2f")
EMBEDDERS = {"path": 3, "track": 5, "future": 4}
PE_GAIN = 0.5  # position code modulates the pre-activation by a factor in [0.5, 1.5]
PROB_FLOOR = 1e-12
LEAK = 0.1  # negative-side slope of the head's leaky ReLU
NORM_EPS = 1e-5


def param_shapes(width: int) -> dict[str, tuple[int, ...]]:
    W = width
    shapes: dict[str, tuple[int, ...]] = {}
    for name, n_in in EMBEDDERS.items():
        shapes[f"emb_{name}_w"] = (W, n_in)
        shapes[f"emb_{name}_b"] = (W,)
    for blk in BLOCKS:
        for p in "qkv":
            shapes[f"{blk}_{p}"] = (W, W)
    shapes.update(head_w1=(3 * W, W), head_b1=(W,), head_w2=(W, W), head_b2=(W,), head_w3=(W,))
    return shapes


@dataclass
class ModelParams:
    width: int
    arrays: dict[str, np.ndarray]
    seed: int | None = None

    def __post_init__(self):
        expected = param_shapes(self.width)
        if set(expected) != set(self.arrays):
            missing = sorted(set(expected) - set(self.arrays))
            extra = sorted(set(self.arrays) - set(expected))
            raise ValueError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
        for k, shape in expected.items():
            a = np.asarray(self.arrays[k], dtype=float)
            if a.shape != shape:
                raise ValueError(f"parameter {k} has shape {a.shape}, expected {shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"parameter {k} is not finite")
            self.arrays[k] = a

    @classmethod
    def init(cls, width: int = 32, seed: int = 0) -> "ModelParams":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every entry."""
        if width < 1:
            raise ValueError("width must be positive")
        rng = np.random.default_rng(seed)
        arrays = {}
        for name, shape in param_shapes(width).items():
            if name.startswith("emb_"):
                fan = EMBEDDERS[name.split("_")[1]]
            elif name == "head_w1":
                fan = 3 * width
            else:
                fan = width
            bound = 1.0 / math.sqrt(fan)
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        return cls(width, arrays, seed)

    def copy(self) -> "ModelParams":
        return ModelParams(self.width, {k: v.copy() for k, v in self.arrays.items()}, self.seed)

    @property
    def names(self) -> list[str]:
        return list(param_shapes(self.width))

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.arrays[k].ravel() for k in self.names])

    def with_flat(self, vec: np.ndarray) -> "ModelParams":
        out, i = {}, 0
        for k, shape in param_shapes(self.width).items():
            n = int(np.prod(shape))
            out[k] = np.array(vec[i:i + n]).reshape(shape)
            i += n
        return ModelParams(self.width, out, self.seed)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]


def flatten_grads(grads: dict[str, np.ndarray], width: int) -> np.ndarray:
    return np.concatenate([grads[k].ravel() for k in param_shapes(width)])


# ------------------------------------------------------------------ primitives

@lru_cache(maxsize=64)
def positional_encoding(length: int, width: int) -> np.ndarray:
    """Sinusoidal code: sin on even channels, cos on odd ones."""
    pos = np.arange(length)[:, None]
    i = np.arange(width)[None, :]
    rate = 1.0 / 10000.0 ** ((i - i % 2) / width)
    pe = np.where(i % 2 == 0, np.sin(pos * rate), np.cos(pos * rate))
    pe.setflags(write=False)
    return pe


def softmax(z, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def attention(queries, keys, values) -> np.ndarray:
    """softmax(Q K^T / sqrt(width)) V, one output row per query row."""
    q, k, v = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (queries, keys, values))
    if len(k) != len(v) or len(k) == 0:
        raise ValueError("need at least one key and as many values as keys")
    return softmax(q @ k.T / math.sqrt(q.shape[-1]), axis=-1) @ v


def embed_sequence(features: np.ndarray, w: np.ndarray, b: np.ndarray, pool: bool = True) -> np.ndarray:
    """Encode (L, in) or (B, L, in) sequences; mean-pooled unless pool=False."""
    x = np.asarray(features, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[1] == 0:
        raise ValueError("cannot embed an empty sequence")
    out, _ = _embed(w, b, x, pool)
    return out[0] if single else out


def _embed(w, b, x, pool=False):
    # pooling happens before the nonlinearity, so the pooled code is a
    # position-weighted linear functional of the whole sequence
    m = 1.0 + PE_GAIN * positional_encoding(x.shape[1], w.shape[0])
    a = (x @ w.T + b) * m
    out = np.tanh(a.mean(axis=1) if pool else a)
    return out, (x, m, out)


def _embed_back(dout, cache):
    x, m, out = cache
    da = dout * (1.0 - out**2)
    if da.ndim == 2:
        da = da[:, None, :] / x.shape[1]
    da = da * m
    return np.einsum("blw,bli->wi", da, x), da.sum(axis=(0, 1))


def _block(xq, xkv, wq, wk, wv):
    q, k, v = xq @ wq, xkv @ wk, xkv @ wv
    a = softmax(q @ k.T / math.sqrt(wq.shape[1]), axis=-1)
    return xq + a @ v, (xq, xkv, q, k, v, a)


def _block_back(dout, cache, wq, wk, wv):
    xq, xkv, q, k, v, a = cache
    scale = 1.0 / math.sqrt(wq.shape[1])
    da = dout @ v.T
    dv = a.T @ dout
    ds = a * (da - np.sum(da * a, axis=-1, keepdims=True)) * scale
    dq = ds @ k
    dk = ds.T @ q
    dxq = dout + dq @ wq.T
    dxkv = dk @ wk.T + dv @ wv.T
    return dxq, dxkv, xq.T @ dq, xkv.T @ dk, xkv.T @ dv


# --------------------------------------------------------------------- network

@dataclass
class EncodedScene:
    paths: list[np.ndarray]  # per path (M_i, W)
    tracks: list[np.ndarray]  # per path (m+1, W)
    futures: np.ndarray  # (n, W)
    future_path: np.ndarray
    caches: dict = field(default_factory=dict, repr=False)


def encode(params: ModelParams, feats: SceneFeatures) -> EncodedScene:
    p = params.arrays
    caches = {"path": [], "track": [], "future": []}
    paths, tracks = [], []
    for i in range(feats.n_paths):
        h, c = _embed(p["emb_path_w"], p["emb_path_b"], feats.paths[i][None])
        paths.append(h[0])
        caches["path"].append(c)
        t, c = _embed(p["emb_track_w"], p["emb_track_b"], feats.tracks[i], pool=True)
        tracks.append(t)
        caches["track"].append(c)
    f, c = _embed(p["emb_future_w"], p["emb_future_b"], feats.futures, pool=True)
    caches["future"] = c
    return EncodedScene(paths, tracks, f, feats.future_path, caches)


def interact(params: ModelParams, enc: EncodedScene, _cache: dict | None = None) -> np.ndarray:
    """Per-future descriptors U of width 3W, in generator order."""
    p = params.arrays
    xs, ys, gs = [], [], []
    blocks = {"p2t": [], "a2a": [], "p2f": []}
    for i, (h, t) in enumerate(zip(enc.paths, enc.tracks)):
        x, c1 = _block(t, h, p["p2t_q"], p["p2t_k"], p["p2t_v"])
        y, c2 = _block(x, x, p["a2a_q"], p["a2a_k"], p["a2a_v"])
        g, c3 = _block(enc.futures[enc.future_path == i], h, p["p2f_q"], p["p2f_k"], p["p2f_v"])
        xs.append(x)
        ys.append(y)
        gs.append(g)
        blocks["p2t"].append(c1)
        blocks["a2a"].append(c2)
        blocks["p2f"].append(c3)
    z, c4 = _block(np.concatenate(gs), np.concatenate(gs), p["f2f_q"], p["f2f_k"], p["f2f_v"])
    xt = np.stack([x[0] for x in xs])[enc.future_path]
    yt = np.stack([y[0] for y in ys])[enc.future_path]
    if _cache is not None:
        _cache.update(blocks=blocks, f2f=c4)
    return np.concatenate([xt, yt, z], axis=1)


def leaky_relu(x) -> np.ndarray:
    return np.where(x > 0, x, LEAK * x)


def _leaky_back(dout, out):
    # the sign of the output equals the sign of the pre-activation
    return dout * np.where(out > 0, 1.0, LEAK)


def normalize_rows(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero-mean, unit-variance rows (parameter-free layer normalization)."""
    sd = np.sqrt(u.var(axis=-1, keepdims=True) + NORM_EPS)
    return (u - u.mean(axis=-1, keepdims=True)) / sd, sd


def _normalize_back(dout, un, sd):
    return (dout - dout.mean(axis=-1, keepdims=True) - un * np.mean(dout * un, axis=-1, keepdims=True)) / sd


def head(params: ModelParams, u: np.ndarray, _cache: dict | None = None) -> np.ndarray:
    """Logits from descriptors; each descriptor is normalized first."""
    p = params.arrays
    un, sd = normalize_rows(u)
    h1 = leaky_relu(un @ p["head_w1"] + p["head_b1"])
    h2 = leaky_relu(h1 @ p["head_w2"] + p["head_b2"])
    if _cache is not None:
        _cache.update(u=un, sd=sd, h1=h1, h2=h2)
    return h2 @ p["head_w3"]


def logits(params: ModelParams, feats: SceneFeatures, _cache: dict | None = None) -> np.ndarray:
    enc = encode(params, feats)
    u = interact(params, enc, _cache)
    if _cache is not None:
        _cache["enc"] = enc
    return head(params, u, _cache)


def score_logits(f) -> np.ndarray:
    """Max-entropy scores: softmax of the logits with max subtraction."""
    f = np.asarray(f, dtype=float)
    if f.ndim != 1 or len(f) == 0:
        raise ValueError("need a non-empty vector of logits")
    return softmax(f)


def score(params: ModelParams, feats: SceneFeatures) -> np.ndarray:
    return score_logits(logits(params, feats))


def make_labels(trajectories, ground_truth, tau: float = 1.0) -> np.ndarray:
    """psi = softmax(-Dist / tau); Dist sums squared position errors over steps.

    ``trajectories`` is a (n, N, 2) array or a sequence of Trajectory.
    """
    pos = trajectories if isinstance(trajectories, np.ndarray) else np.stack(
        [t.positions for t in trajectories])
    gt = np.asarray(ground_truth, dtype=float)
    if pos.ndim != 3 or pos.shape[1:] != gt.shape:
        raise ValueError(f"ground truth shape {gt.shape} does not match trajectories {pos.shape[1:]}")
    if not tau > 0:
        raise ValueError("tau must be positive")
    dist = np.sum((pos - gt) ** 2, axis=(1, 2))
    return softmax(-dist / tau)


def cross_entropy(gamma, psi) -> float:
    """-sum psi * ln(max(gamma, 1e-12))."""
    gamma, psi = np.asarray(gamma, dtype=float), np.asarray(psi, dtype=float)
    if gamma.shape != psi.shape:
        raise ValueError("gamma and psi must have equal length")
    return float(-np.sum(psi * np.log(np.maximum(gamma, PROB_FLOOR))))


def _dloss_dlogits(gamma, psi):
    g = np.where(gamma >= PROB_FLOOR, -psi / np.where(gamma >= PROB_FLOOR, gamma, 1.0), 0.0)
    return gamma * (g - np.dot(gamma, g))


def loss_and_grad(params: ModelParams, feats: SceneFeatures, psi: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Cross-entropy loss of one scene and its gradient for every parameter."""
    p = params.arrays
    W = params.width
    cache: dict = {}
    f = logits(params, feats, cache)
    gamma = score_logits(f)
    loss = cross_entropy(gamma, psi)
    grads = {k: np.zeros_like(v) for k, v in p.items()}

    df = _dloss_dlogits(gamma, psi)
    u, h1, h2 = cache["u"], cache["h1"], cache["h2"]
    grads["head_w3"] = h2.T @ df
    da2 = _leaky_back(np.outer(df, p["head_w3"]), h2)
    grads["head_w2"] = h1.T @ da2
    grads["head_b2"] = da2.sum(axis=0)
    da1 = _leaky_back(da2 @ p["head_w2"].T, h1)
    grads["head_w1"] = u.T @ da1
    grads["head_b1"] = da1.sum(axis=0)
    du = _normalize_back(da1 @ p["head_w1"].T, u, cache["sd"])

    enc: EncodedScene = cache["enc"]
    fp = enc.future_path
    n_paths = len(enc.paths)
    dz = du[:, 2 * W:]
    dg, dg_kv, gq, gk, gv = _block_back(dz, cache["f2f"], p["f2f_q"], p["f2f_k"], p["f2f_v"])
    dg = dg + dg_kv
    grads["f2f_q"] += gq
    grads["f2f_k"] += gk
    grads["f2f_v"] += gv

    dfut = np.zeros_like(enc.futures)
    dpaths = [np.zeros_like(h) for h in enc.paths]
    dtracks = [np.zeros_like(t) for t in enc.tracks]
    blocks = cache["blocks"]
    for i in range(n_paths):
        sel = fp == i
        dfi, dh, gq, gk, gv = _block_back(dg[sel], blocks["p2f"][i], p["p2f_q"], p["p2f_k"], p["p2f_v"])
        dfut[sel] = dfi
        dpaths[i] += dh
        grads["p2f_q"] += gq
        grads["p2f_k"] += gk
        grads["p2f_v"] += gv

        dy = np.zeros_like(enc.tracks[i])
        dy[0] = du[sel, W:2 * W].sum(axis=0)
        dx, dx_kv, gq, gk, gv = _block_back(dy, blocks["a2a"][i], p["a2a_q"], p["a2a_k"], p["a2a_v"])
        dx = dx + dx_kv
        dx[0] += du[sel, :W].sum(axis=0)
        grads["a2a_q"] += gq
        grads["a2a_k"] += gk
        grads["a2a_v"] += gv
        dt, dh, gq, gk, gv = _block_back(dx, blocks["p2t"][i], p["p2t_q"], p["p2t_k"], p["p2t_v"])
        dtracks[i] += dt
        dpaths[i] += dh
        grads["p2t_q"] += gq
        grads["p2t_k"] += gk
        grads["p2t_v"] += gv

    caches = enc.caches
    for i in range(n_paths):
        gw, gb = _embed_back(dpaths[i][None], caches["path"][i])
        grads["emb_path_w"] += gw
        grads["emb_path_b"] += gb
        gw, gb = _embed_back(dtracks[i], caches["track"][i])
        grads["emb_track_w"] += gw
        grads["emb_track_b"] += gb
    gw, gb = _embed_back(dfut, caches["future"])
    grads["emb_future_w"] += gw
    grads["emb_future_b"] += gb
    return loss, grads


def scene_loss(params: ModelParams, feats: SceneFeatures, psi: np.ndarray) -> float:
    return cross_entropy(score(params, feats), psi)
