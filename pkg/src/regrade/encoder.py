"""Toy patch-embedding transformer image encoder with hand-written backprop.

The model is deliberately small (defaults: 64px images, 16px patches, two
pre-norm transformer layers, 4 heads, D=64) and runs in float64 so analytic
gradients can be verified against central finite differences. The backward
pass doubles as the saliency engine: in guided mode the ReLU backward rule
additionally zeroes positions whose incoming gradient is negative.

Layout of the 9 semantic classes everywhere: grades 0..4 then lesions
MA, HE, SE, EX.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import InvalidInputError
from .seeds import make_rng
from .textenc import N_CLASSES, N_GRADES, TextEmbeddings

LN_EPS = 1e-5
PROB_EPS = 1e-12
REFERABLE_GRADES = frozenset({2, 3, 4})


@dataclass
class LayerParams:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class EncoderParams:
    patch_size: int
    dim: int
    n_heads: int
    image_size: int
    w_patch: np.ndarray  # (P*P*3, D)
    e_pos: np.ndarray  # (N+1, D)
    z_cls: np.ndarray  # (D,)
    layers: list[LayerParams]
    tau_temp: np.ndarray = field(default_factory=lambda: np.array(1.0))  # 0-d

    def __post_init__(self) -> None:
        if self.dim % self.n_heads != 0:
            raise InvalidInputError("dim must be divisible by n_heads")
        if self.image_size % self.patch_size != 0:
            raise InvalidInputError("image_size must be divisible by patch_size")
        if float(self.tau_temp) <= 0:
            raise InvalidInputError("tau_temp must be positive")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2


def init_params(
    patch_size: int = 16,
    dim: int = 64,
    n_layers: int = 2,
    n_heads: int = 4,
    image_size: int = 64,
    seed: int = 0,
    tau_init: float = 5.0,
) -> EncoderParams:
    rng = make_rng(seed, "encoder-init")
    n = (image_size // patch_size) ** 2
    ff = 4 * dim

    def w(*shape, scale):
        return rng.normal(0.0, scale, shape)

    layers = []
    for _ in range(n_layers):
        layers.append(
            LayerParams(
                ln1_g=np.ones(dim),
                ln1_b=np.zeros(dim),
                wq=w(dim, dim, scale=dim**-0.5),
                bq=np.zeros(dim),
                wk=w(dim, dim, scale=dim**-0.5),
                bk=np.zeros(dim),
                wv=w(dim, dim, scale=dim**-0.5),
                bv=np.zeros(dim),
                wo=w(dim, dim, scale=dim**-0.5),
                bo=np.zeros(dim),
                ln2_g=np.ones(dim),
                ln2_b=np.zeros(dim),
                w1=w(dim, ff, scale=dim**-0.5),
                b1=np.zeros(ff),
                w2=w(ff, dim, scale=ff**-0.5),
                b2=np.zeros(dim),
            )
        )
    return EncoderParams(
        patch_size=patch_size,
        dim=dim,
        n_heads=n_heads,
        image_size=image_size,
        w_patch=w(patch_size * patch_size * 3, dim, scale=0.02),
        e_pos=w(n + 1, dim, scale=0.02),
        z_cls=w(dim, scale=0.02),
        layers=layers,
        tau_temp=np.array(float(tau_init)),
    )


def named_tensors(params: EncoderParams) -> dict[str, np.ndarray]:
    """Stable name -> array view of every trainable tensor."""
    out: dict[str, np.ndarray] = {
        "w_patch": params.w_patch,
        "e_pos": params.e_pos,
        "z_cls": params.z_cls,
    }
    for i, layer in enumerate(params.layers):
        for name in (
            "ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv",
            "wo", "bo", "ln2_g", "ln2_b", "w1", "b1", "w2", "b2",
        ):
            out[f"layers.{i}.{name}"] = getattr(layer, name)
    out["tau_temp"] = params.tau_temp
    return out


def clone_params(params: EncoderParams) -> EncoderParams:
    layers = [
        LayerParams(**{k: v.copy() for k, v in vars(layer).items()})
        for layer in params.layers
    ]
    return EncoderParams(
        patch_size=params.patch_size,
        dim=params.dim,
        n_heads=params.n_heads,
        image_size=params.image_size,
        w_patch=params.w_patch.copy(),
        e_pos=params.e_pos.copy(),
        z_cls=params.z_cls.copy(),
        layers=layers,
        tau_temp=np.array(params.tau_temp, dtype=np.float64),
    )


# ---------------------------------------------------------------- patches


def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """Row-major PxP patches flattened to rows of length P*P*3."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInputError(f"expected HxWx3 image, got {img.shape}")
    h, w, _ = img.shape
    p = patch_size
    if h % p or w % p:
        raise InvalidInputError(f"image {h}x{w} not divisible by patch size {p}")
    grid = img.reshape(h // p, p, w // p, p, 3).transpose(0, 2, 1, 3, 4)
    return grid.reshape((h // p) * (w // p), p * p * 3)


def unpatchify(patches: np.ndarray, height: int, width: int, patch_size: int) -> np.ndarray:
    p = patch_size
    grid = patches.reshape(height // p, width // p, p, p, 3).transpose(0, 2, 1, 3, 4)
    return grid.reshape(height, width, 3)


def prepare_images(images) -> np.ndarray:
    """Stack to (B,H,W,3) float64 in [0,1]; accepts uint8 or [0,255] floats."""
    batch = np.asarray(images, dtype=np.float64)
    if batch.ndim == 3:
        batch = batch[None]
    if batch.ndim != 4 or batch.shape[3] != 3:
        raise InvalidInputError(f"expected (B,H,W,3) batch, got {batch.shape}")
    return batch / 255.0


# ---------------------------------------------------------------- forward


def _layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, (xhat, inv)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def forward_batch(images, params: EncoderParams):
    """Encode a batch into unit vectors; returns (E (B,D), cache for backward)."""
    x = prepare_images(images)
    b, h, w, _ = x.shape
    if h != params.image_size or w != params.image_size:
        raise InvalidInputError(
            f"image {h}x{w} does not match encoder geometry {params.image_size}"
        )
    p = params.patch_size
    n = params.n_patches
    patches = x.reshape(b, h // p, p, w // p, p, 3).transpose(0, 1, 3, 2, 4, 5)
    patches = patches.reshape(b, n, p * p * 3)

    z = np.empty((b, n + 1, params.dim))
    z[:, 0, :] = params.z_cls
    z[:, 1:, :] = patches @ params.w_patch
    z = z + params.e_pos

    scale = (params.dim // params.n_heads) ** -0.5
    cache: dict = {"patches": patches, "x_shape": x.shape, "layers": []}
    for layer in params.layers:
        h1, ln1 = _layernorm(z, layer.ln1_g, layer.ln1_b)
        q = _split_heads(h1 @ layer.wq + layer.bq, params.n_heads)
        k = _split_heads(h1 @ layer.wk + layer.bk, params.n_heads)
        v = _split_heads(h1 @ layer.wv + layer.bv, params.n_heads)
        s = (q @ k.transpose(0, 1, 3, 2)) * scale
        s = s - s.max(axis=-1, keepdims=True)
        attn = np.exp(s)
        attn /= attn.sum(axis=-1, keepdims=True)
        o = _merge_heads(attn @ v)
        z_mid = z + o @ layer.wo + layer.bo

        h2, ln2 = _layernorm(z_mid, layer.ln2_g, layer.ln2_b)
        u = h2 @ layer.w1 + layer.b1
        r = np.maximum(u, 0.0)
        z_out = z_mid + r @ layer.w2 + layer.b2

        cache["layers"].append(
            {"h1": h1, "ln1": ln1, "q": q, "k": k, "v": v, "attn": attn,
             "o": o, "z_mid": z_mid, "h2": h2, "ln2": ln2, "u": u, "r": r}
        )
        z = z_out

    cls = z[:, 0, :]
    norm = np.linalg.norm(cls, axis=1, keepdims=True)
    cache["cls"] = cls
    cache["norm"] = norm
    return cls / norm, cache


def encode_image(image, params: EncoderParams) -> np.ndarray:
    emb, _ = forward_batch(image, params)
    return emb[0]


# ---------------------------------------------------------------- backward


def _layernorm_backward(dy, x_cache, g):
    xhat, inv = x_cache
    dg = (dy * xhat).sum(axis=(0, 1))
    db = dy.sum(axis=(0, 1))
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def backward_batch(
    d_embedding: np.ndarray,
    params: EncoderParams,
    cache: dict,
    guided: bool = False,
):
    """Backprop d(loss)/d(embedding) to parameter and input gradients.

    Returns (grads keyed like named_tensors minus tau_temp, d_input) where
    d_input has the (B,H,W,3) shape of the [0,1]-scaled input batch.
    Guided mode rewrites only the ReLU rule: gradient passes where the
    forward activation was positive AND the incoming gradient is positive.
    """
    cls = cache["cls"]
    norm = cache["norm"]
    e = cls / norm
    dcls = (d_embedding - e * (d_embedding * e).sum(axis=1, keepdims=True)) / norm

    b = cls.shape[0]
    t = params.n_patches + 1
    scale = (params.dim // params.n_heads) ** -0.5

    grads: dict[str, np.ndarray] = {}
    dz = np.zeros((b, t, params.dim))
    dz[:, 0, :] = dcls

    for i in reversed(range(params.n_layers)):
        layer = params.layers[i]
        lc = cache["layers"][i]
        pfx = f"layers.{i}."

        # FFN block
        df = dz
        dr = df @ layer.w2.T
        grads[pfx + "w2"] = lc["r"].reshape(-1, lc["r"].shape[-1]).T @ df.reshape(-1, params.dim)
        grads[pfx + "b2"] = df.sum(axis=(0, 1))
        gate = lc["u"] > 0.0
        if guided:
            gate = gate & (dr > 0.0)
        du = dr * gate
        grads[pfx + "w1"] = lc["h2"].reshape(-1, params.dim).T @ du.reshape(-1, du.shape[-1])
        grads[pfx + "b1"] = du.sum(axis=(0, 1))
        dh2 = du @ layer.w1.T
        dx, dg, dbeta = _layernorm_backward(dh2, lc["ln2"], layer.ln2_g)
        grads[pfx + "ln2_g"] = dg
        grads[pfx + "ln2_b"] = dbeta
        dz_mid = dz + dx

        # Attention block
        da = dz_mid
        do = da @ layer.wo.T
        grads[pfx + "wo"] = lc["o"].reshape(-1, params.dim).T @ da.reshape(-1, params.dim)
        grads[pfx + "bo"] = da.sum(axis=(0, 1))
        do_h = _split_heads(do, params.n_heads)
        dattn = do_h @ lc["v"].transpose(0, 1, 3, 2)
        dv = lc["attn"].transpose(0, 1, 3, 2) @ do_h
        attn = lc["attn"]
        ds = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dq = (ds @ lc["k"]) * scale
        dk = (ds.transpose(0, 1, 3, 2) @ lc["q"]) * scale
        dq_m, dk_m, dv_m = (_merge_heads(a) for a in (dq, dk, dv))
        h1 = lc["h1"].reshape(-1, params.dim)
        grads[pfx + "wq"] = h1.T @ dq_m.reshape(-1, params.dim)
        grads[pfx + "bq"] = dq_m.sum(axis=(0, 1))
        grads[pfx + "wk"] = h1.T @ dk_m.reshape(-1, params.dim)
        grads[pfx + "bk"] = dk_m.sum(axis=(0, 1))
        grads[pfx + "wv"] = h1.T @ dv_m.reshape(-1, params.dim)
        grads[pfx + "bv"] = dv_m.sum(axis=(0, 1))
        dh1 = dq_m @ layer.wq.T + dk_m @ layer.wk.T + dv_m @ layer.wv.T
        dx, dg, dbeta = _layernorm_backward(dh1, lc["ln1"], layer.ln1_g)
        grads[pfx + "ln1_g"] = dg
        grads[pfx + "ln1_b"] = dbeta
        dz = dz_mid + dx

    grads["e_pos"] = dz.sum(axis=0)
    grads["z_cls"] = dz[:, 0, :].sum(axis=0)
    dpatch = dz[:, 1:, :]
    patches = cache["patches"]
    grads["w_patch"] = (
        patches.reshape(-1, patches.shape[-1]).T @ dpatch.reshape(-1, params.dim)
    )
    dpatches = dpatch @ params.w_patch.T

    _, h, w, _ = cache["x_shape"]
    p = params.patch_size
    d_input = dpatches.reshape(b, h // p, w // p, p, p, 3).transpose(0, 1, 3, 2, 4, 5)
    d_input = d_input.reshape(b, h, w, 3)
    return grads, d_input


# ---------------------------------------------------------------- heads


@dataclass
class PredictionRecord:
    scores: np.ndarray  # 9-vector of raw similarities
    probs: np.ndarray  # 9-vector: softmaxed grades then sigmoid lesions
    grade: int
    lesions: np.ndarray  # 4-vector of {0,1}


def similarity_scores(text: TextEmbeddings, image_embedding: np.ndarray) -> np.ndarray:
    rows = text.all_rows
    vec = np.asarray(image_embedding, dtype=np.float64)
    if vec.shape != (rows.shape[1],):
        raise InvalidInputError(
            f"embedding dim {vec.shape} does not match text rows {rows.shape}"
        )
    return rows @ vec


def grade_softmax(grade_scores: np.ndarray, tau: float) -> np.ndarray:
    logits = tau * np.asarray(grade_scores, dtype=np.float64)
    logits = logits - logits.max()
    e = np.exp(logits)
    return e / e.sum()


def predict(scores: np.ndarray, tau_temp: float) -> PredictionRecord:
    """Softmax over the 5 grade scores, per-entry sigmoid over the 4 lesion
    scores; argmax ties resolve to the lowest grade index."""
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != (N_CLASSES,):
        raise InvalidInputError(f"expected 9 scores, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("scores must be finite")
    pg = grade_softmax(s[:N_GRADES], tau_temp)
    pl = expit(tau_temp * s[N_GRADES:])
    return PredictionRecord(
        scores=s,
        probs=np.concatenate([pg, pl]),
        grade=int(np.argmax(pg)),
        lesions=(pl > 0.5).astype(np.int64),
    )


def predict_image(image, params: EncoderParams, text: TextEmbeddings) -> PredictionRecord:
    return predict(similarity_scores(text, encode_image(image, params)), float(params.tau_temp))
