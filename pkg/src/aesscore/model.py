"""Aesthetic score predictor: frame frontend, transformer stack, layer-weighted
pooling into a unit-norm embedding, and MLP score heads.

Parameters live in a flat, ordered ``name -> ndarray`` mapping so that the
optimizer, gradient checker and checkpoint writer can all walk them in the
same declared order.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .errors import DegenerateEmbeddingError, DegenerateWeightsError, SequenceTooLongError, ZeroVarianceError
from .scores import AXES, AesScores

EPS = 1e-8
SAMPLE_RATE = 16000


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 4
    hidden_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    frame_size: int = 400
    frame_stride: int = 320
    max_frames: int = 512
    head_blocks: int = 2
    positional: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.hidden_dim % self.num_heads:
            raise ValueError("hidden_dim must be divisible by num_heads")
        if not 0 < self.frame_stride <= self.frame_size:
            raise ValueError("frame_stride must be in (0, frame_size]")
        if self.head_blocks < 0 or self.max_frames < 1 or self.ffn_dim < 1:
            raise ValueError("head_blocks >= 0, max_frames >= 1 and ffn_dim >= 1 required")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")

    @classmethod
    def full_scale(cls, **overrides):
        """12 layers of width 768, the published encoder size."""
        base = dict(num_layers=12, hidden_dim=768, num_heads=12, ffn_dim=3072, max_frames=1024)
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data):
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})

    def num_frames(self, n_samples):
        n = max(n_samples, self.frame_size)
        return 1 + (n - self.frame_size) // self.frame_stride


def param_shapes(cfg):
    """Declared parameter order with shapes."""
    d, f = cfg.hidden_dim, cfg.ffn_dim
    shapes = [
        ("frontend.weight", (cfg.frame_size, d)),
        ("frontend.bias", (d,)),
        ("frontend.ln.gamma", (d,)),
        ("frontend.ln.beta", (d,)),
    ]
    for i in range(cfg.num_layers):
        p = f"layers.{i}."
        shapes += [
            (p + "ln1.gamma", (d,)),
            (p + "ln1.beta", (d,)),
            (p + "attn.w_qkv", (d, 3 * d)),
            (p + "attn.b_qkv", (3 * d,)),
            (p + "attn.w_o", (d, d)),
            (p + "attn.b_o", (d,)),
            (p + "ln2.gamma", (d,)),
            (p + "ln2.beta", (d,)),
            (p + "ffn.w1", (d, f)),
            (p + "ffn.b1", (f,)),
            (p + "ffn.w2", (f, d)),
            (p + "ffn.b2", (d,)),
        ]
    shapes.append(("layer_weights", (cfg.num_layers,)))
    for j in range(cfg.head_blocks):
        p = f"head.{j}."
        shapes += [(p + "weight", (d, d)), (p + "bias", (d,)), (p + "ln.gamma", (d,)), (p + "ln.beta", (d,))]
    shapes += [("head.out.weight", (d, len(AXES))), ("head.out.bias", (len(AXES),))]
    return shapes


@dataclass(frozen=True)
class Normalizer:
    """Per-axis training-target mean and population standard deviation."""

    mean: np.ndarray = field(default_factory=lambda: np.zeros(len(AXES)))
    std: np.ndarray = field(default_factory=lambda: np.ones(len(AXES)))

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if self.mean.shape != (len(AXES),) or self.std.shape != (len(AXES),):
            raise ValueError("normalizer stats must have one entry per axis")
        if np.any(~(self.std > 0)):
            raise ValueError("normalizer std must be positive on every axis")

    def transform(self, y):
        return (np.asarray(y, dtype=np.float64) - self.mean) / self.std

    def inverse(self, raw):
        return np.asarray(raw, dtype=np.float64) * self.std + self.mean


@dataclass(frozen=True)
class ModelParams:
    config: EncoderConfig
    arrays: dict
    normalizer: Normalizer = field(default_factory=Normalizer)

    def __post_init__(self):
        expected = param_shapes(self.config)
        if list(self.arrays) != [n for n, _ in expected]:
            raise ValueError("parameter names do not match the declared order")
        for name, shape in expected:
            if self.arrays[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {self.arrays[name].shape}")

    def __getitem__(self, name):
        return self.arrays[name]

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def replace(self, arrays=None, normalizer=None):
        return replace(
            self,
            arrays=self.arrays if arrays is None else arrays,
            normalizer=self.normalizer if normalizer is None else normalizer,
        )

    def num_parameters(self):
        return sum(a.size for a in self.arrays.values())


def init_params(cfg, seed=0, normalizer=None):
    rng = np.random.default_rng(seed)
    dtype = np.dtype(cfg.dtype)
    arrays = {}
    for name, shape in param_shapes(cfg):
        leaf = name.rsplit(".", 1)[-1]
        if name == "layer_weights":
            a = np.full(shape, 1.0 / cfg.num_layers)
        elif leaf == "gamma":
            a = np.ones(shape)
        elif len(shape) == 1:
            a = np.zeros(shape)
        else:
            scale = 1.0 / np.sqrt(shape[0])
            if name in ("head.out.weight",) or name.endswith(("attn.w_o", "ffn.w2")):
                # residual branches and the score readout start small
                scale *= 0.5
            a = rng.normal(0.0, scale, size=shape)
        arrays[name] = a.astype(dtype)
    return ModelParams(cfg, arrays, normalizer or Normalizer())


def _frame(waves, cfg):
    """Slice (B, N) waveforms into (B, T, frame_size) frames."""
    n = waves.shape[-1]
    if n < cfg.frame_size:
        waves = np.pad(waves, [(0, 0)] * (waves.ndim - 1) + [(0, cfg.frame_size - n)])
    view = np.lib.stride_tricks.sliding_window_view(waves, cfg.frame_size, axis=-1)
    return view[..., :: cfg.frame_stride, :]


def frontend_frames(waveform, params):
    """Frame the waveform and project every frame to a layer-normalized
    ``hidden_dim`` vector. Returns a (T, d) array."""
    x = np.asarray(waveform, dtype=params.dtype)
    frames = _frame(x[None, :], params.config)[0]
    proj = frames @ params["frontend.weight"] + params["frontend.bias"]
    out, _ = nn.layer_norm_forward(proj, params["frontend.ln.gamma"], params["frontend.ln.beta"])
    return out


def _check_length(t, cfg):
    if t > cfg.max_frames:
        raise SequenceTooLongError(f"{t} frames exceed max_frames={cfg.max_frames}; window the input first")


def _layer_forward(x, params, i, cache=None):
    cfg = params.config
    p = f"layers.{i}."
    xn1, c_ln1 = nn.layer_norm_forward(x, params[p + "ln1.gamma"], params[p + "ln1.beta"])
    a, c_attn = nn.attention_forward(
        xn1, params[p + "attn.w_qkv"], params[p + "attn.b_qkv"], params[p + "attn.w_o"], params[p + "attn.b_o"], cfg.num_heads
    )
    x1 = x + a
    xn2, c_ln2 = nn.layer_norm_forward(x1, params[p + "ln2.gamma"], params[p + "ln2.beta"])
    f1 = xn2 @ params[p + "ffn.w1"] + params[p + "ffn.b1"]
    g, c_gelu = nn.gelu_forward(f1)
    x2 = x1 + g @ params[p + "ffn.w2"] + params[p + "ffn.b2"]
    if cache is not None:
        cache.append((c_ln1, c_attn, c_ln2, xn2, g, c_gelu))
    return x2


def _layer_backward(dx2, params, i, lcache):
    cfg = params.config
    p = f"layers.{i}."
    c_ln1, c_attn, c_ln2, xn2, g, c_gelu = lcache
    grads = {}
    dg, grads[p + "ffn.w2"], grads[p + "ffn.b2"] = nn.linear_backward(dx2, g, params[p + "ffn.w2"])
    df1 = nn.gelu_backward(dg, c_gelu)
    dxn2, grads[p + "ffn.w1"], grads[p + "ffn.b1"] = nn.linear_backward(df1, xn2, params[p + "ffn.w1"])
    dx1_ln, grads[p + "ln2.gamma"], grads[p + "ln2.beta"] = nn.layer_norm_backward(dxn2, c_ln2, params[p + "ln2.gamma"])
    dx1 = dx2 + dx1_ln
    dxn1, grads[p + "attn.w_qkv"], grads[p + "attn.b_qkv"], grads[p + "attn.w_o"], grads[p + "attn.b_o"] = (
        nn.attention_backward(dx1, c_attn, params[p + "attn.w_qkv"], params[p + "attn.w_o"], cfg.num_heads)
    )
    dx_ln, grads[p + "ln1.gamma"], grads[p + "ln1.beta"] = nn.layer_norm_backward(dxn1, c_ln1, params[p + "ln1.gamma"])
    return dx1 + dx_ln, grads


def transformer_forward(frames, params):
    """Run the encoder on (T, d) or (B, T, d) frames and return every layer's
    output stacked on a new leading axis: (L, T, d) or (L, B, T, d)."""
    cfg = params.config
    x = np.asarray(frames, dtype=params.dtype)
    single = x.ndim == 2
    if single:
        x = x[None]
    _check_length(x.shape[1], cfg)
    if cfg.positional:
        x = x + nn.sinusoidal_positions(x.shape[1], cfg.hidden_dim, params.dtype)
    states = []
    for i in range(cfg.num_layers):
        x = _layer_forward(x, params, i)
        states.append(x)
    stack = np.stack(states)
    return stack[:, 0] if single else stack


def layer_weight_normalize(w):
    w = np.asarray(w)
    total = w.sum()
    if not abs(total) > EPS:
        raise DegenerateWeightsError(f"layer weights sum to {total!r}; |sum| must exceed {EPS}")
    return w / total


def aggregate_embedding(stack, z):
    """Average the layer-weighted hidden states over time. ``stack`` is
    (L, T, d) or (L, B, T, d); returns (d,) or (B, d)."""
    stack = np.asarray(stack)
    per_layer = stack.mean(axis=-2)
    return np.tensordot(np.asarray(z, dtype=stack.dtype), per_layer, axes=(0, 0))


def l2_normalize(e_hat):
    e_hat = np.asarray(e_hat)
    norm = np.sqrt((e_hat * e_hat).sum(axis=-1, keepdims=True))
    if np.any(~(norm > EPS)):
        raise DegenerateEmbeddingError("embedding norm is too close to zero to normalize")
    return e_hat / norm


def mlp_forward(e, params):
    """Score heads: ``head_blocks`` x (linear, layer norm, GELU), then a
    linear readout to the four normalized-space outputs."""
    h = np.asarray(e, dtype=params.dtype)
    for j in range(params.config.head_blocks):
        p = f"head.{j}."
        h = h @ params[p + "weight"] + params[p + "bias"]
        h, _ = nn.layer_norm_forward(h, params[p + "ln.gamma"], params[p + "ln.beta"])
        h, _ = nn.gelu_forward(h)
    return h @ params["head.out.weight"] + params["head.out.bias"]


def normalize_targets(labels):
    """Population mean/std per axis and the standardized targets."""
    y = np.array([s.to_array() if isinstance(s, AesScores) else np.asarray(s, dtype=np.float64) for s in labels])
    if y.ndim != 2 or y.shape[0] < 2 or y.shape[1] != len(AXES):
        raise ValueError("need at least two 4-axis label vectors")
    mean = y.mean(axis=0)
    std = y.std(axis=0)
    for a, s in zip(AXES, std):
        # relative floor: rounding noise on a constant column is not variance
        if not s > 1e-12 * max(1.0, float(np.abs(y).max())):
            raise ZeroVarianceError(a.upper(), f"axis {a.upper()} has zero variance across training labels")
    stats = Normalizer(mean, std)
    return stats, stats.transform(y)


def denormalize_scores(raw, stats):
    return AesScores.from_array(stats.inverse(raw))


def predict(waveform, params):
    """Score one mono 16 kHz window (at most ``max_frames`` frames)."""
    raw = forward_raw(np.asarray(waveform, dtype=params.dtype)[None, :], params)[0]
    return denormalize_scores(raw, params.normalizer)


def forward_raw(waves, params):
    raw, _ = forward_batch(waves, params, keep_cache=False)
    return raw


def forward_batch(waves, params, keep_cache=True):
    """Forward pass over equal-length waveforms (B, N) -> raw (B, 4).

    The returned cache feeds :func:`backward_batch`.
    """
    cfg = params.config
    waves = np.asarray(waves, dtype=params.dtype)
    frames = _frame(waves, cfg)
    t = frames.shape[1]
    _check_length(t, cfg)
    proj = frames @ params["frontend.weight"] + params["frontend.bias"]
    x, c_front = nn.layer_norm_forward(proj, params["frontend.ln.gamma"], params["frontend.ln.beta"])
    if cfg.positional:
        x = x + nn.sinusoidal_positions(t, cfg.hidden_dim, params.dtype)
    layer_caches = [] if keep_cache else None
    pooled = []
    for i in range(cfg.num_layers):
        x = _layer_forward(x, params, i, layer_caches)
        pooled.append(x.mean(axis=1))
    pooled = np.stack(pooled)  # (L, B, d)
    w = params["layer_weights"]
    z = layer_weight_normalize(w)
    e_hat = np.tensordot(z, pooled, axes=(0, 0))
    e = l2_normalize(e_hat)
    h = e
    head_caches = []
    for j in range(cfg.head_blocks):
        p = f"head.{j}."
        a = h @ params[p + "weight"] + params[p + "bias"]
        n, c_ln = nn.layer_norm_forward(a, params[p + "ln.gamma"], params[p + "ln.beta"])
        g, c_gelu = nn.gelu_forward(n)
        head_caches.append((h, c_ln, c_gelu))
        h = g
    raw = h @ params["head.out.weight"] + params["head.out.bias"]
    if not keep_cache:
        return raw, None
    cache = dict(
        frames=frames, c_front=c_front, layers=layer_caches, pooled=pooled, z=z, w_sum=w.sum(),
        e=e, e_norm=np.sqrt((e_hat * e_hat).sum(axis=-1, keepdims=True)), head=head_caches, h_last=h, t=t,
    )
    return raw, cache


def backward_batch(draw, cache, params):
    """Gradients of ``sum(draw * raw)`` with respect to every parameter."""
    cfg = params.config
    grads = {}
    dh, grads["head.out.weight"], grads["head.out.bias"] = nn.linear_backward(
        draw, cache["h_last"], params["head.out.weight"]
    )
    for j in reversed(range(cfg.head_blocks)):
        p = f"head.{j}."
        h_in, c_ln, c_gelu = cache["head"][j]
        dn = nn.gelu_backward(dh, c_gelu)
        da, grads[p + "ln.gamma"], grads[p + "ln.beta"] = nn.layer_norm_backward(dn, c_ln, params[p + "ln.gamma"])
        dh, grads[p + "weight"], grads[p + "bias"] = nn.linear_backward(da, h_in, params[p + "weight"])
    e, norm = cache["e"], cache["e_norm"]
    de_hat = (dh - e * (dh * e).sum(axis=-1, keepdims=True)) / norm
    pooled, z = cache["pooled"], cache["z"]
    dz = np.einsum("lbd,bd->l", pooled, de_hat)
    # z = w / sum(w)
    w = params["layer_weights"]
    s = cache["w_sum"]
    grads["layer_weights"] = dz / s - (dz @ w) / (s * s)
    t = cache["t"]
    dx = np.zeros(cache["layers"][0][0][0].shape, dtype=de_hat.dtype)
    for i in reversed(range(cfg.num_layers)):
        dx = dx + (z[i] / t) * de_hat[:, None, :]
        dx, g = _layer_backward(dx, params, i, cache["layers"][i])
        grads.update(g)
    dproj, grads["frontend.ln.gamma"], grads["frontend.ln.beta"] = nn.layer_norm_backward(
        dx, cache["c_front"], params["frontend.ln.gamma"]
    )
    _, grads["frontend.weight"], grads["frontend.bias"] = nn.linear_backward(
        dproj, cache["frames"], params["frontend.weight"], need_dx=False
    )
    return {name: grads[name] for name, _ in param_shapes(cfg)}
