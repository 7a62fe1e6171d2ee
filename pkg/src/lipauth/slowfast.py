"""Two-pathway (slow/fast) spatiotemporal embedding network.

The fast pathway sees every frame with few channels; the slow pathway sees
every ``alpha``-th frame with many channels. After each stage the fast
features are squeezed in time by a strided temporal convolution and
concatenated onto the slow stream. Pooled outputs of both pathways are
concatenated, projected and L2-normalized.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import ops
from .tensor import checkpoint
from .tensor.init import glorot_uniform
from .tensor.ops import conv_output_shape
from .tensor.tensor import Parameter, Tensor

LATERAL_KERNEL_T = 5


@dataclass
class StageConfig:
    slow_channels: int
    kernel: tuple = (3, 3, 3)
    spatial_stride: int = 2

    def __post_init__(self):
        self.kernel = tuple(int(k) for k in self.kernel)


def _default_stages():
    return [StageConfig(16), StageConfig(32), StageConfig(64)]


@dataclass
class SlowFastConfig:
    alpha: int = 8
    beta: float = 0.125
    clip_length: int = 32
    stages: list = field(default_factory=_default_stages)
    embed_dim: int = 64
    input_shape: tuple = (18, 30, 3)
    lateral_multiplier: int = 2

    def __post_init__(self):
        if isinstance(self.beta, str):
            self.beta = float(Fraction(self.beta))
        self.stages = [s if isinstance(s, StageConfig) else StageConfig(**s) for s in self.stages]
        self.input_shape = tuple(int(v) for v in self.input_shape)

    def fast_channels(self, slow_channels: int) -> int:
        return max(1, int(round(self.beta * slow_channels)))

    def validate(self) -> None:
        if int(self.alpha) != self.alpha or self.alpha < 2:
            raise ConfigError(f"alpha must be an integer >= 2, got {self.alpha}")
        if not 0 < self.beta < 1:
            raise ConfigError(f"beta must lie in (0, 1), got {self.beta}")
        if self.clip_length < 1 or self.clip_length % self.alpha:
            raise ConfigError(
                f"clip_length {self.clip_length} is not divisible by alpha {self.alpha}")
        if not self.stages:
            raise ConfigError("at least one stage is required")
        if self.embed_dim < 1 or self.lateral_multiplier < 1:
            raise ConfigError("embed_dim and lateral_multiplier must be >= 1")
        h, w, _ = self.input_shape
        t_fast, t_slow = self.clip_length, self.clip_length // self.alpha
        for i, st in enumerate(self.stages):
            if st.slow_channels < 1 or st.spatial_stride < 1:
                raise ConfigError(f"stage {i}: channels and stride must be >= 1")
            pad = tuple(k // 2 for k in st.kernel)
            stride = (1, st.spatial_stride, st.spatial_stride)
            try:
                t_fast, h2, w2 = conv_output_shape((t_fast, h, w), st.kernel, stride, pad)
                t_slow, _, _ = conv_output_shape((t_slow, h, w), st.kernel, stride, pad)
            except DimensionError as exc:
                raise ConfigError(f"stage {i}: {exc}") from None
            h, w = h2, w2
            if h < 1 or w < 1:
                raise ConfigError(f"stage {i} collapses a spatial dimension below 1")
            if t_fast != self.alpha * t_slow:
                raise ConfigError(f"stage {i}: temporal lengths {t_fast}/{t_slow} lose the alpha ratio")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        for s in d["stages"]:
            s["kernel"] = list(s["kernel"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SlowFastConfig":
        return cls(**d)


class SlowFastModel:
    """Parameters plus forward pass. Parameter names start with one of
    ``fast.``, ``slow.``, ``lateral.`` or ``head.``."""

    def __init__(self, config: SlowFastConfig, params: list):
        self.config = config
        self.params = list(params)
        self._by_name = {p.name: p for p in self.params}
        if len(self._by_name) != len(self.params):
            raise ConfigError("parameter names must be unique")

    def __getitem__(self, name: str) -> Parameter:
        return self._by_name[name]

    def parameters(self) -> list:
        return self.params

    def astype(self, dtype) -> "SlowFastModel":
        for p in self.params:
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    # -- forward ---------------------------------------------------------

    def _block(self, prefix: str, x: Tensor, stage: StageConfig) -> Tensor:
        pad = tuple(k // 2 for k in stage.kernel)
        stride = (1, stage.spatial_stride, stage.spatial_stride)
        y = ops.conv3d(x, self[f"{prefix}.conv.weight"], stride, pad)
        y = ops.channel_affine(y, self[f"{prefix}.norm.scale"], self[f"{prefix}.norm.shift"])
        return ops.relu(y)

    def forward(self, clips, capture: Optional[dict] = None) -> Tensor:
        """Embed ``[N, T, H, W, C]`` (or a single ``[T, H, W, C]``) clips.

        Returns unit-norm rows ``[N, embed_dim]`` (or ``[embed_dim]``).
        If ``capture`` is a dict it receives intermediate activations.
        """
        cfg = self.config
        x = clips if isinstance(clips, Tensor) else Tensor(clips, dtype=self.params[0].dtype)
        single = x.ndim == 4
        if single:
            x = ops.reshape(x, (1, *x.shape))
        expected = (cfg.clip_length, *cfg.input_shape)
        if x.ndim != 5 or tuple(x.shape[1:]) != expected:
            raise DimensionError(f"clip shape {tuple(x.shape[-4:])} != expected {expected}")
        if x.dtype != self.params[0].dtype:
            x = Tensor(x.data.astype(self.params[0].dtype), requires_grad=x.requires_grad)

        fast = x
        slow = ops.temporal_subsample(x, cfg.alpha)
        for i, stage in enumerate(cfg.stages):
            fast = self._block(f"fast.stage{i}", fast, stage)
            slow = self._block(f"slow.stage{i}", slow, stage)
            if capture is not None:
                capture[f"fast.stage{i}"] = fast.data
                capture[f"slow.stage{i}"] = slow.data
            slow = lateral_fuse(fast, slow, self[f"lateral.stage{i}.weight"],
                                self[f"lateral.stage{i}.bias"], cfg.alpha)
        fast_pool = ops.global_avg_pool(fast)
        slow_pool = ops.global_avg_pool(slow)
        if capture is not None:
            capture["fast.pool"] = fast_pool.data
            capture["slow.pool"] = slow_pool.data
        z = ops.linear(ops.concat([slow_pool, fast_pool], axis=-1), self["head.weight"], self["head.bias"])
        e = ops.l2_normalize(z)
        if single:
            e = ops.reshape(e, (cfg.embed_dim,))
        return e


def lateral_fuse(fast_feat: Tensor, slow_feat: Tensor, weight: Tensor, bias: Tensor,
                 alpha: int) -> Tensor:
    """Time-compress fast features with a stride-``alpha`` temporal conv and
    concatenate them onto the slow stream along channels."""
    tf, ts = fast_feat.shape[-4], slow_feat.shape[-4]
    if tf != alpha * ts:
        raise DimensionError(f"temporal axis T mismatch: fast {tf} != alpha {alpha} x slow {ts}")
    if fast_feat.shape[-3:-1] != slow_feat.shape[-3:-1]:
        raise DimensionError(
            f"spatial axes H, W mismatch: fast {fast_feat.shape[-3:-1]} vs slow {slow_feat.shape[-3:-1]}")
    kt = weight.shape[0]
    squeezed = ops.conv3d(fast_feat, weight, (alpha, 1, 1), (kt // 2, 0, 0))
    squeezed = ops.add(squeezed, bias)
    return ops.concat([slow_feat, squeezed], axis=-1)


def _param_shapes(cfg: SlowFastConfig) -> list:
    shapes = []
    c_in = cfg.input_shape[2]
    fast_in, slow_in = c_in, c_in
    k = cfg.lateral_multiplier
    for i, st in enumerate(cfg.stages):
        cs, cf = st.slow_channels, cfg.fast_channels(st.slow_channels)
        kt, kh, kw = st.kernel
        for path, cin, cout in (("fast", fast_in, cf), ("slow", slow_in, cs)):
            shapes.append((f"{path}.stage{i}.conv.weight", (kt, kh, kw, cin, cout),
                           kt * kh * kw * cin, kt * kh * kw * cout))
            shapes.append((f"{path}.stage{i}.norm.scale", (cout,), None, None))
            shapes.append((f"{path}.stage{i}.norm.shift", (cout,), None, None))
        shapes.append((f"lateral.stage{i}.weight", (LATERAL_KERNEL_T, 1, 1, cf, k * cf),
                       LATERAL_KERNEL_T * cf, LATERAL_KERNEL_T * k * cf))
        shapes.append((f"lateral.stage{i}.bias", (k * cf,), None, None))
        fast_in, slow_in = cf, cs + k * cf
    d_in = fast_in + slow_in
    shapes.append(("head.weight", (d_in, cfg.embed_dim), d_in, cfg.embed_dim))
    shapes.append(("head.bias", (cfg.embed_dim,), None, None))
    return shapes


def build(cfg: SlowFastConfig, seed: int = 0, dtype=np.float32) -> SlowFastModel:
    """Validate ``cfg`` and initialize a model deterministically from ``seed``."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    params = []
    for name, shape, fan_in, fan_out in _param_shapes(cfg):
        if name.endswith("norm.scale"):
            data = np.ones(shape, dtype)
        elif fan_in is None:
            data = np.zeros(shape, dtype)
        else:
            data = glorot_uniform(rng, shape, fan_in, fan_out, dtype)
        params.append(Parameter(name, data))
    model = SlowFastModel(cfg, params)
    probe = model.forward(np.zeros((1, cfg.clip_length, *cfg.input_shape), dtype))
    if probe.shape != (1, cfg.embed_dim):
        raise ConfigError(f"dry run produced shape {probe.shape}")
    return model


def embed(model: SlowFastModel, clip) -> np.ndarray:
    """Unit-norm embedding of one ``[T, H, W, C]`` clip (no tape)."""
    frames = clip.frames if hasattr(clip, "frames") else clip
    return np.asarray(model.forward(np.asarray(frames)).data)


def embed_many(model: SlowFastModel, clips, chunk: int = 64) -> np.ndarray:
    """Embed a stack of clips in chunks; returns ``[N, embed_dim]``."""
    clips = np.asarray(clips)
    out = [model.forward(clips[i:i + chunk]).data for i in range(0, len(clips), chunk)]
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.config.embed_dim), np.float32)


def param_count(model: SlowFastModel) -> int:
    return int(sum(p.size for p in model.params))


def save_model(model: SlowFastModel, path) -> None:
    """Checkpoint at ``path`` plus config JSON at ``path`` with ``.json`` suffix."""
    path = Path(path)
    checkpoint.save(path, model.params)
    checkpoint.atomic_write(config_path(path),
                            json.dumps(model.config.to_dict(), indent=2, sort_keys=True).encode())


def config_path(ckpt_path) -> Path:
    ckpt_path = Path(ckpt_path)
    return ckpt_path.with_name(ckpt_path.name + ".json")


def load_model(path, config: Optional[SlowFastConfig] = None) -> SlowFastModel:
    path = Path(path)
    if config is None:
        config = SlowFastConfig.from_dict(json.loads(config_path(path).read_text()))
    config.validate()
    params = checkpoint.load(path)
    expected = [(n, s) for n, s, _, _ in _param_shapes(config)]
    got = [(p.name, p.shape) for p in params]
    if got != expected:
        raise ConfigError("checkpoint parameters do not match the model configuration")
    return SlowFastModel(config, params)
