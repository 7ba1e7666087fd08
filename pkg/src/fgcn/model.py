"""The staged feedback network.

One shared feature stack, one shared feedback block, and one shared
prediction head process the stage clips sequentially: stage t's features
are fused with the hidden state carried over from stage t-1 (the first
stage feeds its own features back), and each stage emits a class
distribution immediately — predictions are available before later clips
are read. A fusion rule then mixes the per-stage distributions into the
sequence-level distribution.

Layout conventions: network activations are (batch, channels, time,
vertices) with body slots folded into the batch; clip arrays arriving from
the data pipeline are (batch, bodies, clip_len, vertices, channels).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import STREAMS, stream_channels, stream_features
from .errors import ConfigError, ShapeError
from .graph import Topology, normalized_subsets
from .sampling import extract_clip, plan_stage, stage_bounds

DEFAULT_CHANNELS = (64, 64, 64, 64, 128, 128, 128, 256, 256, 256)
DEFAULT_STRIDES = (1, 1, 1, 1, 2, 1, 1, 2, 1, 1)

FUSION_STRATEGIES = ("last-win-all", "average", "weight-fusion-1", "weight-fusion-2", "custom")

_FIVE_STAGE_WEIGHTS = {
    "weight-fusion-1": (0.05, 0.05, 0.1, 0.2, 0.6),
    "weight-fusion-2": (0.1, 0.15, 0.2, 0.25, 0.3),
}


@dataclass(frozen=True)
class FusionSpec:
    """A convex combination of per-stage distributions."""

    strategy: str
    weights: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise ConfigError(f"fusion weights must be a non-empty vector, got {self.weights}")
        if np.any(w < 0):
            raise ConfigError(f"fusion weights must be nonnegative, got {self.weights}")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ConfigError(f"fusion weights must sum to 1, got sum {float(w.sum())!r}")

    @property
    def stages(self):
        return len(self.weights)


def fusion_spec(strategy, stages, weights=None):
    """Build a FusionSpec from a strategy name and stage count."""
    if strategy not in FUSION_STRATEGIES:
        raise ConfigError(
            f"unknown fusion strategy {strategy!r}, expected one of {FUSION_STRATEGIES}")
    if strategy == "last-win-all":
        w = (0.0,) * (stages - 1) + (1.0,)
    elif strategy == "average":
        w = (1.0 / stages,) * stages
    elif strategy in _FIVE_STAGE_WEIGHTS:
        w = _FIVE_STAGE_WEIGHTS[strategy]
        if stages != len(w):
            raise ConfigError(f"{strategy} is defined for {len(w)} stages, got {stages}")
    else:
        if weights is None:
            raise ConfigError("custom fusion needs explicit weights")
        w = tuple(float(v) for v in weights)
        if len(w) != stages:
            raise ConfigError(f"need {stages} fusion weights, got {len(w)}")
    return FusionSpec(strategy, w)


def fuse(stage_probs, spec):
    """Mix per-stage probability tensors with the spec's weights."""
    if len(stage_probs) != spec.stages:
        raise ConfigError(f"fusion expects {spec.stages} stage outputs, got {len(stage_probs)}")
    out = None
    for prob, weight in zip(stage_probs, spec.weights):
        term = T.scale(prob, weight)
        out = term if out is None else T.add(out, term)
    return out


@dataclass
class StagedPrediction:
    """All per-stage distributions plus the fused sequence-level one."""

    stage_probs: list
    fused: object
    hidden: list = None

    def stage_arrays(self):
        return [p.data for p in self.stage_probs]

    def fused_array(self):
        return self.fused.data


# ---------------------------------------------------------------------------
# layers


class ChannelNorm:
    """Per-channel standardization with learned affine and running statistics."""

    def __init__(self, channels, prefix):
        self.gamma = T.parameter(np.ones(channels), f"{prefix}.gamma")
        self.beta = T.parameter(np.zeros(channels), f"{prefix}.beta")
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.prefix = prefix

    def __call__(self, x, train):
        return T.channel_norm(x, self.gamma, self.beta,
                              self.running_mean, self.running_var, train)

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {f"{self.prefix}.running_mean": self.running_mean,
                f"{self.prefix}.running_var": self.running_var}


class GraphConv:
    """Neighborhood aggregation over subset matrices with channel mixing.

    Each subset has its own channel-mixing weights and a learnable edge-
    importance mask (all ones at init) multiplied elementwise into the
    normalized subset matrix.
    """

    def __init__(self, in_ch, out_ch, subsets, prefix, rng):
        self.adjacency = [T.constant(s) for s in subsets]
        num_vertices = subsets.shape[1]
        std = np.sqrt(2.0 / in_ch)
        self.weights = [
            T.parameter(rng.normal(0.0, std, size=(out_ch, in_ch)), f"{prefix}.weight{k}")
            for k in range(len(subsets))]
        self.masks = [
            T.parameter(np.ones((num_vertices, num_vertices)), f"{prefix}.mask{k}")
            for k in range(len(subsets))]

    def __call__(self, x):
        out = None
        for adj, weight, mask in zip(self.adjacency, self.weights, self.masks):
            masked = T.mul(adj, mask)
            gathered = T.matmul(x, T.transpose(masked, (1, 0)))
            moved = T.transpose(gathered, (0, 2, 3, 1))
            projected = T.matmul(moved, T.transpose(weight, (1, 0)))
            term = T.transpose(projected, (0, 3, 1, 2))
            out = term if out is None else T.add(out, term)
        return out

    def params(self):
        return self.weights + self.masks


class SpatialTemporalUnit:
    """graph conv -> channel norm -> relu -> temporal conv, optional residual.

    The residual connection is taken only when the caller allows it and the
    shapes agree (same channel count, stride 1).
    """

    def __init__(self, in_ch, out_ch, subsets, kernel_t, stride, residual, prefix, rng):
        self.gconv = GraphConv(in_ch, out_ch, subsets, f"{prefix}.gconv", rng)
        self.norm = ChannelNorm(out_ch, f"{prefix}.norm")
        std = np.sqrt(2.0 / (out_ch * kernel_t))
        self.tconv_weight = T.parameter(
            rng.normal(0.0, std, size=(out_ch, out_ch, kernel_t)), f"{prefix}.tconv.weight")
        self.stride = stride
        self.residual = residual and in_ch == out_ch and stride == 1

    def __call__(self, x, train):
        y = self.gconv(x)
        y = self.norm(y, train)
        y = T.relu(y)
        y = T.temporal_conv(y, self.tconv_weight, self.stride)
        if self.residual:
            y = T.add(y, x)
        return y

    def params(self):
        return self.gconv.params() + self.norm.params() + [self.tconv_weight]

    def buffers(self):
        return self.norm.buffers()


class FeatureStack:
    """The shared per-clip feature extractor: a stack of spatial-temporal units."""

    def __init__(self, in_ch, channels, strides, subsets, kernel_t, prefix, rng):
        if len(channels) != len(strides):
            raise ConfigError(
                f"channel plan has {len(channels)} entries but stride plan has {len(strides)}")
        self.units = []
        prev = in_ch
        for i, (ch, stride) in enumerate(zip(channels, strides)):
            self.units.append(SpatialTemporalUnit(
                prev, ch, subsets, kernel_t, stride, True, f"{prefix}.{i}", rng))
            prev = ch

    def __call__(self, x, train):
        for unit in self.units:
            x = unit(x, train)
        return x

    def params(self):
        return [p for u in self.units for p in u.params()]

    def buffers(self):
        out = {}
        for u in self.units:
            out.update(u.buffers())
        return out


class FeedbackBlock:
    """Densely wired block mixing current features with the previous hidden state.

    Layer 1 consumes the concatenation of the stage features and the carried
    hidden state (2m channels); layer l > 1 consumes the concatenation of
    all earlier layer outputs ((l-1)m channels); the last layer's output is
    the new hidden state (m channels).
    """

    def __init__(self, m, num_layers, subsets, kernel_t, prefix, rng):
        if num_layers < 1:
            raise ConfigError(f"feedback block needs >= 1 layers, got {num_layers}")
        self.units = []
        for l in range(num_layers):
            in_ch = 2 * m if l == 0 else l * m
            self.units.append(SpatialTemporalUnit(
                in_ch, m, subsets, kernel_t, 1, False, f"{prefix}.{l}", rng))

    def __call__(self, features, hidden, train):
        if features.shape != hidden.shape:
            raise ShapeError(
                f"features {features.shape} and hidden state {hidden.shape} must match")
        outputs = [self.units[0](T.concat_channels([features, hidden]), train)]
        for unit in self.units[1:]:
            stacked = outputs[0] if len(outputs) == 1 else T.concat_channels(outputs)
            outputs.append(unit(stacked, train))
        return outputs[-1]

    def params(self):
        return [p for u in self.units for p in u.params()]

    def buffers(self):
        out = {}
        for u in self.units:
            out.update(u.buffers())
        return out


class PredictionHead:
    """Global average pooling followed by an affine map to class logits."""

    def __init__(self, in_ch, classes, prefix, rng):
        std = np.sqrt(1.0 / in_ch)
        self.weight = T.parameter(rng.normal(0.0, std, size=(in_ch, classes)),
                                  f"{prefix}.weight")
        self.bias = T.parameter(np.zeros(classes), f"{prefix}.bias")

    def logits(self, pooled):
        return T.add(T.matmul(pooled, self.weight), self.bias)

    def params(self):
        return [self.weight, self.bias]


# ---------------------------------------------------------------------------
# the full model


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to build one stream's network."""

    topology: Topology
    stream: str
    classes: int
    stages: int = 5
    clip_len: int = 64
    channels: tuple = DEFAULT_CHANNELS
    strides: tuple = DEFAULT_STRIDES
    kernel_t: int = 9
    fgcb_layers: int = 4
    fgcb_kernel_t: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.stream not in STREAMS:
            raise ConfigError(f"unknown stream {self.stream!r}, expected one of {STREAMS}")
        if self.classes < 2:
            raise ConfigError(f"need >= 2 classes, got {self.classes}")
        if self.stages < 1:
            raise ConfigError(f"need >= 1 stages, got {self.stages}")
        if self.clip_len < 1:
            raise ConfigError(f"clip length must be >= 1, got {self.clip_len}")
        if not self.channels:
            raise ConfigError("channel plan must be non-empty")

    @property
    def in_channels(self):
        return stream_channels(self.stream)

    @property
    def hidden_channels(self):
        return self.channels[-1]


class FeedbackGCN:
    """One stream's network: feature stack + feedback block + prediction head."""

    def __init__(self, config):
        self.config = config
        subsets = normalized_subsets(config.topology)
        rng = np.random.default_rng([config.seed, STREAMS.index(config.stream)])
        m = config.hidden_channels
        self.stack = FeatureStack(config.in_channels, config.channels, config.strides,
                                  subsets, config.kernel_t, "stack", rng)
        self.fgcb = FeedbackBlock(m, config.fgcb_layers, subsets,
                                  config.fgcb_kernel_t, "fgcb", rng)
        self.head = PredictionHead(m, config.classes, "head", rng)

    def params(self):
        return self.stack.params() + self.fgcb.params() + self.head.params()

    def buffers(self):
        out = {}
        out.update(self.stack.buffers())
        out.update(self.fgcb.buffers())
        return out

    def state_arrays(self):
        """Ordered name -> array view of all parameters and running buffers."""
        out = {p.name: p.data for p in self.params()}
        out.update(self.buffers())
        return out

    def load_state(self, arrays):
        """Install a checkpoint, insisting on exact name and shape agreement."""
        targets = {p.name: p for p in self.params()}
        buffers = self.buffers()
        remaining = dict(arrays)
        for name, p in targets.items():
            if name not in remaining:
                raise ConfigError(f"checkpoint is missing tensor {name!r}")
            value = np.asarray(remaining.pop(name), dtype=np.float64)
            if value.shape != p.data.shape:
                raise ConfigError(
                    f"checkpoint tensor {name!r} has shape {value.shape}, "
                    f"model expects {p.data.shape}")
            p.data = value.copy()
        for name, buf in buffers.items():
            if name not in remaining:
                raise ConfigError(f"checkpoint is missing tensor {name!r}")
            value = np.asarray(remaining.pop(name), dtype=np.float64)
            if value.shape != buf.shape:
                raise ConfigError(
                    f"checkpoint tensor {name!r} has shape {value.shape}, "
                    f"model expects {buf.shape}")
            buf[...] = value
        if remaining:
            name = sorted(remaining)[0]
            raise ConfigError(f"checkpoint tensor {name!r} is unknown to this model")

    # -- forward ------------------------------------------------------------

    def _fold(self, clip):
        """(batch, bodies, clip_len, V, C) -> Tensor (batch*bodies, C, clip_len, V)."""
        clip = np.asarray(clip, dtype=np.float64)
        if clip.ndim != 5:
            raise ShapeError(f"stage clip must be rank 5, got {clip.shape}")
        b, m, length, v, c = clip.shape
        if v != self.config.topology.num_vertices:
            raise ShapeError(
                f"clip has {v} vertices, topology has {self.config.topology.num_vertices}")
        if c != self.config.in_channels:
            raise ShapeError(
                f"clip has {c} channels, stream {self.config.stream!r} "
                f"expects {self.config.in_channels}")
        folded = clip.transpose(0, 1, 4, 2, 3).reshape(b * m, c, length, v)
        return T.constant(folded)

    def _pool_bodies(self, hidden, clip):
        """Masked mean of pooled features over present body slots.

        A slot counts as present when its clip features are not all zero;
        if no slot of a sample is present, all slots participate so the
        mean stays defined.
        """
        b, m = clip.shape[0], clip.shape[1]
        present = np.any(np.asarray(clip) != 0.0, axis=(2, 3, 4)).astype(np.float64)
        counts = present.sum(axis=1, keepdims=True)
        present = np.where(counts > 0, present, 1.0)
        counts = np.where(counts > 0, counts, float(m))
        weights = present / counts
        pooled = T.global_average_pool(hidden)            # (b*m, channels)
        grouped = T.reshape(pooled, (b, m, pooled.shape[1]))
        weighted = T.mul(grouped, T.constant(weights[:, :, None]))
        return T.sum_axes(weighted, (1,))                 # (b, channels)

    def stage_step(self, clip, hidden, train=False):
        """Process one stage clip; returns (stage probs, new hidden state).

        ``hidden`` is None at the first stage, in which case the stage's own
        features initialize the feedback state.
        """
        x = self._fold(clip)
        features = self.stack(x, train)
        if hidden is None:
            hidden = features
        new_hidden = self.fgcb(features, hidden, train)
        pooled = self._pool_bodies(new_hidden, clip)
        probs = T.softmax(self.head.logits(pooled))
        return probs, new_hidden

    def forward_clips(self, clips, spec, train=False, keep_hidden=False):
        """Run all stages sequentially and fuse.

        ``clips`` is (stages, batch, bodies, clip_len, V, C); returns a
        StagedPrediction whose tensors stay connected for backprop.
        """
        clips = np.asarray(clips, dtype=np.float64)
        if clips.ndim != 6:
            raise ShapeError(f"stage clips must be rank 6, got {clips.shape}")
        if clips.shape[0] != self.config.stages:
            raise ShapeError(
                f"got {clips.shape[0]} stage clips, model expects {self.config.stages}")
        hidden = None
        stage_probs = []
        hidden_states = []
        for t in range(self.config.stages):
            probs, hidden = self.stage_step(clips[t], hidden, train)
            stage_probs.append(probs)
            if keep_hidden:
                hidden_states.append(hidden)
        fused = fuse(stage_probs, spec)
        return StagedPrediction(stage_probs, fused,
                                hidden_states if keep_hidden else None)


def two_stream_scores(spatial_probs, motion_probs, alpha=0.5):
    """Convex score-level fusion of the two streams' distributions."""
    spatial_probs = np.asarray(spatial_probs)
    motion_probs = np.asarray(motion_probs)
    if spatial_probs.shape != motion_probs.shape:
        raise ShapeError(
            f"stream score shapes differ: {spatial_probs.shape} vs {motion_probs.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"stream mixing weight must be in [0, 1], got {alpha}")
    return alpha * spatial_probs + (1.0 - alpha) * motion_probs


# ---------------------------------------------------------------------------
# clip preparation and streaming prediction


def sequence_stage_clips(features, plans):
    """Per-stage clips from a frame-major feature array.

    ``features`` is (frames, bodies, V, C); the result is
    (stages, bodies, clip_len, V, C).
    """
    clips = [extract_clip(features, plan).transpose(1, 0, 2, 3) for plan in plans]
    return np.stack(clips)


def streaming_predict(model, spec, seq_len, frame_source, on_stage=None):
    """Predict stage by stage while frames arrive.

    ``frame_source`` yields one (bodies, V, 3) position frame per call;
    exactly as many frames as each stage requires are consumed before that
    stage's distribution is emitted, so every stage output is available
    before later clips are read. Motion streams need one frame of lookahead
    at each stage boundary. ``on_stage(t, probs, frames_read)`` is invoked
    per stage; returns a StagedPrediction with plain arrays.
    """
    config = model.config
    topo = config.topology
    needs_lookahead = config.stream in ("joint-motion", "bone-motion", "motion")
    frames = []
    hidden = None
    stage_probs = []
    iterator = iter(frame_source)
    for t in range(config.stages):
        _, end = stage_bounds(seq_len, config.stages, t)
        need = min(end + 1, seq_len) if needs_lookahead else end
        need = max(need, 1)
        while len(frames) < need:
            frames.append(np.asarray(next(iterator), dtype=np.float64))
        prefix = np.stack(frames)
        feats = stream_features(prefix, topo, config.stream)
        plan = plan_stage(seq_len, config.stages, config.clip_len, t, "center")
        clip = extract_clip(feats, plan).transpose(1, 0, 2, 3)[None]
        probs, hidden = model.stage_step(clip, hidden, train=False)
        stage_probs.append(probs)
        if on_stage is not None:
            on_stage(t, probs.data[0], len(frames))
    fused = fuse(stage_probs, spec)
    return StagedPrediction(stage_probs, fused)
