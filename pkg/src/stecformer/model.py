"""Spatio-temporal encoder plus cascaded decoding predictor.

Queries and stage outputs live in variable space (``[B, token_len + T_pred, V]``)
so the query recursion is a literal concatenation of real points, earlier
interval predictions and the previous stage's remaining horizon. Each stage
embeds its query to ``d_model`` internally and maps back with a linear head.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .graph import SemiAdaptiveGraph
from .layers import Linear, Module, positional_encoding
from .series import AutoCorrConfig, AutoCorrelationLayer, series_decomp
from .tensor import Tensor


@dataclass
class ModelConfig:
    V: int
    T_in: int = 96
    T_pred: int = 96
    token_len: int | None = None
    d_model: int = 16
    num_heads: int = 2
    d_ff: int | None = None
    c: float = 1.0
    kernel: int = 25
    C_in: int = 16
    C_mid: int = 8
    C_out: int = 16
    w_gcm: float = 0.5
    interval_fractions: tuple[float, ...] = (0.25, 0.75)
    layers_per_stage: int = 2
    start_token_extra: int = 0
    num_encoder_layers: int = 1
    learn_graph: bool = True
    graph_logit_scale: float | None = None

    def __post_init__(self):
        if self.token_len is None:
            self.token_len = self.T_in // 2
        if self.d_ff is None:
            self.d_ff = 2 * self.d_model
        self.interval_fractions = tuple(float(f) for f in self.interval_fractions)
        if min(self.V, self.T_in, self.T_pred, self.d_model, self.layers_per_stage,
               self.num_encoder_layers) < 1:
            raise ValueError("sizes must be positive")
        if not 0 <= self.token_len <= self.T_in:
            raise ValueError(f"token_len {self.token_len} must lie in [0, T_in={self.T_in}]")
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.w_gcm <= 1.0:
            raise ValueError("w_gcm must lie in [0, 1]")
        if self.start_token_extra != 0:
            # extra real points in later queries would break equal query lengths
            raise ValueError("start_token_extra other than 0 is not supported")
        fr = np.asarray(self.interval_fractions)
        if fr.size == 0 or np.any(fr <= 0):
            raise ValueError("interval_fractions must be positive")
        if abs(fr.sum() - 1.0) > 1e-6:
            raise ValueError(f"interval_fractions sum to {fr.sum()}, expected 1")
        make_partition(self)  # raises if an interval would be empty
        shortest = min(self.T_in, self.query_len)
        if self.kernel % 2 == 0 or self.kernel > 2 * shortest - 1:
            raise ValueError(f"decomposition kernel {self.kernel} invalid for series of length {shortest}")

    @property
    def num_stages(self) -> int:
        return len(self.interval_fractions)

    @property
    def query_len(self) -> int:
        return self.token_len + self.T_pred

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["interval_fractions"] = list(self.interval_fractions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class IntervalPartition:
    boundaries: tuple[int, ...]

    def __post_init__(self):
        b = self.boundaries
        if len(b) < 2 or b[0] != 0 or any(x >= y for x, y in zip(b, b[1:])):
            raise ValueError(f"invalid interval boundaries {b}")

    def __len__(self):
        return len(self.boundaries) - 1

    def interval(self, i: int) -> tuple[int, int]:
        """Zero-based ``[start, stop)`` of interval ``i``."""
        return self.boundaries[i], self.boundaries[i + 1]

    @property
    def intervals(self) -> list[tuple[int, int]]:
        return [self.interval(i) for i in range(len(self))]


def make_partition(cfg: ModelConfig) -> IntervalPartition:
    cum = np.cumsum(cfg.interval_fractions)
    cum = cum / cum[-1]
    bounds = [0] + [int(round(c * cfg.T_pred)) for c in cum]
    bounds[-1] = cfg.T_pred
    if any(a >= b for a, b in zip(bounds, bounds[1:])):
        raise ValueError(f"interval fractions {cfg.interval_fractions} leave an empty interval "
                         f"for T_pred={cfg.T_pred}")
    return IntervalPartition(tuple(bounds))


@dataclass
class DecoderChainState:
    partition: IntervalPartition
    token: Tensor                       # real points, [B, token_len, V]
    queries: list[Tensor] = field(default_factory=list)
    outputs: list[Tensor] = field(default_factory=list)
    preds: list[Tensor] = field(default_factory=list)


def build_first_query(x_window, cfg: ModelConfig) -> Tensor:
    """Last ``token_len`` real points followed by ``T_pred`` zeros."""
    x = T._as_tensor(x_window)
    L = x.shape[-2]
    tail = x[..., L - cfg.token_len:, :]
    pad = Tensor(np.zeros(x.shape[:-2] + (cfg.T_pred, x.shape[-1])))
    return T.concat([tail, pad], axis=-2)


def build_next_query(i: int, state: DecoderChainState, cfg: ModelConfig) -> Tensor:
    """Query of stage ``i`` (1-based, i >= 2): real token, y_1..y_{i-1}, then Q_{i-1} over I_i..I_N."""
    if i < 2:
        raise ValueError("build_next_query is for stages 2..N")
    if len(state.preds) < i - 1 or len(state.outputs) < i - 1:
        raise ValueError(f"stage {i} needs outputs of stages 1..{i - 1}")
    start = cfg.token_len + state.partition.boundaries[i - 1]
    prev = state.outputs[i - 2]
    rest = prev[..., start:cfg.token_len + cfg.T_pred, :]
    return T.concat([state.token, *state.preds[: i - 1], rest], axis=-2)


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int, rng, out_bias: bool = True):
        self.fc1 = Linear(d_model, d_ff, rng)
        self.fc2 = Linear(d_ff, d_model, rng, bias=out_bias)

    def forward(self, x):
        return self.fc2(T.gelu(self.fc1(x)))


class DecoderLayer(Module):
    """One decoder block with a progressive decomposition ladder.

    Self auto-correlation, cross auto-correlation against the encoder
    features and a feed-forward block, each followed by a series
    decomposition; every trend is accumulated into the output.
    """

    def __init__(self, cfg: ModelConfig, rng):
        ac = AutoCorrConfig(cfg.num_heads, cfg.c)
        self.kernel = cfg.kernel
        self.self_attn = AutoCorrelationLayer(cfg.d_model, ac, rng)
        self.cross_attn = AutoCorrelationLayer(cfg.d_model, ac, rng)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff, rng)

    def forward(self, h: Tensor, enc: Tensor) -> Tensor:
        s0, t0 = series_decomp(h, self.kernel)
        s1, t1 = series_decomp(self.self_attn(s0, s0, s0) + s0, self.kernel)
        s2, t2 = series_decomp(self.cross_attn(s1, enc, enc) + s1, self.kernel)
        s3, t3 = series_decomp(self.ffn(s2) + s2, self.kernel)
        return s3 + t0 + t1 + t2 + t3


class Embedding(Module):
    """Linear value projection plus fixed sinusoidal positions."""

    def __init__(self, V: int, d_model: int, rng):
        self.d_model = d_model
        self.proj = Linear(V, d_model, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = T._as_tensor(x)
        return self.proj(x) + Tensor(positional_encoding(x.shape[-2], self.d_model))


class DecoderStage(Module):
    def __init__(self, cfg: ModelConfig, rng):
        self.layers = [DecoderLayer(cfg, rng) for _ in range(cfg.layers_per_stage)]
        self.head = Linear(cfg.d_model, cfg.V, rng)

    def forward(self, q_emb: Tensor, enc: Tensor) -> Tensor:
        h = q_emb
        for layer in self.layers:
            h = layer(h, enc)
        return self.head(h)


class EncoderLayer(Module):
    """Auto-correlation branch fused with the graph branch.

    The graph branch always reads the raw window; its ``[C_out, V]`` output
    per time step is flattened and projected to ``d_model``. The attention
    branch keeps only seasonal parts, so biases that add a constant over time
    would have no effect and are left out.
    """

    def __init__(self, cfg: ModelConfig, rng):
        ac = AutoCorrConfig(cfg.num_heads, cfg.c)
        self.kernel = cfg.kernel
        self.w_gcm = cfg.w_gcm
        self.attn = AutoCorrelationLayer(cfg.d_model, ac, rng, value_bias=False)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff, rng, out_bias=False)
        self.gcm = SemiAdaptiveGraph(cfg.V, cfg.T_in, rng, cfg.C_in, cfg.C_mid, cfg.C_out,
                                     learn_graph=cfg.learn_graph,
                                     logit_scale=cfg.graph_logit_scale)
        self.gcm_proj = Linear(cfg.C_out * cfg.V, cfg.d_model, rng)

    def attention_branch(self, h: Tensor) -> Tensor:
        s1, _ = series_decomp(self.attn(h, h, h) + h, self.kernel)
        s2, _ = series_decomp(self.ffn(s1) + s1, self.kernel)
        return s2

    def graph_branch(self, x: Tensor) -> Tensor:
        z = self.gcm(T.swapaxes(x, -1, -2))               # [B, C_out, V, T]
        B, C, V, L = z.shape
        z = T.reshape(T.transpose(z, (0, 3, 1, 2)), (B, L, C * V))
        return self.gcm_proj(z)

    def forward(self, h: Tensor, x: Tensor) -> Tensor:
        w = self.w_gcm
        if w == 0.0:
            return self.attention_branch(h)
        if w == 1.0:
            return self.graph_branch(x)
        return self.attention_branch(h) * (1.0 - w) + self.graph_branch(x) * w


class Stecformer(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.embedding = Embedding(cfg.V, cfg.d_model, rng)
        self.encoder = [EncoderLayer(cfg, rng) for _ in range(cfg.num_encoder_layers)]
        self.stages = [DecoderStage(cfg, rng) for _ in range(cfg.num_stages)]
        self.partition = make_partition(cfg)

    def _check_input(self, x) -> Tensor:
        x = T._as_tensor(x)
        if x.ndim != 3 or x.shape[1:] != (self.cfg.T_in, self.cfg.V):
            raise T.ShapeError(f"expected input [B, {self.cfg.T_in}, {self.cfg.V}], got {x.shape}")
        return x

    def encoder_forward(self, x) -> Tensor:
        x = self._check_input(x)
        h = self.embedding(x)
        for layer in self.encoder:
            h = layer(h, x)
        return h

    def decoder_stage_forward(self, i: int, q: Tensor, enc: Tensor) -> Tensor:
        """Run stage ``i`` (0-based) on a variable-space query; returns ``Q_i`` in variable space."""
        if q.shape[-2] != self.cfg.query_len:
            raise T.ShapeError(f"query length {q.shape[-2]} != {self.cfg.query_len}")
        return self.stages[i](self.embedding(q), enc)

    def cdp_forward(self, x, enc: Tensor) -> tuple[list[Tensor], Tensor, DecoderChainState]:
        x = T._as_tensor(x)
        cfg = self.cfg
        token = x[..., cfg.T_in - cfg.token_len:, :]
        state = DecoderChainState(self.partition, token)
        for i in range(cfg.num_stages):
            q = build_first_query(x, cfg) if i == 0 else build_next_query(i + 1, state, cfg)
            Q = self.decoder_stage_forward(i, q, enc)
            a, b = self.partition.interval(i)
            y = Q[..., cfg.token_len + a:cfg.token_len + b, :]
            state.queries.append(q)
            state.outputs.append(Q)
            state.preds.append(y)
        forecast = T.concat(state.preds, axis=-2) if len(state.preds) > 1 else state.preds[0]
        return state.preds, forecast, state

    def forward(self, x) -> tuple[list[Tensor], Tensor]:
        enc = self.encoder_forward(x)
        ys, forecast, _ = self.cdp_forward(x, enc)
        return ys, forecast

    def predict(self, x, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = []
        with T.no_tape():
            for s in range(0, len(x), batch_size):
                out.append(self.forward(x[s:s + batch_size])[1].data)
        return np.concatenate(out, axis=0)
