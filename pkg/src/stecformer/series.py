"""Series decomposition and auto-correlation attention.

All functions take the time axis second-to-last and channels last
(``[..., L, d]``), so a leading batch/head shape passes straight through.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import fft as sfft

from . import tensor as T
from .layers import Linear, Module
from .tensor import Tensor


class DecompPair(NamedTuple):
    seasonal: Tensor
    trend: Tensor


@lru_cache(maxsize=64)
def _average_matrix(length: int, kernel: int) -> np.ndarray:
    half = kernel // 2
    M = np.zeros((length, length))
    rows = np.arange(length)
    for off in range(-half, half + 1):
        np.add.at(M, (rows, np.clip(rows + off, 0, length - 1)), 1.0 / kernel)
    M.setflags(write=False)
    return M


def _check_kernel(length: int, kernel: int) -> None:
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"moving-average kernel must be odd and positive, got {kernel}")
    if kernel > 2 * length - 1:
        raise ValueError(f"kernel {kernel} too long for series of length {length}")


def moving_average(x: Tensor, kernel: int) -> Tensor:
    """Centered moving average along time with edge-replicated boundaries."""
    x = T._as_tensor(x)
    L = x.shape[-2]
    _check_kernel(L, kernel)
    if kernel == 1:
        return x
    return T.matmul(Tensor(_average_matrix(L, kernel)), x)


def series_decomp(x: Tensor, kernel: int) -> DecompPair:
    x = T._as_tensor(x)
    trend = moving_average(x, kernel)
    return DecompPair(x - trend, trend)


# ---------------------------------------------------------------- auto-correlation

def _xcorr(a: np.ndarray, b: np.ndarray, L: int) -> np.ndarray:
    """(1/L) sum_t a(t) b((t - tau) mod L) along axis -2, for every tau."""
    fa = sfft.rfft(a, axis=-2)
    fb = sfft.rfft(b, axis=-2)
    return sfft.irfft(fa * np.conj(fb), n=L, axis=-2) / L


def _cconv(a: np.ndarray, b: np.ndarray, L: int) -> np.ndarray:
    fa = sfft.rfft(a, axis=-2)
    fb = sfft.rfft(b, axis=-2)
    return sfft.irfft(fa * fb, n=L, axis=-2) / L


def autocorr_scores(q: Tensor, k: Tensor) -> Tensor:
    """Circular correlation R(tau) per channel via FFT, returned as ``[..., L(tau), d]``."""
    q, k = T._as_tensor(q), T._as_tensor(k)
    if q.shape != k.shape:
        raise T.ShapeError(f"autocorr: query {q.shape} vs key {k.shape}")
    L = q.shape[-2]
    if L < 2:
        raise ValueError("autocorr needs at least two time steps")
    qd, kd = q.data, k.data

    def bw(g):
        # dR/dq(t) = (1/L) sum_tau g(tau) k(t - tau);  dR/dk(s) = (1/L) sum_tau g(tau) q(s + tau)
        return _cconv(g, kd, L), _xcorr(qd, g, L)

    return T.record(_xcorr(qd, kd, L), (q, k), bw, "autocorr")


def autocorr_scores_naive(q: Tensor, k: Tensor) -> Tensor:
    """Direct O(L^2) summation of the same quantity; reference for the FFT path."""
    qd, kd = T._as_tensor(q).data, T._as_tensor(k).data
    if qd.shape != kd.shape:
        raise T.ShapeError(f"autocorr: query {qd.shape} vs key {kd.shape}")
    L = qd.shape[-2]
    if L < 2:
        raise ValueError("autocorr needs at least two time steps")
    out = np.zeros(qd.shape)
    for tau in range(L):
        acc = np.zeros(qd.shape[:-2] + qd.shape[-1:])
        for t in range(L):
            acc = acc + qd[..., t, :] * kd[..., (t - tau) % L, :]
        out[..., tau, :] = acc / L
    return Tensor(out)


@dataclass(frozen=True)
class AutoCorrConfig:
    num_heads: int = 2
    topk_factor: float = 1.0

    def __post_init__(self):
        if self.num_heads < 1:
            raise ValueError("num_heads must be positive")
        if self.topk_factor <= 0:
            raise ValueError("topk_factor must be positive")

    def top_k(self, length: int) -> int:
        return int(min(max(math.floor(self.topk_factor * math.log(length)), 1), length - 1))


def _delay_combine(v: Tensor, weights: Tensor, delays: np.ndarray) -> Tensor:
    """out[..., t, :] = sum_j weights[..., j] * v[..., (t - delays[..., j]) mod L, :].

    Evaluated as a circular convolution of ``v`` with the sparse delay kernel.
    """
    L = v.shape[-2]
    vd, wd = v.data, weights.data
    kern = np.zeros(delays.shape[:-1] + (L,))
    np.put_along_axis(kern, delays, wd, axis=-1)
    fk = sfft.rfft(kern, axis=-1)[..., :, None]
    fv = sfft.rfft(vd, axis=-2)
    out = sfft.irfft(fk * fv, n=L, axis=-2)

    def bw(g):
        fg = sfft.rfft(g, axis=-2)
        gv = sfft.irfft(fg * np.conj(fk), n=L, axis=-2)
        gk = sfft.irfft(fg * np.conj(fv), n=L, axis=-2).sum(axis=-1)
        return gv, np.take_along_axis(gk, delays, axis=-1)

    return T.record(out, (v, weights), bw, "delay_combine")


def select_delays(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores along the last axis; ties go to the smaller delay."""
    order = np.argsort(-scores, axis=-1, kind="stable")
    return order[..., :k]


def time_delay_agg(v: Tensor, scores: Tensor, cfg: AutoCorrConfig | int) -> Tensor:
    """Softmax-weighted sum of circularly rolled copies of ``v`` at the top-k delays.

    ``v`` is ``[..., L, d]`` and ``scores`` is ``[..., L]`` over delays.
    ``cfg`` may be an :class:`AutoCorrConfig` or the delay count itself.
    """
    v, scores = T._as_tensor(v), T._as_tensor(scores)
    L = v.shape[-2]
    if scores.shape[-1] != L or scores.shape[:-1] != v.shape[:-2]:
        raise T.ShapeError(f"time_delay_agg: values {v.shape} vs scores {scores.shape}")
    k = cfg.top_k(L) if isinstance(cfg, AutoCorrConfig) else int(cfg)
    if not 1 <= k <= L:
        raise ValueError(f"top-k {k} out of range for length {L}")
    delays = select_delays(scores.data, k)
    weights = T.softmax(T.take_along_axis(scores, delays, axis=-1), axis=-1)
    return _delay_combine(v, weights, delays)


def _fit_length(x: Tensor, L: int) -> Tensor:
    n = x.shape[-2]
    if n > L:
        return x[..., n - L:, :]
    if n < L:
        return T.pad_axis(x, 0, L - n, axis=-2, mode="zero")
    return x


class AutoCorrelationLayer(Module):
    """Multi-head auto-correlation with query/key/value/output projections.

    Keys and values longer than the query keep their most recent steps;
    shorter ones are zero-padded at the end. Query and key projections carry
    no bias: a bias there shifts every delay's score by the same amount, which
    neither the top-k selection nor the softmax can see. ``value_bias=False``
    also drops the value and output biases, which only add a constant over time.
    """

    def __init__(self, d_model: int, cfg: AutoCorrConfig, rng: np.random.Generator,
                 value_bias: bool = True):
        if d_model % cfg.num_heads:
            raise ValueError(f"d_model {d_model} not divisible by {cfg.num_heads} heads")
        self.cfg = cfg
        self.d_model = d_model
        self.q_proj = Linear(d_model, d_model, rng, bias=False)
        self.k_proj = Linear(d_model, d_model, rng, bias=False)
        self.v_proj = Linear(d_model, d_model, rng, bias=value_bias)
        self.out_proj = Linear(d_model, d_model, rng, bias=value_bias)

    def _heads(self, x: Tensor) -> Tensor:
        *lead, L, _ = x.shape
        H = self.cfg.num_heads
        x = T.reshape(x, (*lead, L, H, self.d_model // H))
        nd = x.ndim
        return T.swapaxes(x, nd - 3, nd - 2)               # [..., H, L, dh]

    def forward(self, queries: Tensor, keys: Tensor, values: Tensor) -> Tensor:
        L = queries.shape[-2]
        keys = _fit_length(keys, L)
        values = _fit_length(values, L)
        q = self._heads(self.q_proj(queries))
        k = self._heads(self.k_proj(keys))
        v = self._heads(self.v_proj(values))
        scores = T.mean(autocorr_scores(q, k), axis=-1)     # [..., H, L]
        out = time_delay_agg(v, scores, self.cfg)           # [..., H, L, dh]
        nd = out.ndim
        out = T.swapaxes(out, nd - 3, nd - 2)
        out = T.reshape(out, (*out.shape[:-2], self.d_model))
        return self.out_proj(out)
