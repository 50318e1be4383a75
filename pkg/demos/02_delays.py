"""Auto-correlation picks out the period of a noisy sine and rolls values by it."""

import numpy as np

from stecformer.series import AutoCorrConfig, autocorr_scores, select_delays, series_decomp
from stecformer.tensor import Tensor

L, period = 96, 24
t = np.arange(L)
rng = np.random.default_rng(1)
x = np.sin(2 * np.pi * t / period) + 0.05 * t / L + 0.1 * rng.normal(size=L)

season, trend = series_decomp(Tensor(x[:, None]), 25)
s = season.data
print(f"trend spans {trend.data.min():.3f} to {trend.data.max():.3f}")

R = autocorr_scores(Tensor(s), Tensor(s)).data[:, 0]
k = AutoCorrConfig(1, 1.0).top_k(L)
print(f"top-{k} delays:", select_delays(R, k).tolist())
print("lag with the largest score after 0:", int(np.argmax(R[1:L // 2])) + 1)
