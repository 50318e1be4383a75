"""How each decoder stage builds its query from earlier interval predictions."""

import numpy as np

from stecformer.model import ModelConfig, Stecformer, make_partition

cfg = ModelConfig(V=1, T_in=12, T_pred=9, token_len=3, d_model=8, kernel=3, C_in=2, C_mid=2,
                  C_out=2, interval_fractions=(1 / 3, 1 / 3, 1 / 3), layers_per_stage=1)
part = make_partition(cfg)
print("intervals:", [part.interval(i) for i in range(cfg.num_stages)])

model = Stecformer(cfg, seed=0)
x = np.arange(12.0).reshape(1, 12, 1)
enc = model.encoder_forward(x)
ys, forecast, state = model.cdp_forward(x, enc)
for i, q in enumerate(state.queries, start=1):
    print(f"stage {i} query:", np.round(q.data[0, :, 0], 2).tolist())
print("forecast:", np.round(forecast.data[0, :, 0], 3).tolist())
