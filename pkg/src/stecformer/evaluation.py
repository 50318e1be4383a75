"""Metrics, sub-period consistency, experiment configs and the run/ablate orchestration."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_model, save_model
from .data import (PRESETS, NormStats, RawSeries, SynthSpec, default_synth_spec, load_csv,
                   normalize, split_712, synth_dataset, window_arrays)
from .model import ModelConfig, Stecformer
from .training import TrainConfig, WindowData, train

log = logging.getLogger(__name__)


def mse(pred, target) -> float:
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def mae(pred, target) -> float:
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target)))


def subperiod_bounds(T_pred: int, parts: int = 6) -> list[tuple[int, int]]:
    """Equal parts in temporal order; the remainder goes to the last part."""
    if T_pred < parts:
        raise ValueError(f"T_pred={T_pred} shorter than {parts} parts")
    size = T_pred // parts
    bounds = [(i * size, (i + 1) * size) for i in range(parts)]
    bounds[-1] = (bounds[-1][0], T_pred)
    return bounds


def jitter(values) -> float:
    """Largest ratio between adjacent sub-period MSEs; +inf if any sub-period is error-free."""
    worst = 1.0
    for a, b in zip(values, values[1:]):
        lo, hi = min(a, b), max(a, b)
        if lo <= 0.0:
            if hi > 0.0:
                return math.inf
            continue
        worst = max(worst, hi / lo)
    return worst


def subperiod_consistency(pred, target, parts: int = 6) -> tuple[list[float], float]:
    """Per-part MSE over the horizon axis (second to last) and the jitter statistic."""
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    bounds = subperiod_bounds(pred.shape[-2], parts)
    mses = [mse(pred[..., a:b, :], target[..., a:b, :]) for a, b in bounds]
    return mses, jitter(mses)


@dataclass
class ForecastReport:
    mse: float
    mae: float
    T_in: int
    T_pred: int
    subperiod_mse: list[float]
    jitter: float
    seed: int
    n_windows: int
    runtime_seconds: float = 0.0
    best_epoch: int = 0
    stopped_epoch: int = 0
    denormalized: dict | None = None
    ablation: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if math.isinf(d["jitter"]):
            d["jitter"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ForecastReport":
        d = dict(d)
        if d.get("jitter") == "inf":
            d["jitter"] = math.inf
        return cls(**d)


def forecast_report(pred, target, T_in: int, seed: int = 0, stats: NormStats | None = None,
                    **extra) -> ForecastReport:
    sub, jit = subperiod_consistency(pred, target)
    denorm = None
    if stats is not None:
        p, t = stats.inverse(pred), stats.inverse(target)
        denorm = {"mse": mse(p, t), "mae": mae(p, t)}
    return ForecastReport(mse=mse(pred, target), mae=mae(pred, target), T_in=T_in,
                          T_pred=pred.shape[-2], subperiod_mse=sub, jitter=jit, seed=seed,
                          n_windows=len(pred), denormalized=denorm, **extra)


# ---------------------------------------------------------------- experiment config

@dataclass
class Ablation:
    use_gcm: bool = True
    use_learned_graph: bool = True
    use_cdp: bool = True

    def apply(self, model: dict, w_gcm: float) -> dict:
        """Fold the toggles into model-config keys; the toggles are the only difference."""
        model = dict(model)
        model["w_gcm"] = w_gcm if self.use_gcm else 0.0
        model["learn_graph"] = self.use_learned_graph
        if not self.use_cdp:
            model["interval_fractions"] = [1.0]
        return model


ABLATION_GRID: dict[int, Ablation] = {
    1: Ablation(use_gcm=False, use_learned_graph=False, use_cdp=False),
    2: Ablation(use_gcm=False, use_learned_graph=False, use_cdp=True),
    3: Ablation(use_gcm=True, use_learned_graph=True, use_cdp=False),
    4: Ablation(use_gcm=True, use_learned_graph=False, use_cdp=False),
    5: Ablation(use_gcm=True, use_learned_graph=True, use_cdp=True),
}


@dataclass
class ExperimentConfig:
    dataset: dict
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    ablation: Ablation = field(default_factory=Ablation)
    seed: int = 0
    output_dir: str = "runs/default"
    base_dir: Path = field(default=Path("."), repr=False)

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path = Path(".")) -> "ExperimentConfig":
        unknown = set(d) - {"dataset", "model", "train", "ablation", "seed", "output_dir"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "dataset" not in d:
            raise ValueError("config needs a 'dataset' section")
        ds = d["dataset"]
        unknown = set(ds) - {"path", "preset", "synth", "train_stride", "eval_stride"}
        if unknown:
            raise ValueError(f"unknown dataset keys: {sorted(unknown)}")
        if "path" not in ds and ds.get("preset") != "synthetic":
            raise ValueError("dataset needs a 'path' unless preset is 'synthetic'")
        if "preset" in ds and ds["preset"] not in PRESETS:
            raise ValueError(f"unknown preset {ds['preset']!r}; choose from {sorted(PRESETS)}")
        abl = d.get("ablation", {})
        return cls(dataset=ds, model=d.get("model", {}), train=d.get("train", {}),
                   ablation=Ablation(**abl), seed=int(d.get("seed", 0)),
                   output_dir=d.get("output_dir", "runs/default"), base_dir=Path(base_dir))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)

    def with_ablation(self, ablation: Ablation, output_dir: str | None = None) -> "ExperimentConfig":
        return dataclasses.replace(self, ablation=ablation, output_dir=output_dir or self.output_dir)

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def model_config(self, V: int) -> ModelConfig:
        preset = PRESETS.get(self.dataset.get("preset", ""), {})
        base = {"V": V}
        if preset:
            base["T_in"] = preset["T_in"]
            base["T_pred"] = preset["horizons"][0]
        base.update(self.model)
        base["V"] = V
        w = float(base.pop("w_gcm", 0.5))
        return ModelConfig.from_dict(self.ablation.apply(base, w))

    def train_config(self) -> TrainConfig:
        d = dict(self.train)
        d.setdefault("seed", self.seed)
        return TrainConfig.from_dict(d)


@dataclass
class PreparedData:
    raw: RawSeries
    stats: NormStats
    train: RawSeries
    val: RawSeries
    test: RawSeries


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    ds = cfg.dataset
    if ds.get("preset") == "synthetic" and "path" not in ds:
        synth = ds.get("synth")
        spec = SynthSpec.from_dict(synth) if synth else default_synth_spec(cfg.seed)
        raw = synth_dataset(spec)
    else:
        raw = load_csv(cfg.resolve(ds["path"]))
    train_s, val_s, test_s = split_712(raw)
    stats = NormStats.fit(train_s)
    return PreparedData(raw, stats, normalize(train_s, stats), normalize(val_s, stats),
                        normalize(test_s, stats))


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def read_csv_rows(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def evaluate_model(model: Stecformer, data: PreparedData, cfg: ExperimentConfig,
                   denormalized: bool = False) -> tuple[ForecastReport, np.ndarray, np.ndarray]:
    mc = model.cfg
    stride = int(cfg.dataset.get("eval_stride", 1))
    x, y = window_arrays(data.test, mc.T_in, mc.T_pred, stride)
    pred = model.predict(x)
    report = forecast_report(pred, y, mc.T_in, seed=cfg.seed,
                             stats=data.stats if denormalized else None,
                             ablation=dataclasses.asdict(cfg.ablation))
    return report, pred, y


def run_experiment(config, data: PreparedData | None = None, denormalized: bool = False,
                   write: bool = True) -> ForecastReport:
    """Ingest, split, normalize, train, evaluate; write artifacts into ``output_dir``."""
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.load(config)
    t0 = time.perf_counter()
    stage = "data"
    try:
        data = data if data is not None else prepare_data(cfg)
        stage = "config"
        mc = cfg.model_config(data.raw.V)
        tc = cfg.train_config()
        stage = "windows"
        ts = int(cfg.dataset.get("train_stride", 1))
        xtr, ytr = window_arrays(data.train, mc.T_in, mc.T_pred, ts)
        xva, yva = window_arrays(data.val, mc.T_in, mc.T_pred, 1)
        stage = "train"
        model = Stecformer(mc, seed=cfg.seed)
        result = train(model, WindowData(xtr, ytr, xva, yva), tc)
        stage = "evaluate"
        report, pred, y = evaluate_model(model, data, cfg, denormalized)
    except Exception as e:
        raise RuntimeError(f"[{stage}] {type(e).__name__}: {e}") from e
    report.best_epoch = result.best_epoch
    report.stopped_epoch = result.stopped_epoch
    report.runtime_seconds = time.perf_counter() - t0
    if write:
        out = cfg.resolve(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report(out / "report.json", report)
        _write_csv(out / "history.csv", ["epoch", "train_loss", "val_loss"],
                   [(h["epoch"], repr(h["train_loss"]), repr(h["val_loss"])) for h in result.history])
        save_model(out / "model.ckpt", model)
        write_graph_csv(out / "learned_graph.csv", model)
        write_subperiod_csv(out / "subperiods.csv", {"model": report})
    return report


def write_report(path, report: ForecastReport) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))


def read_report(path) -> ForecastReport:
    return ForecastReport.from_dict(json.loads(Path(path).read_text()))


def write_graph_csv(path, model: Stecformer, layer: int = 0) -> None:
    A = model.encoder[layer].gcm.A.data
    _write_csv(Path(path), [f"n{j}" for j in range(A.shape[1])], [[repr(float(v)) for v in row] for row in A])


def write_subperiod_csv(path, reports: dict[str, ForecastReport]) -> None:
    rows = []
    for label, rep in reports.items():
        for i, v in enumerate(rep.subperiod_mse, start=1):
            rows.append((label, i, repr(v)))
    _write_csv(Path(path), ["label", "part", "mse"], rows)


def evaluate_checkpoint(config, checkpoint, denormalized: bool = False) -> ForecastReport:
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.load(config)
    model = load_model(checkpoint)
    data = prepare_data(cfg)
    report, _, _ = evaluate_model(model, data, cfg, denormalized)
    return report


ABLATION_COLUMNS = ["exp_id", "use_gcm", "use_learned_graph", "use_cdp", "mse", "mae", "jitter"]


def run_ablation(config, parallel: int = 1, exp_ids=(1, 2, 3, 4, 5)) -> dict[int, ForecastReport]:
    """Run the toggle grid over one shared data preparation; writes ``ablation.csv``."""
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.load(config)
    data = prepare_data(cfg)
    root = cfg.resolve(cfg.output_dir)

    def one(exp_id):
        sub = cfg.with_ablation(ABLATION_GRID[exp_id], str(root / f"exp{exp_id}"))
        return exp_id, run_experiment(sub, data=data)

    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            reports = dict(pool.map(one, exp_ids))
    else:
        reports = dict(one(e) for e in exp_ids)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for e in exp_ids:
        a, r = ABLATION_GRID[e], reports[e]
        rows.append((e, int(a.use_gcm), int(a.use_learned_graph), int(a.use_cdp),
                     repr(r.mse), repr(r.mae), repr(r.jitter)))
    _write_csv(root / "ablation.csv", ABLATION_COLUMNS, rows)
    return reports
