"""Training loop, metrics, gradient checking, and checkpoints.

Everything runs in 64-bit floats on a single thread so that identical
(seed, config, data) triples reproduce checkpoints bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .fileio import write_json

HOST_KINDS = ("temporal_linear", "gcn_temporal")


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr_initial: float = 0.01
    lr_after: float = 0.001
    lr_switch_epoch: int = 75
    epochs: int = 150
    seed: int = 0
    d: int = 32
    d_prime: int = 16
    k: int = 3
    threshold: float = 0.4
    da: bool = True
    pg: bool = True
    ar: bool = True
    host: str = "temporal_linear"
    train_frac: float = 0.7
    val_frac: float = 0.1
    test_frac: float = 0.2

    def __post_init__(self):
        if not 0 < self.lr_after <= self.lr_initial:
            raise ValueError("need 0 < lr_after <= lr_initial")
        if self.lr_switch_epoch > self.epochs:
            raise ValueError("lr_switch_epoch exceeds epochs")
        if self.host not in HOST_KINDS:
            raise ValueError(f"unknown host kind {self.host!r}")
        total = self.train_frac + self.val_frac + self.test_frac
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {total}, not 1")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch number."""
        return self.lr_initial if epoch <= self.lr_switch_epoch \
            else self.lr_after

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainConfig":
        raw = json.loads(Path(path).read_text())
        unknown = set(raw) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw)

    def to_json(self, path: str | Path) -> None:
        write_json(path, asdict(self))


def init_parameters(model: nn.Module, seed: int) -> None:
    """Deterministic re-initialization of every parameter.

    Matrices (2+ dims) draw uniform +-sqrt(6/(fan_in+fan_out)) with fans
    from the last two dims; bias vectors zero; remaining vectors (norm
    gains, scalar filter weights) one.  A single seeded generator visits
    parameters in registration order, so the result is bit-reproducible.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if p.dim() >= 2:
                bound = (6.0 / (p.shape[-1] + p.shape[-2])) ** 0.5
                p.uniform_(-bound, bound, generator=gen)
            elif name.endswith("bias"):
                p.zero_()
            else:
                p.fill_(1.0)


def mse_loss(pred: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs "
                         f"{tuple(truth.shape)}")
    return torch.mean((pred - truth) ** 2)


HORIZONS = (("15min", 0), ("30min", 1), ("60min", 3))


@dataclass
class MetricsReport:
    """MAE/RMSE/MAPE per horizon plus the all-step pool."""

    horizons: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return self.horizons

    def overall_mae(self) -> float:
        return self.horizons["overall"]["mae"]


def _metric_block(err: np.ndarray, truth: np.ndarray,
                  mape_floor: float) -> dict:
    ae = np.abs(err)
    keep = truth >= mape_floor
    block = {
        "mae": float(ae.mean()),
        "rmse": float(np.sqrt((err ** 2).mean())),
        "count": int(err.size),
        "mape_excluded": int(err.size - keep.sum()),
    }
    if keep.any():
        block["mape"] = float((ae[keep] / truth[keep]).mean() * 100.0)
    else:
        block["mape"] = None  # every target sat below the floor
    return block


def metrics(pred: np.ndarray, truth: np.ndarray,
            mape_floor: float = 1.0) -> MetricsReport:
    """Per-horizon report; predictions must be in raw flow units.

    Horizon steps: first step is 15 min, second 30 min, fourth 60 min;
    `overall` pools every predicted step.  Entries with truth below
    mape_floor are excluded from MAPE only and counted.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    err = pred - truth
    report = {}
    for name, step in HORIZONS:
        if step >= pred.shape[-2]:
            continue
        report[name] = _metric_block(err[..., step, :], truth[..., step, :],
                                     mape_floor)
    report["overall"] = _metric_block(err, truth, mape_floor)
    return MetricsReport(report)


# ---------------------------------------------------------------- training


def _model_outputs(model, batch: dict) -> torch.Tensor:
    """Route the sample tensors a model actually consumes."""
    from .hosts import ComposedModel, HostOnlyModel
    if isinstance(model, ComposedModel):
        return model(batch["x"], batch["e_raw"], batch["p"],
                     batch["basis"], batch.get("geo_basis"))
    if isinstance(model, HostOnlyModel):
        return model(batch["x"], batch.get("geo_basis"))
    raise TypeError(f"unsupported model type {type(model).__name__}")


@dataclass
class TrainResult:
    log_rows: list
    best_epoch: int
    best_val_mae: float
    final_state: dict
    best_state: dict


def train(config: TrainConfig, dataset, model: nn.Module,
          out_dir: str | Path | None = None,
          log_every: int = 0) -> TrainResult:
    """Adam + MSE with the two-step learning-rate schedule.

    Batches are drawn in a freshly seeded shuffled order each epoch with
    the last partial batch kept.  Keeps the best-validation-MAE state
    and the final state; writes PREFIX files when out_dir is given.
    """
    torch.set_num_threads(1)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr_initial,
                           betas=(0.9, 0.999), eps=1e-8)
    shuffler = torch.Generator().manual_seed(config.seed)
    n_train = dataset.split_size("train")
    log_rows = []
    best = (float("inf"), -1, None)

    for epoch in range(1, config.epochs + 1):
        lr = config.lr_at(epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        model.train()
        order = torch.randperm(n_train, generator=shuffler)
        total_loss, total_count = 0.0, 0
        for start in range(0, n_train, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = dataset.batch("train", idx)
            opt.zero_grad()
            loss = mse_loss(_model_outputs(model, batch), batch["y"])
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, "
                    f"batch {start // config.batch_size}")
            loss.backward()
            opt.step()
            total_loss += float(loss.detach()) * len(idx)
            total_count += len(idx)
        train_loss = total_loss / max(total_count, 1)
        val_mae = _split_mae(model, dataset, "val")
        log_rows.append((epoch, lr, train_loss, val_mae))
        if log_every and epoch % log_every == 0:
            print(f"epoch {epoch}: lr {lr} loss {train_loss:.5f} "
                  f"val mae {val_mae:.5f}")
        if val_mae < best[0]:
            best = (val_mae, epoch,
                    {k: v.detach().clone()
                     for k, v in model.state_dict().items()})

    final_state = {k: v.detach().clone()
                   for k, v in model.state_dict().items()}
    result = TrainResult(log_rows, best[1], best[0], final_state,
                         best[2] if best[2] is not None else final_state)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_train_log(out_dir / "train_log.csv", log_rows)
        save_checkpoint(out_dir / "final", model)
        model.load_state_dict(result.best_state)
        save_checkpoint(out_dir / "best", model)
        model.load_state_dict(final_state)
    return result


def _split_mae(model: nn.Module, dataset, split: str) -> float:
    model.eval()
    with torch.no_grad():
        batch = dataset.batch(split)
        pred = _model_outputs(model, batch)
        return float(torch.mean(torch.abs(pred - batch["y"])))


def evaluate(model: nn.Module, dataset, split: str = "test",
             mape_floor: float = 1.0) -> MetricsReport:
    model.eval()
    with torch.no_grad():
        batch = dataset.batch(split)
        pred = _model_outputs(model, batch)
        return metrics(pred.numpy(), batch["y"].numpy(), mape_floor)


def write_train_log(path: str | Path, rows: list) -> None:
    lines = ["epoch,lr,train_loss,val_mae"]
    for epoch, lr, loss, mae in rows:
        lines.append(f"{epoch},{repr(float(lr))},{repr(float(loss))},"
                     f"{repr(float(mae))}")
    Path(path).write_text("\n".join(lines) + "\n")


# ------------------------------------------------------------ grad checking


def grad_check(loss_fn, named_params, step: float = 1e-5) -> dict:
    """Central finite differences against autograd, per parameter tensor.

    loss_fn must recompute the scalar loss from scratch.  Returns the max
    relative error |g_a - g_n| / max(1e-8, |g_a| + |g_n|) per tensor.
    """
    named_params = list(named_params)
    for _, p in named_params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {name: p.grad.detach().clone() if p.grad is not None
                else torch.zeros_like(p)
                for name, p in named_params}
    worst = {}
    with torch.no_grad():
        for name, p in named_params:
            flat = p.view(-1)
            errs = torch.zeros(flat.shape[0], dtype=torch.float64)
            for i in range(flat.shape[0]):
                orig = flat[i].item()
                flat[i] = orig + step
                up = float(loss_fn())
                flat[i] = orig - step
                down = float(loss_fn())
                flat[i] = orig
                numeric = (up - down) / (2.0 * step)
                ga = float(analytic[name].view(-1)[i])
                errs[i] = abs(ga - numeric) / max(1e-8, abs(ga) + abs(numeric))
            worst[name] = float(errs.max())
    return worst


# ------------------------------------------------------------- checkpoints


def save_checkpoint(prefix: str | Path, model: nn.Module) -> None:
    """JSON manifest plus one little-endian f64 blob, manifest order."""
    prefix = Path(prefix)
    manifest = []
    chunks = []
    offset = 0
    state = model.state_dict()
    for name, tensor in state.items():
        arr = tensor.detach().numpy().astype("<f8", copy=False)
        manifest.append({"name": name, "shape": list(arr.shape),
                         "dtype": "f64", "byte_offset": offset})
        raw = arr.tobytes()
        chunks.append(raw)
        offset += len(raw)
    write_json(prefix.with_suffix(".json"), manifest)
    prefix.with_suffix(".bin").write_bytes(b"".join(chunks))


def load_checkpoint(prefix: str | Path, model: nn.Module) -> None:
    prefix = Path(prefix)
    manifest = json.loads(prefix.with_suffix(".json").read_text())
    blob = prefix.with_suffix(".bin").read_bytes()
    state = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["byte_offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=count,
                            offset=start).reshape(shape)
        state[entry["name"]] = torch.from_numpy(arr.copy())
    current = model.state_dict()
    for name, tensor in state.items():
        if name not in current:
            raise ValueError(f"checkpoint tensor {name!r} not in model")
        if tuple(current[name].shape) != tuple(tensor.shape):
            raise ValueError(
                f"shape mismatch for {name!r}: checkpoint "
                f"{tuple(tensor.shape)} vs model {tuple(current[name].shape)}")
    missing = set(current) - set(state)
    if missing:
        raise ValueError(f"checkpoint missing tensors: {sorted(missing)}")
    model.load_state_dict(state)
