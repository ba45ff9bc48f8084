"""Composite objective and the deterministic training loop.

The objective is focal classification loss plus weighted AU-detection and
orthogonal-decoupling terms.  The optimizer is AdamW with two parameter
groups: the motion branch (whose lr decays by 0.1 every ``motion_decay_every``
epochs, compounding) and everything else at the base lr.  All randomness
derives from the run seed, so identical (seed, config, data) replays
identical metric logs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch

from .checkpoint import Checkpoint, from_model
from .config import RunConfig
from .data_model import DatasetManifest
from .errors import EmptyFold, NonFiniteLoss
from .model import build_model

PROB_EPS = 1e-7


def focal_loss(logits: torch.Tensor, targets: torch.Tensor, gamma: float) -> torch.Tensor:
    """Mean of -(1 - p_t)^gamma * log(p_t) over the batch.

    p_t is the softmax probability of the true class, clamped to
    [1e-7, 1].  gamma=0 reduces to standard cross-entropy.
    """
    probs = torch.softmax(logits, dim=-1)
    p_t = probs.gather(1, targets.unsqueeze(1)).squeeze(1).clamp(PROB_EPS, 1.0)
    return (-((1.0 - p_t) ** gamma) * p_t.log()).mean()


def total_loss(l_cls: torch.Tensor, l_au: torch.Tensor, l_orth: torch.Tensor, lambda_au: float, lambda_orth: float) -> torch.Tensor:
    for name, value in (("cls", l_cls), ("au", l_au), ("orth", l_orth)):
        if not torch.isfinite(value):
            raise NonFiniteLoss(f"loss component {name} is {value.item()}")
    return l_cls + lambda_au * l_au + lambda_orth * l_orth


def derive_seed(base_seed: int, *tags) -> int:
    """Stable sub-seed from a base seed and context tags (fold id, cell id)."""
    text = ":".join([str(base_seed), *map(str, tags)])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") % (2**63)


def flow_stats(flows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean/std over a [N, T-1, C, H, W] stack."""
    mean = flows.mean(axis=(0, 1, 3, 4))
    std = flows.std(axis=(0, 1, 3, 4))
    return mean.astype(np.float32), np.maximum(std, 1e-6).astype(np.float32)


def standardize(flow: torch.Tensor, mean: np.ndarray, std: np.ndarray) -> torch.Tensor:
    m = torch.as_tensor(mean, dtype=flow.dtype).view(1, 1, -1, 1, 1)
    s = torch.as_tensor(std, dtype=flow.dtype).view(1, 1, -1, 1, 1)
    return (flow - m) / s


def load_samples(manifest: DatasetManifest, sample_ids: list[str]):
    """Materialize flows, class ids, and AU targets for the given samples."""
    by_id = {r.sample_id: r for r in manifest.records}
    records = [by_id[sid] for sid in sample_ids]
    flows = np.stack([manifest.load_flow(r) for r in records])
    labels = np.array([r.class_id(manifest.task_scheme) for r in records], dtype=np.int64)
    au = np.stack([r.au_vector() for r in records]).astype(np.float32)
    return flows, labels, au


def make_optimizer(model, optim_cfg) -> torch.optim.AdamW:
    motion_params = list(model.motion.parameters())
    motion_ids = {id(p) for p in motion_params}
    rest = [p for p in model.parameters() if id(p) not in motion_ids]
    return torch.optim.AdamW(
        [
            {"params": motion_params, "lr": optim_cfg.lr},
            {"params": rest, "lr": optim_cfg.lr},
        ],
        lr=optim_cfg.lr,
        weight_decay=optim_cfg.weight_decay,
    )


def motion_lr_at(epoch: int, optim_cfg) -> float:
    return optim_cfg.lr * optim_cfg.motion_lr_decay ** (epoch // optim_cfg.motion_decay_every)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[dict]  # one row per epoch: epoch, l_cls, l_au, l_orth, uf1_train

    def log_csv(self) -> str:
        lines = ["epoch,l_cls,l_au,l_orth,uf1_train"]
        for row in self.log:
            lines.append(
                f"{row['epoch']},{row['l_cls']:.6f},{row['l_au']:.6f},{row['l_orth']:.6f},{row['uf1_train']:.6f}"
            )
        return "\n".join(lines) + "\n"


def train_fold(manifest: DatasetManifest, train_ids: list[str], run_cfg: RunConfig, seed: int) -> TrainResult:
    """Train one model on the given samples and return checkpoint + log."""
    from .decouple import orth_loss, orthogonalize  # noqa: PLC0415
    from .evaluation import confusion_from_predictions, uf1  # noqa: PLC0415
    from .motion_branch import au_loss  # noqa: PLC0415

    if not train_ids:
        raise EmptyFold("training fold has no samples")
    if run_cfg.deterministic:
        torch.use_deterministic_algorithms(True)

    flows, labels, au_targets = load_samples(manifest, train_ids)
    mean, std = flow_stats(flows)
    num_classes = manifest.num_classes
    n_au = len(manifest.au_vocabulary)

    model = build_model(run_cfg.model, num_classes, n_au, manifest.dims, seed)
    model.train()
    optimizer = make_optimizer(model, run_cfg.optim)

    x_all = standardize(torch.from_numpy(flows), mean, std)
    y_all = torch.from_numpy(labels)
    au_all = torch.from_numpy(au_targets)
    n = len(train_ids)
    shuffler = torch.Generator().manual_seed(derive_seed(seed, "shuffle"))

    log: list[dict] = []
    for epoch in range(run_cfg.optim.epochs):
        optimizer.param_groups[0]["lr"] = motion_lr_at(epoch, run_cfg.optim)
        perm = torch.randperm(n, generator=shuffler)
        sums = {"l_cls": 0.0, "l_au": 0.0, "l_orth": 0.0}
        preds = torch.empty(n, dtype=torch.int64)
        for start in range(0, n, run_cfg.optim.batch_size):
            idx = perm[start : start + run_cfg.optim.batch_size]
            x, y, au_y = x_all[idx], y_all[idx], au_all[idx]
            out = model(x)
            l_cls = focal_loss(out.logits, y, run_cfg.loss.focal_gamma)
            l_au = au_loss(out.au_logits, au_y)
            if out.pair is not None:
                l_orth = orth_loss(out.pair)
            else:
                l_orth = torch.zeros((), dtype=l_cls.dtype)
            loss = total_loss(l_cls, l_au, l_orth, run_cfg.loss.lambda_au, run_cfg.loss.lambda_orth)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            frac = len(idx) / n
            sums["l_cls"] += l_cls.item() * frac
            sums["l_au"] += l_au.item() * frac
            sums["l_orth"] += l_orth.item() * frac
            preds[idx] = out.logits.argmax(dim=-1).detach()
        cm = confusion_from_predictions(labels, preds.numpy(), num_classes)
        log.append({"epoch": epoch, **sums, "uf1_train": uf1(cm)})

    model.eval()
    checkpoint = from_model(model, run_cfg, mean, std, manifest.dims, num_classes, n_au)
    return TrainResult(checkpoint=checkpoint, log=log)


# ---------------------------------------------------------------------------
# Ablation grids
# ---------------------------------------------------------------------------

LAMBDA_SWEEP = [round(0.2 * i, 1) for i in range(11)]  # 0.0 .. 2.0


def table_iv_grid(run_cfg: RunConfig) -> list[tuple[str, RunConfig]]:
    """The five component-toggle rows: plain attention, single-scale,
    no-CoFM, no-orthogonal-loss, and the full model."""
    import copy

    rows = []

    plain = copy.deepcopy(run_cfg)
    plain.model.sevit.rates = [1]
    rows.append(("plain_attention", plain))

    single = copy.deepcopy(run_cfg)
    single.model.sevit.rates = [min(4, max(run_cfg.model.sevit.rates))]
    rows.append(("single_scale", single))

    no_cofm = copy.deepcopy(run_cfg)
    no_cofm.model.use_cofm = False
    rows.append(("no_cofm", no_cofm))

    no_orth = copy.deepcopy(run_cfg)
    no_orth.loss.lambda_orth = 0.0
    rows.append(("no_orth", no_orth))

    rows.append(("full", copy.deepcopy(run_cfg)))
    return rows


def lambda_grid(run_cfg: RunConfig, which: str) -> list[tuple[str, RunConfig]]:
    import copy

    if which not in ("lambda_au", "lambda_orth"):
        raise ValueError(f"unknown sweep {which!r}")
    rows = []
    for value in LAMBDA_SWEEP:
        cell = copy.deepcopy(run_cfg)
        setattr(cell.loss, which, value)
        rows.append((f"{which}={value}", cell))
    return rows


def ablate(manifest: DatasetManifest, grid: list[tuple[str, RunConfig]], base_seed: int, jobs: int = 1) -> list[dict]:
    """Run every grid cell under LOSO; errors are recorded, not fatal.

    Returns one row per cell: {cell, uf1, uar, error}.
    """
    from .evaluation import run_loso  # noqa: PLC0415

    rows = []
    for cell_index, (name, cfg) in enumerate(grid):
        seed = derive_seed(base_seed, "cell", cell_index, name)
        try:
            report = run_loso(manifest, cfg, seed, jobs=jobs)
            rows.append({"cell": name, "uf1": report.uf1, "uar": report.uar, "error": ""})
        except Exception as exc:  # noqa: BLE001 - grid keeps going per cell
            rows.append({"cell": name, "uf1": float("nan"), "uar": float("nan"), "error": str(exc)})
    return rows


def ablation_csv(rows: list[dict]) -> str:
    lines = ["cell,uf1,uar,error"]
    for row in rows:
        lines.append(f"{row['cell']},{row['uf1']:.6f},{row['uar']:.6f},{row['error']}")
    return "\n".join(lines) + "\n"
