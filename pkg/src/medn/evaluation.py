"""LOSO harness, unweighted F1/recall metrics, and feature export.

Metrics follow the aggregate-then-score protocol: predictions from every
fold are pooled into one confusion matrix first, and UF1/UAR are computed on
that aggregate (not averaged over folds).
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt_mod
from .config import RunConfig, run_config_from_dict
from .data_model import DatasetManifest, hard_sample_ids, load_manifest, loso_splits
from .errors import EmptyFold
from .training import derive_seed, load_samples, standardize, train_fold


def confusion_from_predictions(y_true, y_pred, num_classes: int) -> np.ndarray:
    """C x C count matrix, rows = true class, cols = predicted class."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(np.asarray(y_true), np.asarray(y_pred)):
        cm[int(t), int(p)] += 1
    return cm


def uf1(cm: np.ndarray) -> float:
    """Unweighted mean of per-class F1 = 2*TP / (2*TP + FP + FN).

    A class with no true and no predicted samples contributes F1 = 0.
    """
    c = cm.shape[0]
    scores = []
    for i in range(c):
        tp = cm[i, i]
        fn = cm[i, :].sum() - tp
        fp = cm[:, i].sum() - tp
        denom = 2 * tp + fp + fn
        scores.append(2.0 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(scores))


def uar(cm: np.ndarray) -> float:
    """Unweighted mean of per-class recall TP / N_i; empty classes recall 0."""
    c = cm.shape[0]
    recalls = []
    for i in range(c):
        n_i = cm[i, :].sum()
        recalls.append(cm[i, i] / n_i if n_i > 0 else 0.0)
    return float(np.mean(recalls))


def predict(checkpoint: ckpt_mod.Checkpoint, manifest: DatasetManifest, sample_ids: list[str], batch_size: int = 256):
    """Return (y_true, y_pred, probs) for the given samples."""
    model = checkpoint.build()
    flows, labels, _ = load_samples(manifest, sample_ids)
    x = standardize(torch.from_numpy(flows), checkpoint.flow_mean, checkpoint.flow_std)
    probs = []
    with torch.no_grad():
        for start in range(0, len(sample_ids), batch_size):
            out = model(x[start : start + batch_size])
            probs.append(torch.softmax(out.logits, dim=-1))
    prob = torch.cat(probs).numpy()
    return labels, prob.argmax(axis=1), prob


@dataclass
class FoldResult:
    subject: str
    sample_ids: list[str]
    y_true: np.ndarray
    y_pred: np.ndarray
    probs: np.ndarray


@dataclass
class EvalReport:
    task_scheme: str
    num_classes: int
    folds: list[FoldResult]
    config: dict
    hard_ids: set = field(default_factory=set)

    @property
    def confusion(self) -> np.ndarray:
        cm = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)
        for fold in self.folds:
            cm += confusion_from_predictions(fold.y_true, fold.y_pred, self.num_classes)
        return cm

    @property
    def uf1(self) -> float:
        return uf1(self.confusion)

    @property
    def uar(self) -> float:
        return uar(self.confusion)

    def hard_confusion(self) -> np.ndarray:
        cm = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)
        for fold in self.folds:
            mask = np.array([sid in self.hard_ids for sid in fold.sample_ids], dtype=bool)
            if mask.any():
                cm += confusion_from_predictions(fold.y_true[mask], fold.y_pred[mask], self.num_classes)
        return cm

    def to_dict(self) -> dict:
        hard_cm = self.hard_confusion()
        return {
            "task_scheme": self.task_scheme,
            "uf1": self.uf1,
            "uar": self.uar,
            "confusion": self.confusion.tolist(),
            "hard": {
                "count": int(hard_cm.sum()),
                "uf1": uf1(hard_cm) if hard_cm.sum() else None,
                "uar": uar(hard_cm) if hard_cm.sum() else None,
            },
            "folds": [
                {
                    "subject": fold.subject,
                    "n_test": len(fold.sample_ids),
                    "uf1": uf1(confusion_from_predictions(fold.y_true, fold.y_pred, self.num_classes)),
                }
                for fold in self.folds
            ],
            "config": self.config,
        }

    def predictions_csv(self) -> str:
        header = ["sample_id", "subject", "true", "pred"] + [f"p{i}" for i in range(self.num_classes)]
        lines = [",".join(header)]
        for fold in self.folds:
            for sid, t, p, prob in zip(fold.sample_ids, fold.y_true, fold.y_pred, fold.probs):
                lines.append(
                    ",".join([sid, fold.subject, str(int(t)), str(int(p))] + [f"{v:.6f}" for v in prob])
                )
        return "\n".join(lines) + "\n"

    def save(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "report.json", "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        (out_dir / "predictions.csv").write_text(self.predictions_csv())
        np.savetxt(out_dir / "confusion.csv", self.confusion, fmt="%d", delimiter=",")


def _fold_checkpoint_path(checkpoint_dir: Path, subject: str) -> Path:
    return checkpoint_dir / f"fold_{subject}.npz"


def _run_fold(manifest_path: str, subject: str, train_ids: list[str], test_ids: list[str],
              cfg_dict: dict, fold_seed: int, checkpoint_dir: str | None, reuse: bool, threads: int):
    torch.set_num_threads(threads)
    manifest = load_manifest(manifest_path)
    run_cfg = run_config_from_dict(cfg_dict)
    ckpt_path = _fold_checkpoint_path(Path(checkpoint_dir), subject) if checkpoint_dir else None
    log_csv = None
    if reuse and ckpt_path is not None and ckpt_path.exists():
        checkpoint = ckpt_mod.load(ckpt_path)
    else:
        result = train_fold(manifest, train_ids, run_cfg, fold_seed)
        checkpoint = result.checkpoint
        log_csv = result.log_csv()
        if ckpt_path is not None:
            ckpt_path.parent.mkdir(parents=True, exist_ok=True)
            checkpoint.save(ckpt_path)
            (ckpt_path.parent / f"fold_{subject}_log.csv").write_text(log_csv)
    y_true, y_pred, probs = predict(checkpoint, manifest, test_ids)
    return subject, test_ids, y_true, y_pred, probs


def run_loso(manifest: DatasetManifest, run_cfg: RunConfig, seed: int, jobs: int = 1,
             checkpoint_dir: str | Path | None = None, reuse: bool = False) -> EvalReport:
    """Train one model per subject fold and score the pooled predictions.

    Fold order (and the report) is deterministic regardless of ``jobs``; each
    fold's seed derives only from (seed, subject).  With ``checkpoint_dir``
    the per-fold checkpoints and epoch logs are written there; with ``reuse``
    existing fold checkpoints are loaded instead of retrained.
    """
    folds = loso_splits(manifest)
    subjects = manifest.subjects()
    manifest_path = str(Path(manifest.root) / "manifest.json")
    cfg_dict = run_cfg.to_dict()
    ckpt_dir = str(checkpoint_dir) if checkpoint_dir else None

    args = []
    for subject, (train_ids, test_ids) in zip(subjects, folds):
        if not test_ids:
            raise EmptyFold(f"subject {subject} has no samples")
        fold_seed = derive_seed(seed, "fold", subject)
        args.append((manifest_path, subject, train_ids, test_ids, cfg_dict, fold_seed, ckpt_dir, reuse, 1))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            raw = list(pool.map(_run_fold, *zip(*args)))
    else:
        threads = torch.get_num_threads()
        raw = [_run_fold(*a[:-1], threads) for a in args]

    by_subject = {r[0]: r for r in raw}
    results = [
        FoldResult(subject=s, sample_ids=by_subject[s][1], y_true=by_subject[s][2],
                   y_pred=by_subject[s][3], probs=by_subject[s][4])
        for s in subjects
    ]
    return EvalReport(
        task_scheme=manifest.task_scheme,
        num_classes=manifest.num_classes,
        folds=results,
        config=cfg_dict,
        hard_ids=hard_sample_ids(manifest),
    )


def export_features(checkpoint: ckpt_mod.Checkpoint, manifest: DatasetManifest,
                    sample_ids: list[str] | None = None, batch_size: int = 256) -> str:
    """CSV dump of the decoupled and fused features for external projection.

    Columns: sample_id, true class, then the orthogonalized motion feature,
    orthogonalized emotion feature, and fused feature, D values each.
    """
    model = checkpoint.build()
    if model.sevit is None:
        raise EmptyFold("feature export requires the emotion branch")
    ids = sample_ids if sample_ids is not None else [r.sample_id for r in manifest.records]
    flows, labels, _ = load_samples(manifest, ids)
    x = standardize(torch.from_numpy(flows), checkpoint.flow_mean, checkpoint.flow_std)
    d = model.cfg.feature_dim
    header = (
        ["sample_id", "true"]
        + [f"fm_perp_{i}" for i in range(d)]
        + [f"fe_perp_{i}" for i in range(d)]
        + [f"fusion_{i}" for i in range(d)]
    )
    lines = [",".join(header)]
    with torch.no_grad():
        for start in range(0, len(ids), batch_size):
            out = model(x[start : start + batch_size])
            fm = out.pair.f_m_perp.numpy()
            fe = out.pair.f_e_perp.numpy()
            fus = out.f_fusion.numpy()
            for row in range(fm.shape[0]):
                values = np.concatenate([fm[row], fe[row], fus[row]])
                lines.append(
                    ",".join([ids[start + row], str(int(labels[start + row]))] + [f"{v:.8e}" for v in values])
                )
    return "\n".join(lines) + "\n"
