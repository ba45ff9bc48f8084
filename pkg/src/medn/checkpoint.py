"""Checkpoint archive: named parameters + input statistics + config echo.

A checkpoint is a single ``.npz`` holding one array per parameter/buffer
under ``param/<name>``, the train-fold flow standardization statistics under
``stat/flow_mean`` and ``stat/flow_std``, and a JSON echo of everything
needed to rebuild the model (run config, dataset dims, class/AU counts).
float32 payloads round-trip bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, run_config_from_dict
from .errors import ShapeMismatch
from .model import MEDN, build_model


@dataclass
class Checkpoint:
    state: dict[str, np.ndarray]
    flow_mean: np.ndarray  # [C]
    flow_std: np.ndarray  # [C]
    run_config: dict
    dims: dict
    num_classes: int
    n_au: int

    def save(self, path: str | Path) -> None:
        arrays = {f"param/{name}": arr for name, arr in self.state.items()}
        arrays["stat/flow_mean"] = self.flow_mean
        arrays["stat/flow_std"] = self.flow_std
        meta = {
            "run_config": self.run_config,
            "dims": self.dims,
            "num_classes": self.num_classes,
            "n_au": self.n_au,
        }
        arrays["meta_json"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
        np.savez(path, **arrays)

    def build(self) -> MEDN:
        cfg = run_config_from_dict(self.run_config)
        model = build_model(cfg.model, self.num_classes, self.n_au, self.dims, seed=0)
        state = {}
        for name, arr in self.state.items():
            state[name] = torch.from_numpy(arr.copy())
        missing = model.load_state_dict(state, strict=True)
        if missing.missing_keys or missing.unexpected_keys:
            raise ShapeMismatch(f"checkpoint/model mismatch: {missing}")
        model.eval()
        return model


def from_model(model: MEDN, run_config: RunConfig, flow_mean, flow_std, dims: dict, num_classes: int, n_au: int) -> Checkpoint:
    state = {name: tensor.detach().cpu().numpy().copy() for name, tensor in model.state_dict().items()}
    return Checkpoint(
        state=state,
        flow_mean=np.asarray(flow_mean, dtype=np.float32),
        flow_std=np.asarray(flow_std, dtype=np.float32),
        run_config=run_config.to_dict(),
        dims=dict(dims),
        num_classes=num_classes,
        n_au=n_au,
    )


def load(path: str | Path) -> Checkpoint:
    with np.load(path) as archive:
        meta = json.loads(bytes(archive["meta_json"]).decode())
        state = {}
        for key in archive.files:
            if key.startswith("param/"):
                state[key[len("param/"):]] = archive[key]
        return Checkpoint(
            state=state,
            flow_mean=archive["stat/flow_mean"],
            flow_std=archive["stat/flow_std"],
            run_config=meta["run_config"],
            dims=meta["dims"],
            num_classes=meta["num_classes"],
            n_au=meta["n_au"],
        )
