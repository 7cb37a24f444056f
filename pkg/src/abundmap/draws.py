"""Posterior draw container and its file round trip.

Draws live on the constrained (reporting) scale as a chains x kept x
parameters tensor. Persistence is a columnar CSV (chain, iteration, then
one column per parameter) plus a JSON sidecar holding sampler diagnostics
and the model metadata prediction needs (covariate lists, standardization
constants, district labels, retention probabilities, spatial-basis box).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import DataError


@dataclass
class PosteriorDraws:
    draws: np.ndarray                 # (chains, kept, n_params), constrained scale
    names: list[str]
    meta: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.draws.ndim != 3:
            raise DataError("draws must be (chains, iterations, parameters)")
        if self.draws.shape[2] != len(self.names):
            raise DataError("parameter names must match draw columns")

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_kept(self) -> int:
        return self.draws.shape[1]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0] * self.draws.shape[1]

    def flat(self) -> np.ndarray:
        """All draws stacked chain-major, shape (n_draws, n_params)."""
        return self.draws.reshape(-1, self.draws.shape[2])

    def col(self, name: str) -> np.ndarray:
        try:
            j = self.names.index(name)
        except ValueError as exc:
            raise KeyError(f"no parameter named '{name}'") from exc
        return self.flat()[:, j]

    def cols(self, prefix: str) -> tuple[list[str], np.ndarray]:
        """All parameters whose name starts with prefix, in layout order."""
        names = [n for n in self.names if n.startswith(prefix)]
        idx = [self.names.index(n) for n in names]
        return names, self.flat()[:, idx]

    def summary(self) -> pd.DataFrame:
        flat = self.flat()
        return pd.DataFrame(
            {
                "parameter": self.names,
                "mean": flat.mean(axis=0),
                "sd": flat.std(axis=0),
                "q2.5": np.quantile(flat, 0.025, axis=0),
                "q50": np.quantile(flat, 0.5, axis=0),
                "q97.5": np.quantile(flat, 0.975, axis=0),
            }
        )

    def subset(self, indices) -> "PosteriorDraws":
        """Keep selected iterations (per chain), preserving chain structure."""
        return PosteriorDraws(self.draws[:, indices, :], self.names, self.meta, self.diagnostics)


def write_draws(pd_draws: PosteriorDraws, csv_path, meta_path) -> None:
    chains, kept, n_par = pd_draws.draws.shape
    chain_col = np.repeat(np.arange(chains), kept)
    iter_col = np.tile(np.arange(kept), chains)
    frame = pd.DataFrame(pd_draws.flat(), columns=pd_draws.names)
    frame.insert(0, "iteration", iter_col)
    frame.insert(0, "chain", chain_col)
    frame.to_csv(csv_path, index=False)
    payload = {"diagnostics": pd_draws.diagnostics, "meta": pd_draws.meta,
               "names": pd_draws.names, "chains": int(chains), "kept": int(kept)}
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_draws(csv_path, meta_path) -> PosteriorDraws:
    csv_path, meta_path = Path(csv_path), Path(meta_path)
    if not csv_path.exists():
        raise DataError(f"draws file not found: {csv_path}")
    if not meta_path.exists():
        raise DataError(f"draws metadata not found: {meta_path}")
    with open(meta_path, encoding="utf-8") as fh:
        payload = json.load(fh)
    frame = pd.read_csv(csv_path)
    names = payload["names"]
    missing = [n for n in ["chain", "iteration", *names] if n not in frame.columns]
    if missing:
        raise DataError(f"draws file missing column(s): {missing}")
    chains = payload["chains"]
    kept = payload["kept"]
    draws = frame[names].to_numpy(dtype=float).reshape(chains, kept, len(names))
    return PosteriorDraws(draws, names, payload.get("meta", {}), payload.get("diagnostics", {}))


__all__ = ["PosteriorDraws", "write_draws", "read_draws"]
