"""Posterior draw container shared by the ADVI and NUTS engines."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelSpec, to_constrained


@dataclass
class SampleTrace:
    """Per-chain draws with unconstrained and constrained views.

    `chains[c]` is a (draws, D) unconstrained matrix; `constrained[c]` maps
    block name -> (draws, ...) array. ADVI posteriors are stored as a single
    synthetic chain with `meta["synthetic"] = True`.
    """

    chains: list[np.ndarray]
    constrained: list[dict[str, np.ndarray]]
    divergences: list[np.ndarray]
    tree_depths: list[np.ndarray]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        draws = {c.shape[0] for c in self.chains}
        if len(draws) > 1:
            raise ValueError("chains must have equal draw counts")
        for c, d in zip(self.chains, self.divergences):
            if d.shape[0] != c.shape[0]:
                raise ValueError("divergence vector length must equal draw count")

    @property
    def n_chains(self) -> int:
        return len(self.chains)

    @property
    def n_draws(self) -> int:
        return self.chains[0].shape[0]

    def stacked(self) -> np.ndarray:
        """All unconstrained draws pooled, (chains*draws, D)."""
        return np.concatenate(self.chains, axis=0)

    def stacked_block(self, name: str) -> np.ndarray:
        return np.concatenate([c[name] for c in self.constrained], axis=0)

    def block_by_chain(self, name: str) -> np.ndarray:
        """(chains, draws, ...) array for one constrained block."""
        return np.stack([c[name] for c in self.constrained], axis=0)

    def divergence_count(self) -> int:
        return int(sum(d.sum() for d in self.divergences))

    def save(self, directory: str | Path) -> None:
        """Columnar layout: one .npy per parameter block per chain + metadata."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for c in range(self.n_chains):
            np.save(directory / f"chain{c}_unconstrained.npy", self.chains[c])
            np.save(directory / f"chain{c}_divergences.npy", self.divergences[c])
            np.save(directory / f"chain{c}_tree_depths.npy", self.tree_depths[c])
            for name, arr in self.constrained[c].items():
                np.save(directory / f"chain{c}_{name}.npy", arr)
        meta = dict(self.meta)
        meta["n_chains"] = self.n_chains
        meta["blocks"] = sorted(self.constrained[0].keys())
        (directory / "meta.json").write_text(json.dumps(meta, indent=2, default=str))

    @classmethod
    def load(cls, directory: str | Path) -> "SampleTrace":
        directory = Path(directory)
        meta = json.loads((directory / "meta.json").read_text())
        n_chains = meta.pop("n_chains")
        blocks = meta.pop("blocks")
        chains, constrained, divs, depths = [], [], [], []
        for c in range(n_chains):
            chains.append(np.load(directory / f"chain{c}_unconstrained.npy"))
            divs.append(np.load(directory / f"chain{c}_divergences.npy"))
            depths.append(np.load(directory / f"chain{c}_tree_depths.npy"))
            constrained.append(
                {name: np.load(directory / f"chain{c}_{name}.npy") for name in blocks}
            )
        return cls(chains, constrained, divs, depths, meta)


def constrain_draws(draws: np.ndarray, spec: ModelSpec) -> dict[str, np.ndarray]:
    """Map (draws, D) unconstrained samples to per-block constrained arrays."""
    out: dict[str, list] = {"log_lambda0": [], "beta": [], "u": []}
    if spec.kind == "re":
        out["sigma_u"] = []
    else:
        out["pi"] = []
        out["mu"] = []
        out["sigma"] = []
    for theta in draws:
        params, _ = to_constrained(theta, spec)
        out["log_lambda0"].append(params.log_lambda0)
        out["beta"].append(params.beta)
        out["u"].append(params.u)
        if spec.kind == "re":
            out["sigma_u"].append(params.sigma_u)
        else:
            out["pi"].append(params.pi)
            out["mu"].append(params.mu)
            out["sigma"].append(params.sigma)
    return {k: np.array(v) for k, v in out.items()}
