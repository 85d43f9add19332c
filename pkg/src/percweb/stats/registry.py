"""Subcommand name -> experiment, with default replicate counts."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from . import annealed, flow, scaling
from .core import ExperimentConfig, ExperimentResult, supercritical_guard


@dataclass(frozen=True)
class Experiment:
    fn: Callable[[ExperimentConfig], ExperimentResult]
    replicates: int
    lattice: bool = True           # runs on the percolation field (guarded)
    aliases: tuple = ()


EXPERIMENTS = {
    "survival": Experiment(annealed.survival, 10_000),
    "clt": Experiment(annealed.clt, 100_000),
    "tails": Experiment(annealed.tails, 100_000),
    "gap": Experiment(annealed.gap, 50_000, aliases=(("n_grid", "M_grid"),)),
    "density": Experiment(flow.density, 64, aliases=(("n_grid", "m_grid"),)),
    "eta": Experiment(flow.eta, 100),
    "eta-mult": Experiment(flow.eta_mult, 20_000),
    "crossing": Experiment(flow.crossing, 10_000),
    "holes": Experiment(flow.holes, 2),
    "fdd": Experiment(scaling.fdd, 10_000, aliases=(("delta_grid", "gamma_delta_grid"),)),
    "quenched": Experiment(annealed.quenched, 2000),
    "drift": Experiment(annealed.drift, 2000),
    "f-check": Experiment(scaling.f_check, 1, lattice=False),
    "cbm": Experiment(scaling.cbm, 20_000, lattice=False),
}


def run(cfg: ExperimentConfig) -> ExperimentResult:
    exp = EXPERIMENTS[cfg.tag]
    params = dict(cfg.params)
    for src, dst in exp.aliases:
        if src in params:
            params.setdefault(dst, params.pop(src))
    if cfg.tag == "eta" and "a" in params and "b" in params:
        params.setdefault("intervals", [[params.pop("a"), params.pop("b")]])
    cfg.params = params
    if exp.lattice:
        supercritical_guard(cfg)
    return exp.fn(cfg)
