"""Synthetic sanity experiment: SPN vs the uniform-map ablation."""

from __future__ import annotations

import time
from dataclasses import dataclass

from spn.evaluate import evaluate
from spn.network import Network, reference_spec
from spn.optim import OptimizerConfig
from spn.synthdata import SynthConfig, generate_dataset
from spn.train import train


@dataclass
class ExperimentResult:
    spn: dict
    no_sp: dict
    spn_history: list
    no_sp_history: list
    seconds: float


def train_reference(train_ds, opt: OptimizerConfig, use_sp: bool = True, init_seed: int | None = None):
    spec = reference_spec(len(train_ds.class_names), use_sp=use_sp)
    net = Network.init(spec, seed=opt.seed if init_seed is None else init_seed)
    result = train(net, train_ds.images(), train_ds.targets(), opt)
    return result


def run(synth: SynthConfig = SynthConfig(seed=7), opt: OptimizerConfig = OptimizerConfig(batch_size=2),
        tolerance_px: int = 3, ablation: bool = True) -> ExperimentResult:
    t0 = time.perf_counter()
    train_ds, test_ds = generate_dataset(synth)
    sp_run = train_reference(train_ds, opt, use_sp=True)
    spn_report = evaluate(sp_run.net, test_ds, tolerance_px=tolerance_px)
    base_report, base_hist = {}, []
    if ablation:
        base_run = train_reference(train_ds, opt, use_sp=False)
        base_report = evaluate(base_run.net, test_ds, tolerance_px=tolerance_px)
        base_hist = base_run.history
    return ExperimentResult(spn_report, base_report, sp_run.history, base_hist,
                            time.perf_counter() - t0)
