"""Observer evaluation: run a variant over held-out trajectories and
score it with RMSE and SMAPE after a transient discard.

All variants drive the same latent filter with the measured output; they
differ in how the latent state is decoded and whether the latent
dynamics carry an input-conditioned drive:

    autonomous / curriculum: plain latent filter, fixed decoder
    static:  latent filter plus gated injection, fixed decoder
    dynamic: plain latent filter, window-conditioned decoder

Metrics discard the first 5% of each trajectory by default and average
per-trajectory values across the test set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoints import CheckpointBundle
from .data import Dataset, generate_dataset, seed_ranges_overlap
from .dynamics import Trajectory, get_system
from .errors import ContractViolation, NumericError
from .hypernet import (
    delta_store,
    encode_context,
    gate_values,
    generate_deltas,
    make_step_injection,
)
from .kkl import decode, simulate_latent
from .signals import window_matrix

REGIMES = ("zero", "constant", "sinusoid", "square")
TRANSIENT_FRACTION = 0.05


def _transient_steps(n: int, frac: float) -> int:
    if not 0.0 <= frac < 1.0:
        raise ContractViolation("transient fraction must lie in [0, 1)")
    k0 = int(np.ceil(frac * n))
    if k0 >= n:
        raise ContractViolation("transient discard leaves no samples")
    return k0


def rmse(x_seq, xhat_seq, transient_frac: float = TRANSIENT_FRACTION) -> float:
    """Root mean squared Euclidean error after the transient discard."""
    x = np.asarray(x_seq, dtype=np.float64)
    xh = np.asarray(xhat_seq, dtype=np.float64)
    if x.shape != xh.shape:
        raise ContractViolation("sequences must be aligned")
    k0 = _transient_steps(len(x), transient_frac)
    err = x[k0:] - xh[k0:]
    return float(np.sqrt(np.mean(np.sum(err.reshape(len(err), -1) ** 2, axis=1))))


def smape(x_seq, xhat_seq, transient_frac: float = TRANSIENT_FRACTION) -> float:
    """Symmetric mean absolute percentage error, bounded in [0, 200]."""
    x = np.asarray(x_seq, dtype=np.float64)
    xh = np.asarray(xhat_seq, dtype=np.float64)
    if x.shape != xh.shape:
        raise ContractViolation("sequences must be aligned")
    k0 = _transient_steps(len(x), transient_frac)
    num = 2.0 * np.abs(x[k0:] - xh[k0:])
    den = np.abs(x[k0:]) + np.abs(xh[k0:]) + 1e-8
    return float(100.0 * np.mean(num / den))


def run_observer(bundle: CheckpointBundle, trajectory: Trajectory) -> np.ndarray:
    """Estimated state sequence for one measured trajectory.

    The latent filter starts at z = 0 and is driven by the recorded
    outputs (and inputs, per variant). Estimates are causal: they depend
    only on samples up to each step. On identically zero input the
    conditioned variants short-circuit to the exact autonomous pipeline.
    """
    obs = bundle.obs
    maps = bundle.maps
    y = trajectory.outputs
    if y.shape[1] != obs.n_y:
        raise ContractViolation("trajectory output width does not match observer")

    if bundle.variant == "static":
        u = trajectory.inputs
        if np.all(u == 0.0):
            zs = simulate_latent(obs, y, trajectory.dt)
        else:
            inject = make_step_injection(
                bundle.xi, bundle.injection_spec, u, trajectory.dt
            )
            zs = simulate_latent(obs, y, trajectory.dt, injection=inject)
        xhat = decode(maps, bundle.phi, zs)
    elif bundle.variant == "dynamic":
        zs = simulate_latent(obs, y, trajectory.dt)
        u = trajectory.inputs
        spec = bundle.hyper_spec
        windows = window_matrix(u, spec.window)
        gates = gate_values(windows, spec.tau)[:, 0]
        live = gates != 0.0
        xhat = np.empty((len(zs), maps.n_x))
        if not np.any(live):
            xhat = decode(maps, bundle.phi, zs)
        else:
            _, d_phi = generate_deltas(bundle.psi, spec, windows[live])
            phi_rows = np.flatnonzero(live)
            xhat[~live] = decode(maps, bundle.phi, zs[~live])
            for row, flat in zip(phi_rows, d_phi):
                eff = bundle.phi + delta_store(spec.dec_head, flat)
                xhat[row] = decode(maps, eff, zs[row])
    elif bundle.variant in ("autonomous", "curriculum"):
        zs = simulate_latent(obs, y, trajectory.dt)
        xhat = decode(maps, bundle.phi, zs)
    else:
        raise ContractViolation(f"unknown variant {bundle.variant!r}")

    if not np.all(np.isfinite(xhat)):
        bad = int(np.argmax(~np.all(np.isfinite(xhat), axis=1)))
        raise NumericError(f"non-finite estimate at step {bad}")
    return xhat


@dataclass(frozen=True)
class EvalCell:
    system: str
    variant: str
    regime: str
    rmse: float
    smape: float
    rmse_std: float
    n: int
    seed_lo: int
    seed_hi: int


@dataclass
class EvalReport:
    cells: list

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("system,variant,regime,rmse,smape,n,seed_lo,seed_hi\n")
            for c in self.cells:
                fh.write(
                    f"{c.system},{c.variant},{c.regime},{c.rmse!r},"
                    f"{c.smape!r},{c.n},{c.seed_lo},{c.seed_hi}\n"
                )


def evaluate_cell(
    bundle: CheckpointBundle,
    dataset: Dataset,
    transient_frac: float = TRANSIENT_FRACTION,
) -> EvalCell:
    """Average per-trajectory metrics of one (variant, regime) cell."""
    if bundle.train_seed_range is not None and seed_ranges_overlap(
        bundle.train_seed_range, dataset.seed_range
    ):
        raise ContractViolation(
            f"test seeds {dataset.seed_range} overlap training seeds "
            f"{bundle.train_seed_range}"
        )
    rmses, smapes = [], []
    for tr in dataset.trajectories:
        xhat = run_observer(bundle, tr)
        rmses.append(rmse(tr.states, xhat, transient_frac))
        smapes.append(smape(tr.states, xhat, transient_frac))
    lo, hi = dataset.seed_range
    return EvalCell(
        system=dataset.system.name,
        variant=bundle.variant,
        regime=dataset.regime,
        rmse=float(np.mean(rmses)),
        smape=float(np.mean(smapes)),
        rmse_std=float(np.std(rmses)),
        n=len(rmses),
        seed_lo=lo,
        seed_hi=hi,
    )


def benchmark(
    bundles: dict,
    system_name: str,
    regimes=REGIMES,
    n_test: int = 20,
    seed: int = 10_000,
    dt: float = 0.05,
    horizon: float = 50.0,
    sigma: float = 0.01,
    transient_frac: float = TRANSIENT_FRACTION,
) -> EvalReport:
    """The variants x regimes grid for one system.

    ``bundles`` maps variant name to checkpoint bundle. Each regime draws
    its own test dataset from a disjoint seed block; every cell of one
    regime shares that dataset, and cells are independent of each other.
    """
    missing = [v for v, b in bundles.items() if b is None]
    if missing:
        raise ContractViolation(f"missing checkpoints for variants: {missing}")
    system = get_system(system_name)
    cells = []
    for r_idx, regime in enumerate(regimes):
        dataset = generate_dataset(
            system, regime, n_test, seed + r_idx * n_test, dt, horizon, sigma
        )
        for variant in bundles:
            cells.append(
                evaluate_cell(bundles[variant], dataset, transient_frac)
            )
    return EvalReport(cells=cells)
