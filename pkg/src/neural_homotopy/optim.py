"""Adam and the homotopy / condition-network training loops."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import InvalidInputError, TrainingError
from .field import SirenNetwork, init_from_condition, init_standard, load_checkpoint, save_checkpoint, spatial_jet
from .geometry import draw_batch, sample_cloud
from .parallel import single_threaded
from .geometry.sampling import DEFAULT_SPLIT, DOMAIN, OrientedPointCloud, cloud_indices, split_counts
from .geometry.sdf import sdf_eval
from .pde import LossWeights, PdeProblem, assemble_loss

log = logging.getLogger(__name__)

REPORT_HEADER = ["epoch", "pde", "dirichlet", "eikonal", "neumann", "skipped", "wall_ms"]


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Pure: returns new parameters and a new state."""
    step = state.step + 1
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise InvalidInputError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)} for {name}")
        m = state.m.get(name, torch.zeros_like(p))
        v = state.v.get(name, torch.zeros_like(p))
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**step)
        v_hat = v / (1 - beta2**step)
        new_params[name] = p - lr * m_hat / (v_hat.sqrt() + eps)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(step, m_new, v_new)


def save_adam_state(state: AdamState, path) -> None:
    arrays = {"step": np.array(state.step)}
    for k in state.m:
        arrays[f"m_{k}"] = state.m[k].numpy()
        arrays[f"v_{k}"] = state.v[k].numpy()
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_adam_state(path) -> AdamState:
    data = np.load(path)
    st = AdamState(int(data["step"]))
    for k in data.files:
        if k.startswith("m_"):
            st.m[k[2:]] = torch.from_numpy(data[k].copy())
        elif k.startswith("v_"):
            st.v[k[2:]] = torch.from_numpy(data[k].copy())
    return st


# --- configuration and reports ---------------------------------------------

@dataclass
class TrainConfig:
    problem: PdeProblem
    widths: tuple = (4, 64, 64)
    omega0: float = 30.0
    init: str = "standard"
    condition_net: SirenNetwork | None = None
    weights: LossWeights = field(default_factory=LossWeights)
    loss_mode: str = "l1"
    total: int = 2000
    split: tuple = DEFAULT_SPLIT
    cloud_size: int = 20000
    epochs: int = 1000
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_decay: float | None = None
    seed: int = 0
    checkpoint_every: int = 0
    output_dir: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidInputError("epochs must be at least 1")
        if not self.lr > 0:
            raise InvalidInputError("learning rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidInputError("Adam betas must lie in (0, 1)")
        if self.widths[0] != 4:
            raise InvalidInputError("a homotopy network takes 4 inputs")
        if self.init not in ("standard", "condition"):
            raise InvalidInputError(f"unknown init {self.init!r}")
        if self.init == "condition" and self.condition_net is None:
            raise InvalidInputError("init=condition needs a condition network")
        if self.lr_decay is not None and not 0 < self.lr_decay <= 1:
            raise InvalidInputError("lr_decay must lie in (0, 1]")
        split_counts(self.total, self.split)


@dataclass
class EpochRecord:
    epoch: int
    pde: float
    dirichlet: float
    eikonal: float
    neumann: float
    skipped: int
    wall_ms: float


@dataclass
class TrainReport:
    records: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_HEADER)
            for r in self.records:
                w.writerow([r.epoch, repr(r.pde), repr(r.dirichlet), repr(r.eikonal), repr(r.neumann),
                            r.skipped, f"{r.wall_ms:.3f}"])

    @classmethod
    def read_csv(cls, path) -> "TrainReport":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([EpochRecord(int(r["epoch"]), float(r["pde"]), float(r["dirichlet"]), float(r["eikonal"]),
                                float(r["neumann"]), int(r["skipped"]), float(r["wall_ms"])) for r in rows])


def condition_clouds(problem: PdeProblem, n: int, seed: int) -> list[OrientedPointCloud]:
    return [sample_cloud(c.source, n, seed=seed * 1000 + i) for i, c in enumerate(problem.conditions)]


def initial_network(config: TrainConfig) -> SirenNetwork:
    if config.init == "condition":
        return init_from_condition(config.condition_net, config.widths)
    return init_standard(config.widths, config.omega0, config.seed)


# --- training ---------------------------------------------------------------

def _finite_or_abort(terms, epoch):
    for name in ("pde", "dirichlet", "eikonal", "neumann"):
        if not math.isfinite(getattr(terms, name)):
            raise TrainingError(f"non-finite {name} loss at epoch {epoch}", epoch=epoch, component=name)
    if not bool(torch.isfinite(terms.total)):
        raise TrainingError(f"non-finite total loss at epoch {epoch}", epoch=epoch, component="total")


def _write_checkpoint(net, state, config, epoch, path):
    meta = {"epoch": epoch, "seed": config.seed, "total": config.total}
    save_checkpoint(SirenNetwork(net.weights, net.biases, net.omega0, meta), path)
    save_adam_state(state, str(path) + ".adam.npz")


def train(config: TrainConfig, clouds=None, resume_from=None, progress_every: int = 0):
    """Fit a space-time network to ``config.problem``.

    One epoch is one Adam step on a fresh minibatch drawn from (seed, epoch), so a
    run resumed from a checkpoint continues the same sample stream. Runs with a
    single intra-op thread so the result does not depend on the thread count.
    """
    with single_threaded():
        return _train(config, clouds, resume_from, progress_every)


def _train(config, clouds, resume_from, progress_every):
    problem = config.problem
    clouds = clouds if clouds is not None else condition_clouds(problem, config.cloud_size, config.seed)
    out_dir = Path(config.output_dir) if config.output_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        net = load_checkpoint(resume_from)
        state = load_adam_state(str(resume_from) + ".adam.npz")
        start = int(net.metadata.get("epoch", state.step))
    else:
        net = initial_network(config)
        state = AdamState()
        start = 0

    params = {k: v.detach().clone() for k, v in net.named_parameters().items()}
    omega0 = net.omega0
    report = TrainReport()
    try:
        for epoch in range(start, config.epochs):
            t0 = time.perf_counter()
            batch = draw_batch(problem, clouds, config.total, config.split, config.seed, epoch)
            leaves = {k: v.requires_grad_(True) for k, v in params.items()}
            live = SirenNetwork.from_parameters(leaves, omega0)
            terms = assemble_loss(live, problem, batch, config.weights, config.loss_mode)
            _finite_or_abort(terms, epoch)
            grads = dict(zip(leaves, torch.autograd.grad(terms.total, list(leaves.values()))))
            lr = config.lr * (config.lr_decay**epoch if config.lr_decay else 1.0)
            with torch.no_grad():
                params, state = adam_step(
                    {k: v.detach() for k, v in leaves.items()}, grads, state, lr, config.beta1, config.beta2, config.eps
                )
            report.records.append(EpochRecord(epoch, terms.pde, terms.dirichlet, terms.eikonal, terms.neumann,
                                              terms.skipped, 1000 * (time.perf_counter() - t0)))
            if progress_every and (epoch + 1) % progress_every == 0:
                log.info("epoch %d: pde=%.3g dirichlet=%.3g eikonal=%.3g neumann=%.3g",
                         epoch + 1, terms.pde, terms.dirichlet, terms.eikonal, terms.neumann)
            if out_dir and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                current = SirenNetwork.from_parameters(params, omega0)
                _write_checkpoint(current, state, config, epoch + 1, out_dir / f"checkpoint_{epoch + 1:06d}.nhf")
        final = SirenNetwork.from_parameters(params, omega0,
                                             {"epoch": config.epochs, "seed": config.seed, "total": config.total})
        if out_dir:
            _write_checkpoint(final, state, config, config.epochs, out_dir / "final.nhf")
    except OSError:
        if out_dir:
            try:
                report.write_csv(out_dir / "report.csv")
            except OSError:
                pass
        raise
    if out_dir:
        report.write_csv(out_dir / "report.csv")
    return final, report


# --- condition networks -----------------------------------------------------

@dataclass
class FitConfig:
    widths: tuple = (3, 64, 64)
    omega0: float = 30.0
    epochs: int = 2000
    lr: float = 1e-4
    total: int = 2000
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    off_surface_penalty: float = 100.0


def fit_condition(source, config: FitConfig, cloud: OrientedPointCloud | None = None) -> SirenNetwork:
    """Fit a 3-input network to a shape.

    With an analytic ``source`` the off-surface points carry exact distances; with
    only an oriented ``cloud`` they are pushed away from zero by exp(-k |g|).
    """
    if config.widths[0] != 3:
        raise InvalidInputError("a condition network takes 3 inputs")
    with single_threaded():
        return _fit(source, config, cloud)


def _fit(source, config, cloud):
    if cloud is None:
        cloud = sample_cloud(source, 20000, seed=config.seed)
    net = init_standard(config.widths, config.omega0, config.seed)
    params = {k: v.clone() for k, v in net.named_parameters().items()}
    state = AdamState()
    _, n_on, n_off = split_counts(config.total)
    w = config.weights
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, epoch, 3])
        idx = cloud_indices(len(cloud), n_on, config.seed, epoch, 0)
        on_p = torch.as_tensor(cloud.points[idx])
        on_n = torch.as_tensor(cloud.normals[idx])
        off_p = rng.uniform(*DOMAIN, size=(n_off + n_on, 3))
        leaves = {k: v.requires_grad_(True) for k, v in params.items()}
        live = SirenNetwork.from_parameters(leaves, net.omega0)
        jon = spatial_jet(live, on_p, hessian=False)
        joff = spatial_jet(live, torch.as_tensor(off_p), hessian=False)
        loss = w.dirichlet * jon.value.abs().mean()
        loss = loss + w.neumann * (1 - (jon.grad * on_n).sum(-1)).abs().mean()
        norms = torch.cat([jon.grad.norm(dim=-1), joff.grad.norm(dim=-1)])
        loss = loss + w.eikonal * (1 - norms).abs().mean()
        if source is not None:
            target, _, _ = sdf_eval(source, off_p)
            loss = loss + w.dirichlet * (joff.value - torch.as_tensor(target)).abs().mean()
        else:
            loss = loss + w.dirichlet * torch.exp(-config.off_surface_penalty * joff.value.abs()).mean()
        if not bool(torch.isfinite(loss)):
            raise TrainingError(f"non-finite loss at epoch {epoch}", epoch=epoch, component="total")
        grads = dict(zip(leaves, torch.autograd.grad(loss, list(leaves.values()))))
        with torch.no_grad():
            params, state = adam_step({k: v.detach() for k, v in leaves.items()}, grads, state, config.lr)
    return SirenNetwork.from_parameters(params, net.omega0)
