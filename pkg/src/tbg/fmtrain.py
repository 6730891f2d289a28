"""Conditional flow matching with the linear interpolant.

For a pair ``z = (x0, x1)`` drawn independently from prior and data, the
conditional path is ``x_t = t x1 + (1 - t) x0 + sigma xi`` and the
regression target is ``x1 - x0``.  Items of different molecules share a
batch; each item's squared error is divided by its atom count and the
result averaged over items.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .cnf import remove_mean
from .dataio.checkpoint import Checkpoint, read_checkpoint, write_checkpoint
from .dataio.dataset import TrajectoryDataset
from .errors import ConfigError, ContractViolation, NumericError, UnknownAtomClass
from .numcore import adam_init, adam_step, value_and_grad
from .numcore.optim import AdamState
from .vecfield import AtomClassTable, EgnnConfig, build_embedding, egnn_forward, generate_class_table, init_params
from .vecfield.embedding import embedding_width

__all__ = [
    "sample_conditional", "FlowMatchGroup", "FlowMatchBatch", "cfm_loss", "egnn_velocity",
    "TrainingConfig", "TrainRecord", "TrainResult", "draw_batch", "train",
    "format_log", "load_model",
]


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_conditional(x0, x1, t, sigma: float, seed=None) -> np.ndarray:
    """Draw ``x_t`` from the Gaussian conditional path.

    ``t`` is a scalar or one value per leading batch entry.  The noise is
    projected onto the mean-free subspace so ``x_t`` stays centred.
    """
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    if x0.shape != x1.shape:
        raise ContractViolation(f"x0 {x0.shape} and x1 {x1.shape} differ")
    t = np.asarray(t, dtype=float)
    tt = t.reshape(t.shape + (1,) * (x0.ndim - t.ndim))
    xt = tt * x1 + (1.0 - tt) * x0
    if sigma > 0:
        xt = xt + sigma * remove_mean(_rng(seed).standard_normal(x0.shape))
    return xt


@dataclass
class FlowMatchGroup:
    """Items of one molecule: arrays with a leading item axis."""

    molecule: str
    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray
    xt: np.ndarray
    bias: np.ndarray | None = None

    @property
    def n_atoms(self) -> int:
        return self.x0.shape[1]

    def __len__(self):
        return len(self.t)


@dataclass
class FlowMatchBatch:
    groups: list[FlowMatchGroup] = field(default_factory=list)

    @property
    def n_items(self) -> int:
        return sum(len(g) for g in self.groups)


VelocityFn = Callable[[object, str, np.ndarray, np.ndarray], object]


def egnn_velocity(cfg: EgnnConfig, embeddings: dict[str, np.ndarray]) -> VelocityFn:
    """``(params, molecule, t, x) -> v`` evaluated by the graph network."""

    def velocity(params, molecule, t, x):
        return egnn_forward(params, cfg, t, x, embeddings[molecule])

    return velocity


def cfm_loss(params, batch: FlowMatchBatch, velocity: VelocityFn):
    """Mean over items of ``bias / N * ||v(t, x_t) - (x1 - x0)||^2``.

    ``params`` may be a plain array or a tape leaf; the return value has the
    same kind.
    """
    n = batch.n_items
    if n == 0:
        raise ContractViolation("empty batch")
    total = 0.0
    offset = 0
    for g in batch.groups:
        v = velocity(params, g.molecule, g.t, g.xt)
        diff = v - (g.x1 - g.x0)
        per_item = (diff * diff).sum(axis=(1, 2)) * (1.0 / g.n_atoms)
        vals = np.asarray(per_item.value if hasattr(per_item, "value") else per_item)
        bad = np.flatnonzero(~np.isfinite(vals))
        if bad.size:
            raise NumericError(f"non-finite loss for batch item {offset + bad[0]} ({g.molecule})", index=int(offset + bad[0]))
        if g.bias is not None:
            per_item = per_item * g.bias
        total = total + per_item.sum()
        offset += len(g)
    return total * (1.0 / n)


@dataclass
class TrainingConfig:
    """Optimisation settings.

    ``stages`` lists ``(learning_rate, epochs)``; an epoch is
    ``steps_per_epoch`` ADAM steps, or, when that is ``None``, enough steps
    to draw as many frames per molecule as the largest trajectory holds.
    ``bias_mode`` decides what per-frame bias weights do: ``loss`` scales
    each item's loss, ``resample`` draws frames in proportion to the
    weight, ``none`` ignores them.
    """

    batch_per_molecule: int = 3
    sigma: float = 0.01
    stages: tuple = ((5e-4, 1),)
    steps_per_epoch: int | None = None
    seed: int = 0
    length_scale: float = 1.0
    bias_mode: str = "loss"
    checkpoint_every: int = 0
    solver_steps: int = 100

    def __post_init__(self):
        self.stages = tuple((float(lr), int(ep)) for lr, ep in self.stages)
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")
        if not self.stages or any(ep < 1 for _, ep in self.stages):
            raise ConfigError("every learning-rate stage needs at least one epoch")
        if self.batch_per_molecule < 1:
            raise ConfigError("batch_per_molecule must be positive")
        if self.bias_mode not in ("loss", "resample", "none"):
            raise ConfigError(f"unknown bias_mode {self.bias_mode!r}")
        if self.length_scale <= 0:
            raise ConfigError("length_scale must be positive")

    def to_dict(self):
        d = asdict(self)
        d["stages"] = [list(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown training options: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class TrainRecord:
    step: int
    stage: int
    lr: float
    loss: float
    wall: float


def format_log(records, wall: bool = True) -> str:
    """Line-delimited ``key=value`` records; ``wall=False`` drops timings so
    the text is reproducible byte for byte."""
    out = []
    for r in records:
        line = f"step={r.step} stage={r.stage} lr={r.lr!r} loss={r.loss!r}"
        if wall:
            line += f" wall={r.wall:.3f}"
        out.append(line)
    return "".join(s + "\n" for s in out)


@dataclass
class TrainResult:
    params: np.ndarray
    model: EgnnConfig
    table: AtomClassTable
    config: TrainingConfig
    records: list[TrainRecord]
    adam: AdamState
    rng_state: dict

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def checkpoint(self) -> Checkpoint:
        return _make_checkpoint(self.params, self.model, self.config, self.table, self.adam, self.rng_state)


def _make_checkpoint(params, model, config, table, adam, rng_state):
    return Checkpoint(
        params=params, model=model.to_dict(), training=config.to_dict(), class_table=table.to_text(),
        step=adam.step,
        adam={"m": adam.m, "v": adam.v, "step": adam.step, "lr": adam.lr,
              "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps},
        rng_state=rng_state,
    )


def _steps_per_epoch(dataset: TrajectoryDataset, config: TrainingConfig) -> int:
    if config.steps_per_epoch is not None:
        return int(config.steps_per_epoch)
    longest = max(len(m) for m in dataset.molecules)
    return max(1, -(-longest // config.batch_per_molecule))


def _schedule(dataset, config):
    """Learning rate and stage index for every step (1-based)."""
    spe = _steps_per_epoch(dataset, config)
    out = []
    for k, (lr, epochs) in enumerate(config.stages):
        out += [(k, lr)] * (epochs * spe)
    return out


def draw_batch(dataset: TrajectoryDataset, config: TrainingConfig, rng: np.random.Generator) -> FlowMatchBatch:
    """One batch: ``batch_per_molecule`` items for every molecule, in order."""
    groups = []
    b = config.batch_per_molecule
    for mol in dataset.molecules:
        frames = mol.frames
        bias = mol.bias if config.bias_mode != "none" else None
        if bias is not None and config.bias_mode == "resample":
            idx = rng.choice(len(frames), size=b, p=bias / bias.sum())
            item_bias = None
        else:
            idx = rng.integers(0, len(frames), size=b)
            item_bias = None if bias is None else bias[idx]
        x1 = remove_mean(frames[idx] * config.length_scale)
        x0 = remove_mean(rng.standard_normal(x1.shape))
        t = rng.uniform(size=b)
        xt = sample_conditional(x0, x1, t, config.sigma, rng)
        groups.append(FlowMatchGroup(mol.name, x0, x1, t, xt, item_bias))
    return FlowMatchBatch(groups)


def _embeddings(dataset, table, n_positions=2):
    out = {}
    for mol in dataset.molecules:
        try:
            out[mol.name] = build_embedding(mol.topology, table, n_positions)
        except UnknownAtomClass as exc:
            raise UnknownAtomClass(f"molecule {mol.name!r}: {exc}") from None
    return out


def train(dataset: TrajectoryDataset, config: TrainingConfig, model: EgnnConfig | None = None,
          table: AtomClassTable | None = None, resume: Checkpoint | None = None,
          checkpoint_path=None, on_record: Callable[[TrainRecord], None] | None = None,
          init: np.ndarray | None = None) -> TrainResult:
    """Fit the vector field to ``dataset`` (its training split) with ADAM.

    Every molecule is embedded before the first step, so an atom without a
    class aborts the run immediately.  With ``resume`` the run continues
    from the checkpoint's step and reproduces the uninterrupted run exactly.
    """
    data = dataset.subset("train")
    if len(data) == 0:
        raise ConfigError("dataset has no training molecules")
    if resume is not None:
        model = EgnnConfig.from_dict(resume.model)
        table = AtomClassTable.from_text(resume.class_table)
    model = model or EgnnConfig()
    if table is None:
        table = generate_class_table(model.variant, [m.topology for m in data.molecules])
    if table.variant != model.variant:
        raise ConfigError(f"class table is for {table.variant!r}, model is {model.variant!r}")
    if embedding_width(table) != model.n_embedding:
        raise ConfigError(f"model n_embedding={model.n_embedding}, class table gives {embedding_width(table)}")
    embeddings = _embeddings(data, table)
    velocity = egnn_velocity(model, embeddings)

    rng = np.random.default_rng(config.seed)
    if resume is not None:
        params = np.array(resume.params, dtype=float)
        a = resume.adam
        adam = AdamState(int(a["step"]), np.array(a["m"]), np.array(a["v"]), a["lr"], a["beta1"], a["beta2"], a["eps"])
        rng.bit_generator.state = resume.rng_state
    else:
        params = np.array(init, dtype=float) if init is not None else init_params(model, config.seed)
        adam = adam_init(params.size, lr=config.stages[0][0])

    schedule = _schedule(data, config)
    records = []
    t_start = time.perf_counter()
    for step in range(adam.step + 1, len(schedule) + 1):
        stage, lr = schedule[step - 1]
        batch = draw_batch(data, config, rng)
        loss, g = value_and_grad(lambda p: cfm_loss(p, batch, velocity), params)
        params, adam = adam_step(adam.with_lr(lr), params, g)
        rec = TrainRecord(step, stage, lr, loss, time.perf_counter() - t_start)
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        if checkpoint_path is not None and config.checkpoint_every and step % config.checkpoint_every == 0:
            write_checkpoint(checkpoint_path, _make_checkpoint(params, model, config, table, adam, rng.bit_generator.state))
    result = TrainResult(params, model, table, config, records, adam, rng.bit_generator.state)
    if checkpoint_path is not None:
        write_checkpoint(checkpoint_path, result.checkpoint())
    return result


def load_model(path_or_ckpt):
    """``(params, EgnnConfig, AtomClassTable, TrainingConfig)`` from a checkpoint."""
    ck = path_or_ckpt if isinstance(path_or_ckpt, Checkpoint) else read_checkpoint(path_or_ckpt)
    return (np.asarray(ck.params), EgnnConfig.from_dict(ck.model), AtomClassTable.from_text(ck.class_table),
            TrainingConfig.from_dict(ck.training))
