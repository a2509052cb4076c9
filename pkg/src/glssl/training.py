"""Full-batch training with validation-based model selection, evaluation,
seeded repetition, and finite-difference gradient checking.

An episode is one gradient step over the whole graph.  After every step
the model is evaluated (dropout off) on the validation and test splits;
the reported accuracy is the test accuracy at the episode with the best
validation accuracy (earliest episode wins ties).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward
from .data import DatasetBundle
from .errors import ConfigError, DivergenceError, MemoryBudgetError
from .graph_prior import GraphPrior, build_prior
from .losses import classification_loss, graph_loss, graph_loss_layered, one_hot, total_loss
from .model import ForwardOutputs, ModelConfig, ModelState, build_model, forward

DEFAULT_MEMORY_BUDGET = 6 * 1024**3

# rough count of simultaneously live N x N float64 buffers during one
# training episode (values, gradient frontier, backward transients)
_PEAK_MATRICES = {
    "dgl": 14.0,
    "dgl-shallow-metric": 12.0,
    "dgl-non-local": 10.0,
    "glgcn": 8.0,
    "gcn-baseline": 6.0,
}


@dataclass
class TrainConfig:
    episodes: int = 200
    lr: float = 0.01
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-4      # L2 on the projection and first conv weight
    select: str = "best_val"
    seed: int = 0

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError(f"episodes must be >= 1, got {self.episodes}")
        if self.lr < 0:
            raise ConfigError(f"learning rate must be nonnegative, got {self.lr}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.select not in ("best_val", "final"):
            raise ConfigError(f"select must be best_val or final, got {self.select!r}")


@dataclass
class TrainReport:
    variant: str
    seed: int
    records: list[dict] = field(default_factory=list)
    best_episode: int = 0
    best_val_acc: float = 0.0
    test_acc: float = 0.0           # at the selected episode
    wall_time_s: float = 0.0

    def jsonl_records(self):
        return self.records

    def summary(self) -> dict:
        return {
            "variant": self.variant,
            "seed": self.seed,
            "episodes": len(self.records),
            "best_episode": self.best_episode,
            "best_val_acc": self.best_val_acc,
            "test_acc": self.test_acc,
            "wall_time_s": self.wall_time_s,
        }


_DECAY_PARAMS = ("p", "w0")


class Adam:
    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.named_params = list(named_params)
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for _, p in self.named_params]
        self.v = [np.zeros_like(p.data) for _, p in self.named_params]

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for (name, p), m, v in zip(self.named_params, self.m, self.v):
            g = p.grad
            if self.weight_decay and name in _DECAY_PARAMS:
                g = g + self.weight_decay * p.data
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class Sgd:
    def __init__(self, named_params, lr, weight_decay=0.0):
        self.named_params = list(named_params)
        self.lr = lr
        self.weight_decay = weight_decay

    def step(self):
        for name, p in self.named_params:
            g = p.grad
            if self.weight_decay and name in _DECAY_PARAMS:
                g = g + self.weight_decay * p.data
            p.data -= self.lr * g


def make_optimizer(state: ModelState, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(
            state.named_parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay
        )
    return Sgd(state.named_parameters(), cfg.lr, cfg.weight_decay)


def episode_losses(
    state: ModelState,
    outs: ForwardOutputs,
    y_onehot: np.ndarray,
    labeled: np.ndarray,
    x_raw: np.ndarray,
    gram: np.ndarray | None,
):
    """Assemble the variant's loss terms from one forward pass."""
    lc = classification_loss(outs.z, y_onehot, labeled)
    cfg = state.cfg
    if cfg.variant == "gcn-baseline":
        return lc, None
    if cfg.graph_loss_features == "raw":
        lg = graph_loss(x_raw, outs.a0, outs.a1, cfg.loss_weights(), gram)
    else:
        feats1 = outs.x1 if outs.a1 is not None else None
        lg = graph_loss_layered(outs.x0, outs.a0, feats1, outs.a1, cfg.loss_weights())
    return lc, lg


def accuracy(z_data: np.ndarray, y: np.ndarray, idx: np.ndarray) -> float:
    """Fraction of idx rows whose argmax matches the label; np.argmax breaks
    ties toward the lowest class index."""
    pred = np.argmax(z_data[idx], axis=1)
    return float((pred == y[idx]).mean())


def evaluate(state: ModelState, bundle: DatasetBundle, prior: GraphPrior, split) -> float:
    if isinstance(split, str):
        split = getattr(bundle, split)
    split = np.asarray(split, dtype=np.intp)
    if split.size == 0:
        raise ConfigError("cannot evaluate an empty split")
    outs = forward(state, ad.tensor(bundle.x), prior, training=False)
    return accuracy(outs.z.data, bundle.y, split)


def estimate_peak_bytes(n: int, variant: str) -> int:
    return int(_PEAK_MATRICES[variant] * n * n * 8)


def check_memory_budget(n: int, variant: str, budget: int | None, force: bool) -> None:
    budget = DEFAULT_MEMORY_BUDGET if budget is None else budget
    est = estimate_peak_bytes(n, variant)
    if est > budget and not force:
        raise MemoryBudgetError(
            f"training {variant!r} on {n} nodes needs roughly {est / 1024**3:.1f} GiB of"
            f" dense N x N buffers, over the {budget / 1024**3:.1f} GiB budget; rerun with"
            " --force (or a bigger --mem-budget-gb) to proceed anyway"
        )


def train(
    state: ModelState, bundle: DatasetBundle, prior: GraphPrior, cfg: TrainConfig
) -> TrainReport:
    """Run cfg.episodes full-batch steps and select by validation accuracy.

    With select='best_val' the parameters are left at the best snapshot;
    with 'final' they stay at the last episode.
    """
    if bundle.num_classes != state.cfg.c:
        raise ConfigError(
            f"model has {state.cfg.c} classes but bundle {bundle.name} has {bundle.num_classes}"
        )
    t_start = time.perf_counter()
    x_t = ad.tensor(bundle.x)
    y_onehot = one_hot(bundle.y, state.cfg.c)
    needs_gram = state.cfg.variant != "gcn-baseline" and state.cfg.graph_loss_features == "raw"
    gram = bundle.x @ bundle.x.T if needs_gram else None
    drop_rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(1,)))
    opt = make_optimizer(state, cfg)
    report = TrainReport(variant=state.cfg.variant, seed=cfg.seed)
    best_val = -1.0
    best_snapshot = None
    for episode in range(1, cfg.episodes + 1):
        state.zero_grad()
        outs = forward(state, x_t, prior, training=True, rng=drop_rng)
        lc, lg = episode_losses(state, outs, y_onehot, bundle.train, bundle.x, gram)
        loss = total_loss(lc, lg)
        lc_val = float(lc.data[0, 0])
        lg_val = float(lg.data[0, 0]) if lg is not None else 0.0
        loss_val = float(loss.data[0, 0])
        if not np.isfinite(loss_val):
            raise DivergenceError(episode, loss_val)
        backward(loss)
        opt.step()
        outs = lc = lg = loss = None  # release the episode tape before evaluating
        eval_outs = forward(state, x_t, prior, training=False)
        val_acc = accuracy(eval_outs.z.data, bundle.y, bundle.val)
        test_acc = accuracy(eval_outs.z.data, bundle.y, bundle.test)
        eval_outs = None
        report.records.append(
            {
                "episode": episode,
                "loss_c": lc_val,
                "loss_g": lg_val,
                "loss": loss_val,
                "val_acc": val_acc,
                "test_acc": test_acc,
            }
        )
        if val_acc > best_val:
            best_val = val_acc
            report.best_episode = episode
            report.best_val_acc = val_acc
            report.test_acc = test_acc
            if cfg.select == "best_val":
                best_snapshot = state.snapshot()
    if cfg.select == "best_val" and best_snapshot is not None:
        state.load_snapshot(best_snapshot)
    else:
        report.test_acc = report.records[-1]["test_acc"]
    report.wall_time_s = time.perf_counter() - t_start
    return report


def run(
    bundle: DatasetBundle,
    prior: GraphPrior,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    memory_budget: int | None = None,
    force: bool = False,
):
    """Build a model seeded from the train seed and train it once."""
    check_memory_budget(bundle.n, model_cfg.variant, memory_budget, force)
    model_cfg = replace(model_cfg, c=bundle.num_classes, seed=train_cfg.seed)
    state = build_model(model_cfg, bundle.dim)
    report = train(state, bundle, prior, train_cfg)
    return state, report


def run_seeds(
    bundle: DatasetBundle,
    prior: GraphPrior,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    k: int,
    memory_budget: int | None = None,
    force: bool = False,
):
    """k trainings with seeds seed..seed+k-1; returns (mean, std, reports).

    std is the sample standard deviation, 0.0 for a single run.
    """
    if k < 1:
        raise ConfigError(f"need at least one seed, got k={k}")
    reports = []
    for i in range(k):
        cfg_i = replace(train_cfg, seed=train_cfg.seed + i)
        _, rep = run(bundle, prior, model_cfg, cfg_i, memory_budget, force)
        reports.append(rep)
    accs = np.array([r.test_acc for r in reports])
    std = float(accs.std(ddof=1)) if k > 1 else 0.0
    return float(accs.mean()), std, reports


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    variant: str
    tol: float
    per_param: list[dict]
    max_rel_err: float
    n_checked: int
    n_excluded: int

    @property
    def passed(self) -> bool:
        return self.n_checked > 0 and self.max_rel_err < self.tol


def _gradcheck_instance(n, d, c, seed, use_edges):
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    x = rng.uniform(-1.0, 1.0, size=(n, d))
    y = np.concatenate([np.arange(c), rng.integers(0, c, size=n - c)])
    labeled = np.arange(min(n, c + 2))
    edges = None
    if use_edges:
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.35]
        edges = np.array(pairs, dtype=np.int64) if pairs else None
    return x, y, labeled, build_prior(n, edges)


def grad_check(
    variant: str = "dgl",
    n: int = 8,
    d: int = 5,
    c: int = 3,
    seed: int = 0,
    tol: float = 1e-4,
    eps: float = 1e-5,
    use_edges: bool = True,
    d0: int = 6,
    d1: int = 4,
    dropout: float = 0.5,
    kink_gap_tol: float = 2e-4,
) -> GradCheckReport:
    """Central finite differences of the total loss against tape gradients.

    Entries whose one-sided difference quotients disagree by more than
    kink_gap_tol (relative) straddle a relu/abs kink inside the probe
    interval and are excluded; the detector is independent of the tape.
    Dropout masks are regenerated from a fixed stream on every evaluation
    so the probed function is deterministic.
    """
    if n > 10:
        raise ConfigError(f"gradient check instances are capped at 10 nodes, got {n}")
    x, y, labeled, prior = _gradcheck_instance(n, d, c, seed, use_edges)
    cfg = ModelConfig(variant=variant, d0=d0, d1=d1, c=c, dropout=dropout, seed=seed)
    state = build_model(cfg, d)
    x_t = ad.tensor(x)
    y_onehot = one_hot(y, c)
    gram = x @ x.T

    def loss_tensor():
        drop_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
        outs = forward(state, x_t, prior, training=True, rng=drop_rng)
        lc, lg = episode_losses(state, outs, y_onehot, labeled, x, gram)
        return total_loss(lc, lg)

    def loss_value() -> float:
        return float(loss_tensor().data[0, 0])

    state.zero_grad()
    backward(loss_tensor())
    analytic = {name: t.grad.copy() for name, t in state.named_parameters()}
    f_zero = loss_value()

    per_param = []
    worst = 0.0
    checked = excluded = 0
    for name, t in state.named_parameters():
        flat = t.data.reshape(-1)
        g_flat = analytic[name].reshape(-1)
        param_worst = 0.0
        param_excluded = 0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = loss_value()
            flat[i] = orig - eps
            f_minus = loss_value()
            flat[i] = orig
            fd_c = (f_plus - f_minus) / (2.0 * eps)
            gap = abs((f_plus - f_zero) - (f_zero - f_minus)) / eps
            scale = max(1.0, abs(fd_c), abs(g_flat[i]))
            if gap > kink_gap_tol * scale:
                param_excluded += 1
                continue
            rel = abs(fd_c - g_flat[i]) / scale
            param_worst = max(param_worst, rel)
            checked += 1
        excluded += param_excluded
        worst = max(worst, param_worst)
        per_param.append(
            {
                "name": name,
                "entries": flat.size,
                "excluded": param_excluded,
                "max_rel_err": param_worst,
            }
        )
    return GradCheckReport(
        variant=variant,
        tol=tol,
        per_param=per_param,
        max_rel_err=worst,
        n_checked=checked,
        n_excluded=excluded,
    )
