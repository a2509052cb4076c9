"""Network assembly: configuration, parameter allocation, the forward pass
for every variant, and checkpoint serialization.

Variants:
  dgl                full model: two metric-learned graphs, two graph
                     convolutions, two attention layers, fused head
  dgl-shallow-metric second graph learning layer removed (A1 := A0)
  dgl-non-local      attention module removed, softmax directly on X2
  glgcn              one learned graph driving both convolutions, no
                     attention (the degenerate single-metric model)
  gcn-baseline       fixed symmetric-renormalized prior, two convolutions
"""

from __future__ import annotations

import dataclasses
import io
import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import layers
from .autodiff import Tensor
from .errors import ConfigError, IngestionError
from .graph_prior import GraphPrior
from .losses import LossWeights

VARIANTS = ("dgl", "glgcn", "dgl-non-local", "dgl-shallow-metric", "gcn-baseline")
DEGREE_MODES = ("a_hat", "a_l")
ATTENTION_GRAPHS = ("a1", "a0")
GRAPH_LOSS_FEATURES = ("raw", "layer")

_CHECKPOINT_MAGIC = "GLSSL-CKPT v1"


@dataclass
class ModelConfig:
    variant: str = "dgl"
    d0: int = 70
    d1: int = 30
    c: int = 2
    lambda1: float = 0.1
    lambda2: float = 0.01
    lambda3: float = 0.001
    dropout: float = 0.5
    degree_from: str = "a_hat"
    attention_graph: str = "a1"
    graph_loss_features: str = "raw"
    # zero init reproduces the prior exactly at step 0 but leaves the metric
    # and attention weights with a dead (exactly zero) gradient under the
    # relu subgradient convention, so small random values are the default
    zero_metric_init: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if min(self.d0, self.d1, self.c) < 1:
            raise ConfigError(f"dimensions must be >= 1, got d0={self.d0} d1={self.d1} c={self.c}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.degree_from not in DEGREE_MODES:
            raise ConfigError(f"degree_from must be one of {DEGREE_MODES}")
        if self.attention_graph not in ATTENTION_GRAPHS:
            raise ConfigError(f"attention_graph must be one of {ATTENTION_GRAPHS}")
        if self.graph_loss_features not in GRAPH_LOSS_FEATURES:
            raise ConfigError(f"graph_loss_features must be one of {GRAPH_LOSS_FEATURES}")

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.lambda3)


@dataclass
class ForwardOutputs:
    z: Tensor                     # N x C probabilities, rows sum to 1
    logits: Tensor                # pre-softmax head input
    a0: Tensor | None = None
    a1: Tensor | None = None
    beta3: Tensor | None = None
    beta4: Tensor | None = None
    x0: Tensor | None = None
    x1: Tensor | None = None
    x2: Tensor | None = None
    x3: Tensor | None = None
    x4: Tensor | None = None


class ModelState:
    """Owns the parameters of one model instance."""

    def __init__(self, cfg: ModelConfig, input_dim: int, params: layers.LayerParams):
        self.cfg = cfg
        self.input_dim = input_dim
        self.params = params

    def named_parameters(self):
        return list(self.params.named())

    def parameters(self):
        return [t for _, t in self.params.named()]

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.parameters())

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.named()}

    def load_snapshot(self, snap: dict[str, np.ndarray]) -> None:
        for name, t in self.params.named():
            t.data[...] = snap[name]

    def save(self, path) -> None:
        save_checkpoint(self, path)


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def build_model(cfg: ModelConfig, input_dim: int) -> ModelState:
    """Allocate the parameter set for the configured variant.

    Deterministic given cfg.seed: the same seed always produces bitwise
    identical parameters.
    """
    if input_dim < 1:
        raise ConfigError(f"input dimension must be >= 1, got {input_dim}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(0,)))
    d0, d1, c = cfg.d0, cfg.d1, cfg.c

    def metric_vec(dim: int) -> np.ndarray:
        if cfg.zero_metric_init:
            return np.zeros((dim, 1))
        return _glorot(rng, dim, 1)

    p = layers.LayerParams()
    p.p = ad.parameter(_glorot(rng, input_dim, d0), "p")
    if cfg.variant != "gcn-baseline":
        p.alpha0 = ad.parameter(metric_vec(d0), "alpha0")
    p.w0 = ad.parameter(_glorot(rng, d0, d1), "w0")
    if cfg.variant in ("dgl", "dgl-non-local"):
        p.alpha1 = ad.parameter(metric_vec(d1), "alpha1")
    p.w1 = ad.parameter(_glorot(rng, d1, c), "w1")
    if cfg.variant in ("dgl", "dgl-shallow-metric"):
        p.w3 = ad.parameter(_glorot(rng, c, c), "w3")
        p.gamma3 = ad.parameter(metric_vec(2 * c), "gamma3")
        p.w4 = ad.parameter(_glorot(rng, c, c), "w4")
        p.gamma4 = ad.parameter(metric_vec(2 * c), "gamma4")
        p.eta = ad.parameter(np.full((3, 1), 1.0 / 3.0), "eta")
    return ModelState(cfg, input_dim, p)


def forward(
    state: ModelState,
    x: Tensor,
    prior: GraphPrior,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> ForwardOutputs:
    """One full pass; dropout applies to the input of each convolution and
    attention layer only when ``training`` is set."""
    cfg = state.cfg
    p = state.params
    if x.cols != state.input_dim:
        raise ConfigError(f"model built for {state.input_dim} features, got {x.cols}")

    def drop(t: Tensor) -> Tensor:
        return ad.dropout(t, cfg.dropout, training, rng)

    if cfg.variant == "gcn-baseline":
        x0 = layers.linear_projection(x, p.p)
        prop = ad.tensor(prior.kipf_dense())
        x1 = ad.relu(ad.matmul(prop, ad.matmul(drop(x0), p.w0)))
        x2 = ad.relu(ad.matmul(prop, ad.matmul(drop(x1), p.w1)))
        z = ad.row_softmax(x2)
        return ForwardOutputs(z=z, logits=x2, x0=x0, x1=x1, x2=x2)

    x0 = layers.linear_projection(x, p.p)
    a0 = layers.graph_learning(x0, p.alpha0, prior)
    x1 = layers.graph_conv(drop(x0), a0, p.w0, cfg.degree_from)

    if cfg.variant == "glgcn":
        x2 = layers.graph_conv(drop(x1), a0, p.w1, cfg.degree_from)
        z = ad.row_softmax(x2)
        return ForwardOutputs(z=z, logits=x2, a0=a0, x0=x0, x1=x1, x2=x2)

    if cfg.variant == "dgl-shallow-metric":
        a1 = a0
    else:
        a1 = layers.graph_learning(x1, p.alpha1, prior)
    x2 = layers.graph_conv(drop(x1), a1, p.w1, cfg.degree_from)

    if cfg.variant == "dgl-non-local":
        z = ad.row_softmax(x2)
        return ForwardOutputs(z=z, logits=x2, a0=a0, a1=a1, x0=x0, x1=x1, x2=x2)

    att = a1 if cfg.attention_graph == "a1" else a0
    x3, beta3 = layers.graph_attention(drop(x2), att, p.w3, p.gamma3)
    x4, beta4 = layers.graph_attention(drop(x3), att, p.w4, p.gamma4)
    logits = layers.fusion_logits(x2, x3, x4, p.eta)
    z = ad.row_softmax(logits)
    return ForwardOutputs(
        z=z, logits=logits, a0=a0, a1=a1, beta3=beta3, beta4=beta4,
        x0=x0, x1=x1, x2=x2, x3=x3, x4=x4,
    )


def save_checkpoint(state: ModelState, path) -> None:
    """Versioned flat binary: magic line, JSON preamble (config, input dim,
    parameter manifest), then raw little-endian float64 blocks."""
    manifest = [
        {"name": name, "rows": t.rows, "cols": t.cols} for name, t in state.params.named()
    ]
    header = {
        "config": dataclasses.asdict(state.cfg),
        "input_dim": state.input_dim,
        "params": manifest,
    }
    with open(path, "wb") as fh:
        fh.write((_CHECKPOINT_MAGIC + "\n").encode())
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        for _, t in state.params.named():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelState:
    with open(path, "rb") as fh:
        buf = io.BufferedReader(fh)
        magic = buf.readline().decode(errors="replace").rstrip("\n")
        if magic != _CHECKPOINT_MAGIC:
            raise IngestionError(f"{path}: not a checkpoint (bad magic {magic!r})")
        try:
            header = json.loads(buf.readline().decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise IngestionError(f"{path}: unreadable checkpoint header: {exc}") from exc
        cfg = ModelConfig(**header["config"])
        state = build_model(cfg, header["input_dim"])
        by_name = dict(state.params.named())
        if [m["name"] for m in header["params"]] != list(by_name):
            raise IngestionError(f"{path}: parameter manifest does not match variant")
        for meta in header["params"]:
            t = by_name[meta["name"]]
            if (meta["rows"], meta["cols"]) != t.shape:
                raise IngestionError(
                    f"{path}: {meta['name']} has shape {(meta['rows'], meta['cols'])},"
                    f" expected {t.shape}"
                )
            raw = buf.read(meta["rows"] * meta["cols"] * 8)
            if len(raw) != meta["rows"] * meta["cols"] * 8:
                raise IngestionError(f"{path}: truncated data block for {meta['name']}")
            t.data[...] = np.frombuffer(raw, dtype="<f8").reshape(t.shape)
    return state
