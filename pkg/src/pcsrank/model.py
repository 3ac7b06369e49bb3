"""The trainable scorer: a shared (tied-weight) dense trunk applied to both
items of a pair, a ranking head producing the scalar score f(x), and a fusion
head producing 3-class logits over (left, tie, right).

Gradients are hand-derived reverse-mode; the optimizer is Adam with step
decay. Everything runs in double precision on plain numpy arrays.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from pcsrank.core import Comparison, Item
from pcsrank.losses import CLASS_INDEX, LossBreakdown

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Hyperparams:
    """Training hyperparameters.

    ``gamma`` is the margin used both as the hinge margin and the tie band;
    ``lambda_rank`` and ``lambda_tie`` weight the hinge and tie-contraction
    terms of the combined loss.
    """

    gamma: float = 0.3
    lambda_rank: float = 1.0
    lambda_tie: float = 1.0
    learning_rate: float = 0.001
    decay_every_steps: int = 10_000
    decay_factor: float = 0.5
    batch_size: int = 128
    max_epochs: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.lambda_rank < 0 or self.lambda_tie < 0:
            raise ValueError("loss weights must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.decay_every_steps < 1:
            raise ValueError("decay_every_steps must be >= 1")
        if not (0.0 < self.decay_factor <= 1.0):
            raise ValueError("decay_factor must be in (0, 1]")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


@dataclass(frozen=True)
class Dims:
    """Layer dimension chain: feature_dim -> trunk widths -> heads."""

    feature_dim: int
    trunk_widths: tuple[int, ...] = (64, 64)
    fusion_hidden: int = 64

    def __post_init__(self) -> None:
        chain = (self.feature_dim, *self.trunk_widths, self.fusion_hidden)
        if not self.trunk_widths or any(int(d) < 1 for d in chain):
            raise ValueError(f"invalid dimension chain: {chain}")

    @property
    def embedding_dim(self) -> int:
        return self.trunk_widths[-1]


@dataclass
class Layer:
    """One dense layer; ``w`` has shape (out, in) and ``b`` shape (out,)."""

    w: np.ndarray
    b: np.ndarray


@dataclass
class AdamState:
    """First/second moment accumulators aligned with ``parameter_arrays`` order."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0


@dataclass
class ModelParams:
    """All trainable parameters plus optimizer state.

    The trunk is a single parameter block shared by both inputs of a pair
    (tied weights by construction).
    """

    dims: Dims
    trunk: list[Layer]
    rank_head: list[Layer]
    fusion_head: list[Layer]
    hyper: Hyperparams
    adam: AdamState
    seed: int = 0

    def layers(self) -> list[Layer]:
        return [*self.trunk, *self.rank_head, *self.fusion_head]

    def parameter_arrays(self) -> list[np.ndarray]:
        arrays: list[np.ndarray] = []
        for layer in self.layers():
            arrays.append(layer.w)
            arrays.append(layer.b)
        return arrays

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)


@dataclass
class Gradients:
    """Loss gradients mirroring the ModelParams layer structure."""

    trunk: list[Layer]
    rank_head: list[Layer]
    fusion_head: list[Layer]

    def parameter_arrays(self) -> list[np.ndarray]:
        arrays: list[np.ndarray] = []
        for layer in (*self.trunk, *self.rank_head, *self.fusion_head):
            arrays.append(layer.w)
            arrays.append(layer.b)
        return arrays


@dataclass(frozen=True)
class Batch:
    """Feature matrices for both sides plus outcomes, one row per comparison."""

    x_left: np.ndarray
    x_right: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return self.x_left.shape[0]


def make_batch(
    comparisons: Sequence[Comparison],
    items_by_id: Mapping[str, Item],
    swap_mask: Optional[np.ndarray] = None,
) -> Batch:
    """Assemble a batch; entries flagged in ``swap_mask`` are mirrored
    (sides exchanged, outcome negated, ties staying ties)."""
    x_left = np.stack([items_by_id[c.left_id].features for c in comparisons])
    x_right = np.stack([items_by_id[c.right_id].features for c in comparisons])
    y = np.array([c.outcome for c in comparisons], dtype=np.int64)
    if swap_mask is not None and np.asarray(swap_mask, dtype=bool).any():
        sel = np.asarray(swap_mask, dtype=bool)
        x_left[sel], x_right[sel] = x_right[sel].copy(), x_left[sel].copy()
        y[sel] = -y[sel]
    return Batch(x_left=x_left, x_right=x_right, y=y)


def _layer_sizes(dims: Dims) -> list[tuple[str, int, int]]:
    """(block, out, in) for every dense layer in parameter order."""
    sizes: list[tuple[str, int, int]] = []
    fan_in = dims.feature_dim
    for width in dims.trunk_widths:
        sizes.append(("trunk", width, fan_in))
        fan_in = width
    sizes.append(("rank_head", 1, dims.embedding_dim))
    sizes.append(("fusion_head", dims.fusion_hidden, 2 * dims.embedding_dim))
    sizes.append(("fusion_head", 3, dims.fusion_hidden))
    return sizes


def init_params(dims: Dims, seed: int, hyper: Optional[Hyperparams] = None) -> ModelParams:
    """Initialize weights Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero.

    Deterministic under ``seed``: layers are drawn in a fixed order
    (trunk, ranking head, fusion head).
    """
    hyper = hyper if hyper is not None else Hyperparams(seed=seed)
    rng = np.random.default_rng(np.random.PCG64(seed))
    blocks: dict[str, list[Layer]] = {"trunk": [], "rank_head": [], "fusion_head": []}
    for block, n_out, n_in in _layer_sizes(dims):
        bound = 1.0 / np.sqrt(n_in)
        w = rng.uniform(-bound, bound, size=(n_out, n_in))
        b = np.zeros(n_out)
        blocks[block].append(Layer(w=w, b=b))
    shapes = [
        arr
        for layer in (*blocks["trunk"], *blocks["rank_head"], *blocks["fusion_head"])
        for arr in (layer.w, layer.b)
    ]
    adam = AdamState(m=[np.zeros_like(a) for a in shapes], v=[np.zeros_like(a) for a in shapes])
    return ModelParams(
        dims=dims,
        trunk=blocks["trunk"],
        rank_head=blocks["rank_head"],
        fusion_head=blocks["fusion_head"],
        hyper=hyper,
        adam=adam,
        seed=seed,
    )


def zero_gradients(params: ModelParams) -> Gradients:
    def zeros(layers: list[Layer]) -> list[Layer]:
        return [Layer(w=np.zeros_like(l.w), b=np.zeros_like(l.b)) for l in layers]

    return Gradients(
        trunk=zeros(params.trunk),
        rank_head=zeros(params.rank_head),
        fusion_head=zeros(params.fusion_head),
    )


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------


def _check_dim(params: ModelParams, x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.dims.feature_dim:
        raise ValueError(
            f"{what}: expected feature dimension {params.dims.feature_dim}, got {x.shape[-1]}"
        )
    return x


def _trunk_forward(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Embed a (n, D) batch; returns (embedding, per-layer (input, pre-activation) cache)."""
    cache = []
    a = x
    for layer in params.trunk:
        z = a @ layer.w.T + layer.b
        cache.append((a, z))
        a = np.maximum(z, 0.0)
    return a, cache


def embed(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Trunk embedding of a (n, D) batch or single feature vector."""
    x = _check_dim(params, np.atleast_2d(x), "embed")
    emb, _ = _trunk_forward(params, x)
    return emb


def rank_scores(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Ranking scores f(x) for a (n, D) batch."""
    emb = embed(params, x)
    head = params.rank_head[0]
    return (emb @ head.w.T + head.b)[:, 0]


def rank_score(params: ModelParams, features: np.ndarray) -> float:
    """Scalar ranking score f(x) for one feature vector."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1:
        raise ValueError("rank_score expects a single feature vector")
    return float(rank_scores(params, features[None, :])[0])


def pair_logits(params: ModelParams, x_i: np.ndarray, x_j: np.ndarray) -> np.ndarray:
    """3-class logits for batches of pairs; columns follow CLASS_INDEX order."""
    e_i = embed(params, x_i)
    e_j = embed(params, x_j)
    h = np.concatenate([e_i, e_j], axis=1)
    hidden, out = params.fusion_head
    a1 = np.maximum(h @ hidden.w.T + hidden.b, 0.0)
    return a1 @ out.w.T + out.b


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def classify_pair(params: ModelParams, x_i: np.ndarray, x_j: np.ndarray) -> np.ndarray:
    """Probability vector (p_left, p_tie, p_right) for a single pair."""
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    if x_i.ndim != 1 or x_j.ndim != 1:
        raise ValueError("classify_pair expects single feature vectors")
    logits = pair_logits(params, x_i[None, :], x_j[None, :])
    return _softmax(logits)[0]


def score_items(params: ModelParams, items: Iterable[Item]) -> dict[str, float]:
    """Ranking score for every item, keyed by item id."""
    items = list(items)
    if not items:
        return {}
    x = np.stack([item.features for item in items])
    scores = rank_scores(params, x)
    return {item.id: float(s) for item, s in zip(items, scores)}


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def loss_and_gradients(
    params: ModelParams,
    batch: Batch,
    hyper: Optional[Hyperparams] = None,
    use_classification: bool = True,
) -> tuple[LossBreakdown, Gradients]:
    """Mean combined loss over the batch and its gradient w.r.t. every parameter.

    Subgradient 0 is taken at the hinge kink, at the L1 kink, and at
    rectifier kinks.
    """
    hyper = hyper if hyper is not None else params.hyper
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    x_i = _check_dim(params, batch.x_left, "batch.x_left")
    x_j = _check_dim(params, batch.x_right, "batch.x_right")
    y = batch.y

    e_i, cache_i = _trunk_forward(params, x_i)
    e_j, cache_j = _trunk_forward(params, x_j)
    head = params.rank_head[0]
    f_i = (e_i @ head.w.T + head.b)[:, 0]
    f_j = (e_j @ head.w.T + head.b)[:, 0]
    delta = f_i - f_j

    grads = zero_gradients(params)
    nontie = y != 0
    tie = ~nontie

    # Ranking hinge: active iff gamma + y*delta > 0 (strict; 0 at the kink).
    hinge_arg = hyper.gamma + y * delta
    hinge_active = nontie & (hinge_arg > 0)
    hinge_vals = np.where(hinge_active, hinge_arg, 0.0)
    # Tie contraction: active iff |delta| > gamma.
    tie_arg = np.abs(delta) - hyper.gamma
    tie_active = tie & (tie_arg > 0)
    tie_vals = np.where(tie_active, tie_arg, 0.0)

    d_delta = np.zeros(n)
    d_delta[hinge_active] = hyper.lambda_rank * y[hinge_active]
    d_delta[tie_active] = hyper.lambda_tie * np.sign(delta[tie_active])
    d_delta /= n
    d_fi = d_delta
    d_fj = -d_delta

    # Ranking head (shared by both branches).
    g_head = grads.rank_head[0]
    g_head.w += (d_fi[:, None] * e_i + d_fj[:, None] * e_j).sum(axis=0, keepdims=True)
    g_head.b += np.array([float((d_fi + d_fj).sum())])
    d_ei = d_fi[:, None] @ head.w
    d_ej = d_fj[:, None] @ head.w

    ce_sum = 0.0
    if use_classification:
        h = np.concatenate([e_i, e_j], axis=1)
        hidden, out = params.fusion_head
        z1 = h @ hidden.w.T + hidden.b
        a1 = np.maximum(z1, 0.0)
        logits = a1 @ out.w.T + out.b
        probs = _softmax(logits)
        classes = np.array([CLASS_INDEX[int(v)] for v in y])
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        ce_sum = float(-log_probs[np.arange(n), classes].sum())

        d_logits = probs.copy()
        d_logits[np.arange(n), classes] -= 1.0
        d_logits /= n
        g_hidden, g_out = grads.fusion_head
        g_out.w += d_logits.T @ a1
        g_out.b += d_logits.sum(axis=0)
        d_a1 = d_logits @ out.w
        d_z1 = d_a1 * (z1 > 0)
        g_hidden.w += d_z1.T @ h
        g_hidden.b += d_z1.sum(axis=0)
        d_h = d_z1 @ hidden.w
        emb_dim = params.dims.embedding_dim
        d_ei = d_ei + d_h[:, :emb_dim]
        d_ej = d_ej + d_h[:, emb_dim:]

    for d_emb, cache in ((d_ei, cache_i), (d_ej, cache_j)):
        d_a = d_emb
        for layer, g_layer, (a_prev, z) in zip(
            reversed(params.trunk), reversed(grads.trunk), reversed(cache)
        ):
            d_z = d_a * (z > 0)
            g_layer.w += d_z.T @ a_prev
            g_layer.b += d_z.sum(axis=0)
            d_a = d_z @ layer.w

    classification = ce_sum / n
    ranking = float(hinge_vals.sum()) / n
    tie_mean = float(tie_vals.sum()) / n
    breakdown = LossBreakdown(
        total=classification + hyper.lambda_rank * ranking + hyper.lambda_tie * tie_mean,
        classification=classification,
        ranking=ranking,
        tie=tie_mean,
        counts=(int(nontie.sum()), int(tie.sum())),
    )
    return breakdown, grads


def backward(
    params: ModelParams,
    batch: Batch,
    hyper: Optional[Hyperparams] = None,
    use_classification: bool = True,
) -> Gradients:
    """Gradient of the mean combined loss for a batch of (x_i, x_j, y)."""
    _, grads = loss_and_gradients(params, batch, hyper, use_classification)
    return grads


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


def effective_learning_rate(hyper: Hyperparams, step: int) -> float:
    """learning_rate * decay_factor^floor(step / decay_every_steps)."""
    return hyper.learning_rate * hyper.decay_factor ** (step // hyper.decay_every_steps)


def adam_step(params: ModelParams, grads: Gradients) -> ModelParams:
    """One Adam update in place (beta1 0.9, beta2 0.999, eps 1e-8).

    The step counter before the update selects the decayed learning rate;
    bias correction uses the 1-indexed step count.
    """
    lr = effective_learning_rate(params.hyper, params.adam.step)
    t = params.adam.step + 1
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for p, g, m, v in zip(
        params.parameter_arrays(), grads.parameter_arrays(), params.adam.m, params.adam.v
    ):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * np.square(g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    params.adam.step = t
    return params


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _layers_to_json(layers: list[Layer]) -> list[dict]:
    return [
        {"shape": list(l.w.shape), "w": l.w.ravel().tolist(), "b": l.b.tolist()} for l in layers
    ]


def _layers_from_json(spec: list[dict]) -> list[Layer]:
    layers = []
    for entry in spec:
        shape = tuple(entry["shape"])
        w = np.array(entry["w"], dtype=np.float64).reshape(shape)
        b = np.array(entry["b"], dtype=np.float64)
        layers.append(Layer(w=w, b=b))
    return layers


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Write a versioned JSON checkpoint; lossless in double precision."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "class_index": {str(k): v for k, v in CLASS_INDEX.items()},
        "dims": {
            "feature_dim": params.dims.feature_dim,
            "trunk_widths": list(params.dims.trunk_widths),
            "fusion_hidden": params.dims.fusion_hidden,
        },
        "hyper": asdict(params.hyper),
        "seed": params.seed,
        "blocks": {
            "trunk": _layers_to_json(params.trunk),
            "rank_head": _layers_to_json(params.rank_head),
            "fusion_head": _layers_to_json(params.fusion_head),
        },
        "adam": {
            "step": params.adam.step,
            "m": [a.ravel().tolist() for a in params.adam.m],
            "v": [a.ravel().tolist() for a in params.adam.v],
        },
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path: str | Path) -> ModelParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    dims = Dims(
        feature_dim=doc["dims"]["feature_dim"],
        trunk_widths=tuple(doc["dims"]["trunk_widths"]),
        fusion_hidden=doc["dims"]["fusion_hidden"],
    )
    params = ModelParams(
        dims=dims,
        trunk=_layers_from_json(doc["blocks"]["trunk"]),
        rank_head=_layers_from_json(doc["blocks"]["rank_head"]),
        fusion_head=_layers_from_json(doc["blocks"]["fusion_head"]),
        hyper=Hyperparams(**doc["hyper"]),
        adam=AdamState(m=[], v=[], step=doc["adam"]["step"]),
        seed=doc["seed"],
    )
    templates = params.parameter_arrays()
    params.adam.m = [
        np.array(flat, dtype=np.float64).reshape(t.shape)
        for flat, t in zip(doc["adam"]["m"], templates)
    ]
    params.adam.v = [
        np.array(flat, dtype=np.float64).reshape(t.shape)
        for flat, t in zip(doc["adam"]["v"], templates)
    ]
    return params
