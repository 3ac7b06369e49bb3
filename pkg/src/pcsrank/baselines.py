"""Classical paired-comparison baselines.

All fits consume comparisons in timestamp order (input order breaking ties)
and emit a ScoreTable: item_id -> latent score. Ties are scored 0.5/0.5 in
Elo and counted as half a win for each side in Rank Centrality; the
Rao-Kupper model handles ties natively through its tie parameter theta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from pcsrank.core import Comparison


class ConvergenceError(RuntimeError):
    """An iterative fit failed to reach its tolerance; carries the residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class ScoreTable:
    """Latent scores produced by one fit; immutable and shareable."""

    scores: dict[str, float]
    method: str
    fitted_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    diagnostics: dict = field(default_factory=dict)


def baseline_predict(table: ScoreTable, left_id: str, right_id: str, gamma: float) -> int:
    """-1 if left leads by more than gamma, +1 if right does, else tie (0)."""
    try:
        s_l = table.scores[left_id]
        s_r = table.scores[right_id]
    except KeyError as exc:
        raise ValueError(f"unknown item id {exc.args[0]!r}") from exc
    if s_l > s_r + gamma:
        return -1
    if s_r > s_l + gamma:
        return +1
    return 0


def _ordered(comparisons: Sequence[Comparison]) -> list[Comparison]:
    # Stable sort: equal timestamps keep input order.
    return sorted(comparisons, key=lambda c: c.created_at)


# ---------------------------------------------------------------------------
# Elo with draws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EloConfig:
    k_factor: float = 32.0
    initial_rating: float = 1500.0
    scale: float = 400.0

    def __post_init__(self) -> None:
        if self.k_factor <= 0 or self.scale <= 0:
            raise ValueError("k_factor and scale must be > 0")


def elo_update(
    r_left: float, r_right: float, outcome: int, config: EloConfig
) -> tuple[float, float]:
    """One zero-sum Elo update; ties score 0.5 for both sides."""
    expected_left = 1.0 / (1.0 + 10.0 ** ((r_right - r_left) / config.scale))
    if outcome == -1:
        actual_left = 1.0
    elif outcome == +1:
        actual_left = 0.0
    else:
        actual_left = 0.5
    delta = config.k_factor * (actual_left - expected_left)
    return r_left + delta, r_right - delta


def elo_fit(comparisons: Sequence[Comparison], config: EloConfig = EloConfig()) -> ScoreTable:
    """Single sequential Elo pass in timestamp order."""
    ratings: dict[str, float] = {}
    for c in _ordered(comparisons):
        r_l = ratings.setdefault(c.left_id, config.initial_rating)
        r_r = ratings.setdefault(c.right_id, config.initial_rating)
        ratings[c.left_id], ratings[c.right_id] = elo_update(r_l, r_r, c.outcome, config)
    return ScoreTable(scores=ratings, method="elo")


# ---------------------------------------------------------------------------
# Two-player Gaussian skill updates with a draw margin
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SkillConfig:
    mu0: float = 25.0
    sigma0: float = 25.0 / 3.0
    beta: float = 25.0 / 6.0  # sigma0 / 2
    tau: float = 25.0 / 300.0  # sigma0 / 100
    draw_probability: Optional[float] = None  # None -> empirical tie fraction

    def __post_init__(self) -> None:
        if self.sigma0 <= 0 or self.beta <= 0 or self.tau < 0:
            raise ValueError("sigma0 and beta must be > 0, tau >= 0")
        if self.draw_probability is not None and not (0.0 <= self.draw_probability < 1.0):
            raise ValueError("draw_probability must lie in [0, 1)")


def _phi(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def draw_margin(draw_probability: float, beta: float) -> float:
    """Margin epsilon such that two equal players draw with the given probability."""
    return float(ndtri(0.5 * (draw_probability + 1.0))) * math.sqrt(2.0) * beta


def _v_w_win(t: float, eps: float) -> tuple[float, float]:
    """Truncation mean/variance factors for a decisive outcome."""
    x = t - eps
    denom = float(ndtr(x))
    v = _phi(x) / denom if denom > 0.0 else -x
    return v, v * (v + x)


def _v_w_draw(t: float, eps: float) -> tuple[float, float]:
    """Doubly-truncated analogues for a draw; ``t`` is signed."""
    abs_t = abs(t)
    a = eps - abs_t
    b = -eps - abs_t
    denom = float(ndtr(a) - ndtr(b))
    if denom <= 0.0:
        raise FloatingPointError(
            "draw update is degenerate; draw_probability too small for observed draws"
        )
    v = (_phi(b) - _phi(a)) / denom
    if t < 0:
        v = -v
    w = v * v + (a * _phi(a) - b * _phi(b)) / denom
    return v, w


@dataclass
class _Belief:
    mu: float
    sigma_sq: float


def skill_fit(comparisons: Sequence[Comparison], config: SkillConfig = SkillConfig()) -> ScoreTable:
    """Sequential Gaussian belief updates per two-player TrueSkill-style rules.

    Exported score is the conservative estimate mu - 3*sigma.
    """
    ordered = _ordered(comparisons)
    p_draw = config.draw_probability
    if p_draw is None:
        ties = sum(1 for c in ordered if c.outcome == 0)
        p_draw = ties / len(ordered) if ordered else 0.0
    eps = draw_margin(p_draw, config.beta)

    beliefs: dict[str, _Belief] = {}
    for c in ordered:
        left = beliefs.setdefault(c.left_id, _Belief(config.mu0, config.sigma0**2))
        right = beliefs.setdefault(c.right_id, _Belief(config.mu0, config.sigma0**2))
        # Dynamics noise keeps ratings adaptive.
        left.sigma_sq += config.tau**2
        right.sigma_sq += config.tau**2
        c2 = left.sigma_sq + right.sigma_sq + 2.0 * config.beta**2
        c_ = math.sqrt(c2)
        eps_n = eps / c_

        if c.outcome == 0:
            t = (left.mu - right.mu) / c_
            v, w = _v_w_draw(t, eps_n)
            winner, loser = left, right
        else:
            winner, loser = (left, right) if c.outcome == -1 else (right, left)
            t = (winner.mu - loser.mu) / c_
            v, w = _v_w_win(t, eps_n)

        if not (math.isfinite(v) and math.isfinite(w)):
            raise FloatingPointError("non-finite skill update; check SkillConfig")
        winner.mu += (winner.sigma_sq / c_) * v
        loser.mu -= (loser.sigma_sq / c_) * v
        winner.sigma_sq *= 1.0 - (winner.sigma_sq / c2) * w
        loser.sigma_sq *= 1.0 - (loser.sigma_sq / c2) * w

    scores = {iid: b.mu - 3.0 * math.sqrt(b.sigma_sq) for iid, b in beliefs.items()}
    return ScoreTable(scores=scores, method="skill", diagnostics={"draw_margin": eps})


# ---------------------------------------------------------------------------
# Rank Centrality
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RCConfig:
    smoothing: float = 1.0  # add-one on compared pairs only
    tolerance: float = 1e-10
    max_iterations: int = 10_000

    def __post_init__(self) -> None:
        if self.smoothing <= 0:
            raise ValueError("smoothing must be > 0")
        if self.tolerance <= 0 or self.max_iterations < 1:
            raise ValueError("tolerance must be > 0 and max_iterations >= 1")


def _components(n: int, neighbors: list[set[int]]) -> list[list[int]]:
    seen = [False] * n
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        stack, comp = [start], []
        seen[start] = True
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in neighbors[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        comps.append(sorted(comp))
    return comps


def rank_centrality(
    comparisons: Sequence[Comparison], config: RCConfig = RCConfig()
) -> ScoreTable:
    """Stationary distribution of the comparison-derived Markov chain.

    Ties count as half a win for each side; win fractions are smoothed on
    compared pairs only. A disconnected comparison graph is flagged in the
    table diagnostics (the per-component masses then depend on component
    sizes rather than on cross-component evidence).
    """
    ids = sorted({iid for c in comparisons for iid in (c.left_id, c.right_id)})
    n = len(ids)
    if n < 2:
        raise ValueError("rank_centrality needs at least 2 items")
    index = {iid: k for k, iid in enumerate(ids)}

    wins = np.zeros((n, n))
    for c in comparisons:
        i, j = index[c.left_id], index[c.right_id]
        if c.outcome == -1:
            wins[i, j] += 1.0
        elif c.outcome == +1:
            wins[j, i] += 1.0
        else:
            wins[i, j] += 0.5
            wins[j, i] += 0.5

    compared = (wins + wins.T) > 0
    neighbors = [set(np.flatnonzero(compared[k])) for k in range(n)]
    degree = np.array([len(nb) for nb in neighbors])
    d_max = int(degree.max())

    # P(i -> j) = p_hat(j beats i) / d_max on compared pairs; self-loops absorb the rest.
    smoothed = np.where(compared, wins + config.smoothing, 0.0)
    with np.errstate(invalid="ignore"):
        frac = np.where(compared, smoothed.T / (smoothed + smoothed.T), 0.0)
    transition = frac / d_max
    np.fill_diagonal(transition, 0.0)
    np.fill_diagonal(transition, 1.0 - transition.sum(axis=1))

    v = np.full(n, 1.0 / n)
    residual = math.inf
    for _ in range(config.max_iterations):
        v_next = v @ transition
        v_next /= v_next.sum()
        residual = float(np.abs(v_next - v).sum())
        v = v_next
        if residual < config.tolerance:
            break
    else:
        raise ConvergenceError("rank centrality power iteration did not converge", residual)

    comps = _components(n, neighbors)
    diagnostics = {"connected": len(comps) == 1, "n_components": len(comps)}
    if len(comps) > 1:
        diagnostics["components"] = [[ids[k] for k in comp] for comp in comps]
        diagnostics["component_mass"] = [float(sum(v[k] for k in comp)) for comp in comps]
    return ScoreTable(
        scores={iid: float(v[index[iid]]) for iid in ids},
        method="rank_centrality",
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# Rao-Kupper (Bradley-Terry with ties)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RKParams:
    """Worth parameters pi (positive, summing to 1) and tie parameter theta >= 1."""

    pi: dict[str, float]
    theta: float


def rao_kupper_probabilities(
    pi_i: float, pi_j: float, theta: float
) -> tuple[float, float, float]:
    """(P(i wins), P(j wins), P(tie)) for one pair."""
    p_i = pi_i / (pi_i + theta * pi_j)
    p_j = pi_j / (pi_j + theta * pi_i)
    p_tie = (theta**2 - 1.0) * pi_i * pi_j / ((pi_i + theta * pi_j) * (pi_j + theta * pi_i))
    return p_i, p_j, p_tie


def rao_kupper_log_likelihood(
    wins: np.ndarray, ties: np.ndarray, pi: np.ndarray, theta: float
) -> float:
    """Log-likelihood of win/tie counts; ``ties`` must be symmetric."""
    pi = np.asarray(pi, dtype=np.float64)
    # P[i, j] = pi_i + theta * pi_j, the shared denominator of every term.
    P = pi[:, None] + theta * pi[None, :]
    ll = 0.0
    wi, wj = np.nonzero(wins)
    if wi.size:
        ll += float(np.sum(wins[wi, wj] * (np.log(pi[wi]) - np.log(P[wi, wj]))))
    ti, tj = np.nonzero(np.triu(ties, k=1))
    if ti.size:
        ll += float(
            np.sum(
                ties[ti, tj]
                * (
                    math.log(theta**2 - 1.0)
                    + np.log(pi[ti])
                    + np.log(pi[tj])
                    - np.log(P[ti, tj])
                    - np.log(P[tj, ti])
                )
            )
        )
    return ll


def rao_kupper_fit(
    comparisons: Sequence[Comparison],
    tolerance: float = 1e-9,
    max_sweeps: int = 10_000,
    pseudo_count: float = 0.0,
) -> tuple[RKParams, float]:
    """Maximum-likelihood fit by alternating MM updates on pi and a bounded
    1-D maximization on theta, until the log-likelihood change drops below
    ``tolerance``.

    With no ties in the data theta is pinned to 1 and the model reduces to
    Bradley-Terry. On sparse comparison graphs the MLE can sit on the
    boundary (items that never lose, ties between otherwise unconstrained
    items) and the fit will not converge; a positive ``pseudo_count`` adds
    that many fictitious wins in both directions of every compared pair,
    which keeps the maximizer interior at the cost of exactness.
    """
    from scipy.optimize import minimize_scalar

    if pseudo_count < 0:
        raise ValueError("pseudo_count must be >= 0")
    ids = sorted({iid for c in comparisons for iid in (c.left_id, c.right_id)})
    if not ids:
        raise ValueError("rao_kupper_fit needs at least one comparison")
    index = {iid: k for k, iid in enumerate(ids)}
    n = len(ids)

    wins = np.zeros((n, n))
    ties = np.zeros((n, n))
    for c in comparisons:
        i, j = index[c.left_id], index[c.right_id]
        if c.outcome == -1:
            wins[i, j] += 1.0
        elif c.outcome == +1:
            wins[j, i] += 1.0
        else:
            ties[i, j] += 1.0
            ties[j, i] += 1.0

    has_ties = ties.sum() > 0
    if pseudo_count > 0:
        compared = (wins + wins.T + ties) > 0
        wins = wins + pseudo_count * compared
    pi = np.full(n, 1.0 / n)
    theta = 1.5 if has_ties else 1.0
    ll = rao_kupper_log_likelihood(wins, ties, pi, theta)

    offdiag = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        # MM fixed-point update on pi (ascent by minorization).
        numer = wins.sum(axis=1) + ties.sum(axis=1)
        P = pi[:, None] + theta * pi[None, :]
        denom = np.where(offdiag, (wins + ties) / P, 0.0).sum(axis=1)
        denom += theta * np.where(offdiag, (wins.T + ties) / P.T, 0.0).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            pi = np.where(denom > 0, numer / denom, 0.0)
        pi = np.maximum(pi, 1e-12)
        pi /= pi.sum()

        if has_ties:
            result = minimize_scalar(
                lambda th: -rao_kupper_log_likelihood(wins, ties, pi, th),
                bounds=(1.0 + 1e-12, 1e3),
                method="bounded",
                options={"xatol": 1e-12},
            )
            theta = float(result.x)

        ll_new = rao_kupper_log_likelihood(wins, ties, pi, theta)
        last_change = abs(ll_new - ll)
        ll = ll_new
        if last_change < tolerance:
            break
    else:
        raise ConvergenceError("rao-kupper fit did not converge", last_change)

    params = RKParams(pi={iid: float(pi[index[iid]]) for iid in ids}, theta=theta)
    return params, ll


def rao_kupper_table(params: RKParams) -> ScoreTable:
    return ScoreTable(
        scores=dict(params.pi), method="rao_kupper", diagnostics={"theta": params.theta}
    )


# ---------------------------------------------------------------------------
# Uniform fitting entry point
# ---------------------------------------------------------------------------

BASELINE_METHODS = ("elo", "skill", "rank_centrality", "rao_kupper")


def fit_baseline(method: str, comparisons: Sequence[Comparison], **config) -> ScoreTable:
    """Fit one baseline by name; ``config`` forwards to the method's config type."""
    if method == "elo":
        return elo_fit(comparisons, EloConfig(**config))
    if method == "skill":
        return skill_fit(comparisons, SkillConfig(**config))
    if method == "rank_centrality":
        return rank_centrality(comparisons, RCConfig(**config))
    if method == "rao_kupper":
        params, ll = rao_kupper_fit(comparisons, **config)
        table = rao_kupper_table(params)
        table.diagnostics["log_likelihood"] = ll
        return table
    raise ValueError(f"unknown baseline method {method!r}; choose from {BASELINE_METHODS}")
