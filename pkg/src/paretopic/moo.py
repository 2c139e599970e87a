"""Two-task gradient blending: min-norm Pareto solver and baseline strategies."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Array = np.ndarray

DEFAULT_TIE_EPS = 1e-12
STRATEGIES = ("mgda", "linear", "random", "pcgrad")


@dataclass
class BlendDecision:
    alpha: float | None  # None for pcgrad (direction only)
    direction: Array
    strategy: str
    diagnostics: dict = field(default_factory=dict)


def _check_pair(g1: Array, g2: Array):
    g1 = np.asarray(g1, dtype=np.float64).ravel()
    g2 = np.asarray(g2, dtype=np.float64).ravel()
    if g1.shape != g2.shape:
        raise ValueError(f"gradient length mismatch: {g1.size} vs {g2.size}")
    return g1, g2


def alpha_min_norm(g1: Array, g2: Array, tie_eps: float = DEFAULT_TIE_EPS) -> float:
    """Exact minimizer of ||a g1 + (1-a) g2||^2 over a in [0, 1].

    a* = clip((g2 - g1) . g2 / ||g1 - g2||^2, 0, 1); near-identical gradients
    (||g1 - g2||^2 < tie_eps) return 0.5, where any a gives the same direction.
    """
    g1, g2 = _check_pair(g1, g2)
    diff = g1 - g2
    denom = float(diff @ diff)
    if denom < tie_eps:
        return 0.5
    return float(np.clip(-(diff @ g2) / denom, 0.0, 1.0))


def alpha_grid_oracle(g1: Array, g2: Array, steps: int = 10_000) -> float:
    """Brute-force minimizer of ||a g1 + (1-a) g2||^2 over a uniform grid."""
    if steps < 100:
        raise ValueError(f"grid oracle needs steps >= 100, got {steps}")
    g1, g2 = _check_pair(g1, g2)
    # h(a) = a^2|g1|^2 + 2a(1-a) g1.g2 + (1-a)^2|g2|^2, evaluated on the grid
    alphas = np.linspace(0.0, 1.0, steps + 1)
    n1 = g1 @ g1
    n2 = g2 @ g2
    dot = g1 @ g2
    h = alphas ** 2 * n1 + 2 * alphas * (1 - alphas) * dot + (1 - alphas) ** 2 * n2
    return float(alphas[int(h.argmin())])


def blend(g1: Array, g2: Array, alpha: float) -> Array:
    """Elementwise convex combination alpha*g1 + (1-alpha)*g2."""
    g1, g2 = _check_pair(g1, g2)
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return g2.copy()
    if alpha == 1.0:
        return g1.copy()
    return alpha * g1 + (1.0 - alpha) * g2


def _pcgrad_direction(g1: Array, g2: Array) -> Array:
    dot = float(g1 @ g2)
    if dot >= 0.0:
        return g1 + g2
    p1 = g1 - dot / float(g2 @ g2) * g2
    p2 = g2 - dot / float(g1 @ g1) * g1
    return p1 + p2


def strategy_dispatch(name: str, g1: Array, g2: Array, params: dict | None = None,
                      rng: np.random.Generator | None = None) -> BlendDecision:
    """Pick a blend direction for (g1, g2) = (contrastive, ELBO) gradients."""
    g1, g2 = _check_pair(g1, g2)
    params = params or {}
    if name == "mgda":
        alpha = alpha_min_norm(g1, g2, params.get("tie_eps", DEFAULT_TIE_EPS))
        direction = blend(g1, g2, alpha)
    elif name == "linear":
        alpha = float(params.get("linear_alpha", 0.5))
        direction = blend(g1, g2, alpha)
    elif name == "random":
        if rng is None:
            raise ValueError("random strategy requires a seeded rng")
        alpha = float(rng.uniform(0.0, 1.0))
        direction = blend(g1, g2, alpha)
    elif name == "pcgrad":
        alpha = None
        direction = _pcgrad_direction(g1, g2)
    else:
        raise ValueError(f"unknown strategy {name!r}, expected one of {STRATEGIES}")
    diagnostics = {
        "g1_norm": float(np.linalg.norm(g1)),
        "g2_norm": float(np.linalg.norm(g2)),
        "direction_norm": float(np.linalg.norm(direction)),
        "g1_dot_g2": float(g1 @ g2),
    }
    if name == "mgda" and float((g1 - g2) @ (g1 - g2)) < params.get("tie_eps", DEFAULT_TIE_EPS):
        diagnostics["degenerate_pair"] = True
    return BlendDecision(alpha=alpha, direction=direction, strategy=name,
                         diagnostics=diagnostics)
