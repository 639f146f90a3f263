"""Empirical testbed for mixture-sampled fitted value iteration.

Small deterministic MDPs on [0,1]^d where each Bellman backup draws its next
state from the true dynamics with probability beta and from a half-normally
corrupted copy otherwise. An exact value-iteration oracle on a fine grid
supplies the reference return, and sweep machinery measures how the best
beta moves as the real-sample budget grows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import erf

from .rng import SeededRng

logger = logging.getLogger(__name__)


def _bump_reward(center: np.ndarray):
    def reward(states, a_idx):
        d2 = ((states - center) ** 2).sum(axis=-1)
        return np.exp(-d2 / 0.02)
    return reward


@dataclass(frozen=True)
class FviMdp:
    """Deterministic MDP on the unit box with a finite action set.

    Transitions are clipped displacements; reward_fn(states, a_idx) must stay
    within [0, r_max].
    """

    name: str
    dim: int
    actions: np.ndarray  # (n_actions, dim) displacement vectors
    gamma: float
    r_max: float
    reward_fn: object

    @property
    def n_actions(self) -> int:
        return self.actions.shape[0]

    @property
    def v_max(self) -> float:
        return self.r_max / (1.0 - self.gamma)

    def transition(self, states: np.ndarray, a_idx: int) -> np.ndarray:
        return np.clip(states + self.actions[a_idx], 0.0, 1.0)

    def reward(self, states: np.ndarray, a_idx: int) -> np.ndarray:
        return self.reward_fn(states, a_idx)


def line_world() -> FviMdp:
    """d=1, A={-1,0,+1} scaled by 0.05, reward bump at s=0.8, gamma=0.95."""
    return FviMdp(
        name="LineWorld", dim=1,
        actions=0.05 * np.array([[-1.0], [0.0], [1.0]]),
        gamma=0.95, r_max=1.0, reward_fn=_bump_reward(np.array([0.8])),
    )


def grid_world_2d() -> FviMdp:
    """d=2 variant: 5 compass moves, reward bump at (0.7, 0.3)."""
    return FviMdp(
        name="GridWorld2D", dim=2,
        actions=0.05 * np.array(
            [[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]),
        gamma=0.95, r_max=1.0, reward_fn=_bump_reward(np.array([0.7, 0.3])),
    )


# ---------------------------------------------------------------------------
# Piecewise-multilinear value functions on a uniform knot grid
# ---------------------------------------------------------------------------


@dataclass
class ValueFn:
    """Knot values on a uniform grid over [0,1]^d with multilinear interpolation."""

    dim: int
    grid_size: int
    values: np.ndarray  # flat, length grid_size**dim
    v_max: float

    @classmethod
    def zeros(cls, dim: int, grid_size: int, v_max: float) -> "ValueFn":
        return cls(dim, grid_size, np.zeros(grid_size ** dim), v_max)

    def copy(self) -> "ValueFn":
        return ValueFn(self.dim, self.grid_size, self.values.copy(), self.v_max)

    def _cells(self, states: np.ndarray):
        """Lower-corner indices and fractional offsets for each state."""
        g = self.grid_size
        x = np.asarray(states, dtype=np.float64).reshape(-1, self.dim) * (g - 1)
        i0 = np.clip(np.floor(x).astype(np.int64), 0, g - 2)
        frac = x - i0
        return i0, frac

    def basis(self, states: np.ndarray):
        """Flat knot indices (N, 2^d) and weights (N, 2^d) of the multilinear basis."""
        g = self.grid_size
        i0, frac = self._cells(states)
        n = i0.shape[0]
        corners = 1 << self.dim
        idx = np.zeros((n, corners), dtype=np.int64)
        wgt = np.ones((n, corners))
        for c in range(corners):
            flat = np.zeros(n, dtype=np.int64)
            for d in range(self.dim):
                hi = (c >> d) & 1
                flat = flat * g + (i0[:, d] + hi)
                wgt[:, c] = wgt[:, c] * np.where(hi, frac[:, d], 1.0 - frac[:, d])
            idx[:, c] = flat
        return idx, wgt

    def __call__(self, states: np.ndarray) -> np.ndarray:
        idx, wgt = self.basis(states)
        return (self.values[idx] * wgt).sum(axis=1)


def fit_value(states: np.ndarray, targets: np.ndarray, prev: ValueFn,
              p: float = 2.0, ridge: float = 1e-8, irls_iters: int = 50) -> ValueFn:
    """argmin over the multilinear class of sum |f(s_i) - target_i|^p.

    p=2 solves regularized normal equations exactly; p=1 runs IRLS capped at
    irls_iters. Knots no sample touches keep their previous values; fitted
    knot values are clipped to [0, v_max].
    """
    states = np.asarray(states, dtype=np.float64).reshape(-1, prev.dim)
    targets = np.asarray(targets, dtype=np.float64)
    if states.shape[0] != targets.shape[0] or states.shape[0] < 1:
        raise ValueError("states/targets length mismatch or empty")
    idx, wgt = prev.basis(states)
    n_knots = prev.grid_size ** prev.dim
    corners = idx.shape[1]

    def solve_weighted(sample_w):
        a = np.zeros((n_knots, n_knots))
        b = np.zeros(n_knots)
        for ci in range(corners):
            np.add.at(b, idx[:, ci], sample_w * wgt[:, ci] * targets)
            for cj in range(corners):
                np.add.at(a, (idx[:, ci], idx[:, cj]),
                          sample_w * wgt[:, ci] * wgt[:, cj])
        support = np.diag(a) > 0.0
        vals = prev.values.copy()
        sub = a[np.ix_(support, support)]
        sub[np.diag_indices_from(sub)] += ridge
        try:
            vals[support] = np.linalg.solve(sub, b[support])
        except np.linalg.LinAlgError:
            logger.warning("singular normal equations; retrying with ridge=%g", ridge * 1e3)
            sub[np.diag_indices_from(sub)] += ridge * 1e3
            vals[support] = np.linalg.solve(sub, b[support])
        return vals

    if p == 2.0:
        vals = solve_weighted(np.ones(states.shape[0]))
    elif p == 1.0:
        vals = solve_weighted(np.ones(states.shape[0]))  # LS warm start
    else:
        raise ValueError("only p in {1, 2} is supported by the fitter")

    if p == 1.0:
        fitted = ValueFn(prev.dim, prev.grid_size, vals, prev.v_max)
        for _ in range(irls_iters):
            resid = np.abs(fitted(states) - targets)
            w = 1.0 / np.maximum(resid, 1e-6)
            new_vals = solve_weighted(w)
            if np.max(np.abs(new_vals - fitted.values)) < 1e-10:
                fitted.values = new_vals
                break
            fitted.values = new_vals
        vals = fitted.values

    return ValueFn(prev.dim, prev.grid_size, np.clip(vals, 0.0, prev.v_max), prev.v_max)


# ---------------------------------------------------------------------------
# Corruption model and the mixture backup
# ---------------------------------------------------------------------------


def half_normal(sigma: float, rng: SeededRng, size=None) -> np.ndarray:
    """|Z| * sigma with Z standard normal; sigma=0 gives exact zeros."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    return np.abs(rng.normal(size=size)) * sigma


@dataclass
class CorruptedModel:
    """True dynamics plus an isotropic half-normal displacement of scale sigma."""

    mdp: FviMdp
    sigma: float

    def predict(self, states: np.ndarray, a_idx: int, rng: SeededRng) -> np.ndarray:
        true_next = self.mdp.transition(states, a_idx)
        n = true_next.shape[0]
        xi = half_normal(self.sigma, rng, size=n)
        if self.mdp.dim == 1:
            direction = (rng.integers(0, 2, size=(n, 1)) * 2 - 1).astype(np.float64)
        else:
            angle = rng.uniform(0.0, 2.0 * np.pi, size=n)
            direction = np.stack([np.cos(angle), np.sin(angle)], axis=1)
        return np.clip(true_next + xi[:, None] * direction, 0.0, 1.0)


def beta_mixture_backup(value_fn: ValueFn, states: np.ndarray, mdp: FviMdp,
                        corrupted_model: CorruptedModel, beta: float,
                        rng: SeededRng) -> np.ndarray:
    """Targets max_a (r + gamma * V(next)) where next comes from the true
    dynamics w.p. beta and from the corrupted model otherwise.

    The Bernoulli, half-normal, and direction draws are consumed for every
    (state, action) regardless of which branch wins, so sigma=0 runs are
    bit-identical across beta. Rewards are always the true ones; targets are
    clipped to [0, v_max].
    """
    states = np.asarray(states, dtype=np.float64).reshape(-1, mdp.dim)
    n = states.shape[0]
    best = np.full(n, -np.inf)
    for a_idx in range(mdp.n_actions):
        use_real = rng.uniform(size=n) < beta
        model_next = corrupted_model.predict(states, a_idx, rng)
        true_next = mdp.transition(states, a_idx)
        nxt = np.where(use_real[:, None], true_next, model_next)
        vals = mdp.reward(states, a_idx) + mdp.gamma * value_fn(nxt)
        best = np.maximum(best, vals)
    return np.clip(best, 0.0, value_fn.v_max)


# ---------------------------------------------------------------------------
# Exact oracle and greedy-policy evaluation
# ---------------------------------------------------------------------------


@dataclass
class ExactOracle:
    value_fn: ValueFn
    greedy_return: float  # mean return of the oracle-greedy policy from rho


def _truncation_horizon(mdp: FviMdp, tail: float = 1e-4) -> int:
    return int(math.ceil(math.log(tail / mdp.v_max) / math.log(mdp.gamma))) + 1


def greedy_actions(mdp: FviMdp, value_fn: ValueFn, states: np.ndarray) -> np.ndarray:
    """One-step lookahead through the true dynamics."""
    states = np.asarray(states, dtype=np.float64).reshape(-1, mdp.dim)
    scores = np.stack([
        mdp.reward(states, a) + mdp.gamma * value_fn(mdp.transition(states, a))
        for a in range(mdp.n_actions)
    ])
    return scores.argmax(axis=0)


def policy_return(mdp: FviMdp, value_fn: ValueFn, states: np.ndarray,
                  horizon: int | None = None) -> np.ndarray:
    """Discounted true return of the greedy-w.r.t.-value_fn policy, truncated
    once the remaining tail is below 1e-4 of scale."""
    if horizon is None:
        horizon = _truncation_horizon(mdp)
    s = np.asarray(states, dtype=np.float64).reshape(-1, mdp.dim).copy()
    returns = np.zeros(s.shape[0])
    disc = 1.0
    for _ in range(horizon):
        acts = greedy_actions(mdp, value_fn, s)
        nxt = np.empty_like(s)
        r = np.empty(s.shape[0])
        for a_idx in range(mdp.n_actions):
            mask = acts == a_idx
            if mask.any():
                r[mask] = mdp.reward(s[mask], a_idx)
                nxt[mask] = mdp.transition(s[mask], a_idx)
        returns += disc * r
        disc *= mdp.gamma
        s = nxt
    return returns


def exact_vi(mdp: FviMdp, fine_grid_size: int = 256, tol: float = 1e-9,
             n_eval: int = 256, seed: int = 0) -> ExactOracle:
    """Value iteration on a fine grid until the sup-norm change is below tol,
    plus the mean greedy return from rho (uniform) samples."""
    v = ValueFn.zeros(mdp.dim, fine_grid_size, mdp.v_max)
    g = fine_grid_size
    axes = [np.linspace(0.0, 1.0, g)] * mdp.dim
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, mdp.dim)
    rewards = [mdp.reward(mesh, a) for a in range(mdp.n_actions)]
    nexts = [mdp.transition(mesh, a) for a in range(mdp.n_actions)]
    while True:
        backed = np.stack([rewards[a] + mdp.gamma * v(nexts[a])
                           for a in range(mdp.n_actions)]).max(axis=0)
        delta = np.max(np.abs(backed - v.values))
        v.values = backed
        if delta < tol:
            break
    rng = SeededRng.from_seed(seed)
    rho = rng.uniform(size=(n_eval, mdp.dim))
    greedy_ret = float(policy_return(mdp, v, rho).mean())
    return ExactOracle(value_fn=v, greedy_return=greedy_ret)


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------


@dataclass
class FviConfig:
    beta: float = 1.0
    sigma: float = 0.0
    n_states: int = 1024   # sampled states per iteration
    iterations: int = 40
    p: float = 2.0
    grid_size: int = 48
    n_eval: int = 512      # evaluation rollouts from rho
    eval_horizon: int | None = None
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.sigma < 0 or self.n_states < 1 or self.iterations < 0:
            raise ValueError("invalid FVI configuration")


@dataclass
class FviResult:
    value_fn: ValueFn
    discrepancy: float
    config: FviConfig

    def policy(self, mdp: FviMdp):
        vf = self.value_fn
        return lambda states: greedy_actions(mdp, vf, states)


def run_fvi(mdp: FviMdp, config: FviConfig, oracle: ExactOracle | None = None) -> FviResult:
    """K iterations of mixture backup + fit, then the return discrepancy
    (E_rho |V*(s) - V^pi_K(s)|^p)^(1/p) against the oracle, with both returns
    estimated by truncated greedy rollouts through the true dynamics."""
    config.validate()
    if oracle is None:
        oracle = exact_vi(mdp)
    root = SeededRng.from_seed(config.seed)
    state_stream, corrupt_stream, eval_stream = root.split(3)
    model = CorruptedModel(mdp, config.sigma)
    v = ValueFn.zeros(mdp.dim, config.grid_size, mdp.v_max)
    for _ in range(config.iterations):
        states = state_stream.uniform(size=(config.n_states, mdp.dim))
        targets = beta_mixture_backup(v, states, mdp, model, config.beta, corrupt_stream)
        v = fit_value(states, targets, v, p=config.p)
    eval_states = eval_stream.uniform(size=(config.n_eval, mdp.dim))
    horizon = config.eval_horizon or _truncation_horizon(mdp)
    v_star = policy_return(mdp, oracle.value_fn, eval_states, horizon)
    v_pik = policy_return(mdp, v, eval_states, horizon)
    disc = float(np.mean(np.abs(v_star - v_pik) ** config.p) ** (1.0 / config.p))
    return FviResult(value_fn=v, discrepancy=disc, config=config)


def states_per_iteration(n_real: float, beta: float, n_actions: int) -> int:
    """Invert N_real = N * |A| * beta (expected real samples per iteration)."""
    return max(1, int(round(n_real / (beta * n_actions))))


def beta_sweep(mdp: FviMdp, beta_grid, n_real_grid, sigma: float, iterations: int,
               seeds, base: FviConfig | None = None,
               oracle: ExactOracle | None = None,
               n_bootstrap: int = 200, bootstrap_seed: int = 0) -> dict:
    """Full factorial (beta x N_real x seed) sweep.

    Returns rows (beta, n_real, sigma, iterations, seed, discrepancy), a per
    (n_real, beta) mean/std table, the argmin beta per N_real row, and a
    bootstrap-over-seeds estimate of how often the argmin curve is
    non-decreasing in N_real.
    """
    base = base or FviConfig()
    oracle = oracle or exact_vi(mdp)
    seeds = list(seeds)
    beta_grid = list(beta_grid)
    n_real_grid = list(n_real_grid)
    rows = []
    disc = np.zeros((len(n_real_grid), len(beta_grid), len(seeds)))
    for i, n_real in enumerate(n_real_grid):
        for j, beta in enumerate(beta_grid):
            n_states = states_per_iteration(n_real, beta, mdp.n_actions)
            for k, seed in enumerate(seeds):
                cfg = replace(base, beta=beta, sigma=sigma, n_states=n_states,
                              iterations=iterations, seed=seed)
                d = run_fvi(mdp, cfg, oracle).discrepancy
                disc[i, j, k] = d
                rows.append({"beta": beta, "n_real": n_real, "sigma": sigma,
                             "iterations": iterations, "seed": seed,
                             "discrepancy": d})
    mean = disc.mean(axis=2)
    std = disc.std(axis=2)
    argmin_beta = [beta_grid[int(np.argmin(mean[i]))] for i in range(len(n_real_grid))]

    boot = np.random.Generator(np.random.PCG64(bootstrap_seed))
    n_seeds = len(seeds)
    monotone = 0
    for _ in range(n_bootstrap):
        pick = boot.integers(0, n_seeds, size=n_seeds)
        bmean = disc[:, :, pick].mean(axis=2)
        curve = [beta_grid[int(np.argmin(bmean[i]))] for i in range(len(n_real_grid))]
        if all(curve[i] <= curve[i + 1] for i in range(len(curve) - 1)):
            monotone += 1
    return {
        "rows": rows,
        "beta_grid": beta_grid,
        "n_real_grid": n_real_grid,
        "mean": mean,
        "std": std,
        "argmin_beta": argmin_beta,
        "bootstrap_monotone_frac": monotone / n_bootstrap,
    }


def error_histogram_check(sigma: float, n_samples: int, bins: int,
                          rng: SeededRng | None = None) -> dict:
    """Sample half-normal magnitudes, histogram them, and report the
    Kolmogorov-Smirnov distance to the analytic CDF 2*Phi(x/sigma) - 1."""
    rng = rng or SeededRng.from_seed(0)
    x = half_normal(sigma, rng, size=n_samples)
    edges = np.linspace(0.0, max(x.max(), 1e-12), bins + 1)
    counts, edges = np.histogram(x, bins=edges)
    freqs = counts / n_samples
    if sigma == 0.0:
        # degenerate law: point mass at 0, so the distance is 0 iff every
        # sample is exactly 0 (the continuous KS formula does not apply)
        ks = 0.0 if np.all(x == 0.0) else 1.0
    else:
        xs = np.sort(x)
        cdf = erf(xs / (sigma * np.sqrt(2.0)))
        n = len(xs)
        upper = np.max(np.arange(1, n + 1) / n - cdf)
        lower = np.max(cdf - np.arange(0, n) / n)
        ks = float(max(upper, lower))
    return {"edges": edges, "freqs": freqs, "ks_distance": ks, "mean": float(x.mean())}
