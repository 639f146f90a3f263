"""PPO policy over the hyper-MDP.

A one-hidden-layer trunk feeds four categorical heads (3/2/3/3 logits); the
joint log-probability is the sum over active heads. Advantages are the
baseline-relative Monte-Carlo suffix sums, updated with the clipped surrogate
objective plus a decaying entropy bonus.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint, nets
from .hyper_mdp import (HEAD_SIZES, HyperAction, HyperMdpConfig, HyperTrajectory,
                        NEUTRAL_INDICES, run_hyper_episode)
from .nets import AdamState, DenseNet, adam_step
from .rng import SeededRng

logger = logging.getLogger(__name__)


@dataclass
class ControllerPolicy:
    net: DenseNet                   # input -> hidden(256) -> sum(HEAD_SIZES) logits
    head_mask: tuple = (True,) * 4
    feature_mask: tuple = (True,) * 8
    config_hash: str = ""

    @property
    def input_dim(self):
        return self.net.input_dim

    def head_slices(self):
        out, lo = [], 0
        for size in HEAD_SIZES:
            out.append(slice(lo, lo + size))
            lo += size
        return out

    def copy(self):
        return ControllerPolicy(self.net.copy(), tuple(self.head_mask),
                                tuple(self.feature_mask), self.config_hash)


def init_controller(rng: SeededRng, feature_mask=(True,) * 8,
                    head_mask=(True,) * 4, hidden: int = 256,
                    config_hash: str = "") -> ControllerPolicy:
    input_dim = int(np.sum(feature_mask))
    net = nets.init_dense(rng, [input_dim, hidden, sum(HEAD_SIZES)],
                          ["tanh", "identity"])
    return ControllerPolicy(net, tuple(head_mask), tuple(feature_mask), config_hash)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def head_log_probs(policy: ControllerPolicy, states: np.ndarray) -> list:
    """Per-head log-probability tables for a batch of states."""
    logits = nets.forward(policy.net, np.atleast_2d(states))
    return [_log_softmax(logits[:, sl]) for sl in policy.head_slices()]


def controller_act(policy: ControllerPolicy, state: np.ndarray, rng: SeededRng,
                   greedy: bool = False) -> tuple:
    """Sample one factorized action; masked heads emit the neutral op and
    contribute zero to the joint log-prob."""
    state = np.asarray(state, dtype=np.float64)
    if state.shape[-1] != policy.input_dim:
        raise ValueError(f"state dim {state.shape[-1]} != policy input {policy.input_dim}")
    tables = head_log_probs(policy, state[None, :])
    idx, joint = [], 0.0
    for h, (table, active) in enumerate(zip(tables, policy.head_mask)):
        lp = table[0]
        if not active:
            idx.append(NEUTRAL_INDICES[h])
            continue
        if greedy:
            a = int(lp.argmax())
        else:
            a = int(rng.gen.choice(len(lp), p=np.exp(lp)))
        idx.append(a)
        joint += float(lp[a])
    return HyperAction.from_indices(idx, policy.head_mask), joint


def joint_log_prob(policy: ControllerPolicy, states: np.ndarray,
                   action_indices: np.ndarray) -> np.ndarray:
    """Joint log-prob of recorded head indices (active heads only), batched."""
    tables = head_log_probs(policy, states)
    n = np.atleast_2d(states).shape[0]
    out = np.zeros(n)
    for h, (table, active) in enumerate(zip(tables, policy.head_mask)):
        if active:
            out += table[np.arange(n), action_indices[:, h]]
    return out


def advantage(rewards, baseline) -> np.ndarray:
    """Suffix sums of (R_i - R'_i): the return improvement over the default
    configuration from index t onward."""
    rewards = np.asarray(rewards, dtype=np.float64)
    base = np.asarray(baseline, dtype=np.float64)
    if rewards.shape != base.shape:
        raise ValueError(f"rewards length {rewards.shape} != baseline {base.shape}")
    diff = rewards - base
    return np.cumsum(diff[::-1])[::-1].copy()


@dataclass
class PpoConfig:
    clip_eps: float = 0.2
    lr: float = 3e-4
    minibatch: int = 64
    updates_per_round: int = 30
    entropy_coef: float = 0.01
    entropy_decay: float = 0.95     # per PPO round
    normalize_advantages: bool = True

    def validate(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip epsilon must lie in (0, 1)")
        if self.lr <= 0 or self.minibatch < 1 or self.updates_per_round < 1:
            raise ValueError("invalid PPO configuration")


def ppo_loss_and_grads(policy: ControllerPolicy, states, action_indices,
                       old_log_probs, advantages, config: PpoConfig,
                       entropy_coef: float | None = None):
    """Negative clipped surrogate (to minimize) with an entropy bonus.

    Per-sample gradients vanish exactly in the clipped-and-worse regime;
    non-finite ratios drop the sample with a logged count. Returns
    (loss, grads, diagnostics).
    """
    config.validate()
    ent_c = config.entropy_coef if entropy_coef is None else entropy_coef
    states = np.atleast_2d(states)
    n = states.shape[0]
    logits, cache = nets.forward_cache(policy.net, states)
    slices = policy.head_slices()
    logp = np.zeros(n)
    for h, sl in enumerate(slices):
        if policy.head_mask[h]:
            table = _log_softmax(logits[:, sl])
            logp += table[np.arange(n), action_indices[:, h]]
    ratio = np.exp(logp - old_log_probs)
    bad = ~np.isfinite(ratio)
    if bad.any():
        logger.warning("dropping %d samples with non-finite ratios", int(bad.sum()))
        ratio = np.where(bad, 1.0, ratio)
        advantages = np.where(bad, 0.0, advantages)
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps) * advantages
    objective = np.minimum(surr1, surr2)
    # gradient flows only where the unclipped branch realizes the min
    active = (surr1 <= surr2).astype(np.float64)
    d_logp = -(active * ratio * advantages) / n

    upstream = np.zeros_like(logits)
    entropy_total = 0.0
    for h, sl in enumerate(slices):
        if not policy.head_mask[h]:
            continue
        table = _log_softmax(logits[:, sl])
        probs = np.exp(table)
        onehot = np.zeros_like(probs)
        onehot[np.arange(n), action_indices[:, h]] = 1.0
        upstream[:, sl] += d_logp[:, None] * (onehot - probs)
        ent = -(probs * table).sum(axis=1)
        entropy_total += float(ent.mean())
        # d entropy / d logits = -p * (log p + H)
        d_ent = -probs * (table + ent[:, None])
        upstream[:, sl] += -(ent_c / n) * d_ent
    grads, _ = nets.backward_from_cache(policy.net, cache, upstream)
    loss = -float(objective.mean()) - ent_c * entropy_total
    diagnostics = {
        "mean_ratio": float(ratio.mean()),
        "clip_fraction": float((surr2 < surr1).mean()),
        "dropped": int(bad.sum()),
        "entropy": entropy_total,
    }
    return loss, grads, diagnostics


def ppo_update(policy: ControllerPolicy, batch: dict, config: PpoConfig,
               rng: SeededRng, adam: AdamState | None = None,
               entropy_coef: float | None = None) -> dict:
    """updates_per_round minibatch steps over a collected batch; advantages
    are standardized across the batch first (config-disableable)."""
    config.validate()
    adv = np.asarray(batch["advantages"], dtype=np.float64)
    if config.normalize_advantages and adv.std() > 0:
        adv = (adv - adv.mean()) / adv.std()
    states = np.atleast_2d(batch["states"])
    n = states.shape[0]
    adam = adam or AdamState.for_params(policy.net.params(), config.lr)
    diags = []
    for _ in range(config.updates_per_round):
        sel = rng.integers(0, n, size=min(config.minibatch, n))
        loss, grads, d = ppo_loss_and_grads(
            policy, states[sel], batch["action_indices"][sel],
            batch["old_log_probs"][sel], adv[sel], config, entropy_coef)
        policy.net.set_params(adam_step(adam, policy.net.params(), grads))
        d["loss"] = loss
        diags.append(d)
    return {"updates": len(diags),
            "mean_ratio": float(np.mean([d["mean_ratio"] for d in diags])),
            "clip_fraction": float(np.mean([d["clip_fraction"] for d in diags])),
            "dropped": int(np.sum([d["dropped"] for d in diags]))}


@dataclass
class BaselineCurve:
    """Per-index average rewards of default-configuration MBPO runs."""

    values: np.ndarray
    n_seeds: int
    env_name: str
    config_hash: str

    def __len__(self):
        return len(self.values)


def train_controller(env_name: str, mbpo_config, hyper_config: HyperMdpConfig,
                     ppo_config: PpoConfig, baseline: BaselineCurve,
                     n_hyper_episodes: int, seed: int,
                     episodes_per_round: int = 4,
                     policy: ControllerPolicy | None = None) -> tuple:
    """Collect hyper-episodes in rounds, compute baseline-relative advantages,
    and run PPO updates after each round.

    Returns (policy, history) where history holds one record per hyper-episode
    (its reward sum and baseline-relative improvement) plus per-round PPO
    diagnostics; crashed trajectories are excluded and counted.
    """
    ppo_config.validate()
    root = SeededRng.from_seed(seed)
    init_rng, act_rng, upd_rng, seed_rng = root.split(4)
    if policy is None:
        policy = init_controller(init_rng, hyper_config.feature_mask,
                                 hyper_config.head_mask,
                                 config_hash=baseline.config_hash)
    adam = AdamState.for_params(policy.net.params(), ppo_config.lr)
    history = {"episode_returns": [], "improvements": [], "rounds": [],
               "invalid_count": 0}
    ent_coef = ppo_config.entropy_coef
    collected = 0
    while collected < n_hyper_episodes:
        batch_eps = min(episodes_per_round, n_hyper_episodes - collected)
        trajs = []
        for _ in range(batch_eps):
            ep_seed = int(seed_rng.integers(0, 2**31 - 1))
            traj, _ = run_hyper_episode(policy, env_name, mbpo_config,
                                        hyper_config, ep_seed,
                                        controller_rng=act_rng)
            collected += 1
            if traj.valid and len(traj) == len(baseline.values):
                trajs.append(traj)
                history["episode_returns"].append(float(traj.rewards.sum()))
                history["improvements"].append(
                    float((traj.rewards - baseline.values).sum()))
            else:
                history["invalid_count"] += 1
        if not trajs:
            continue
        batch = {
            "states": np.concatenate([t.states for t in trajs]),
            "action_indices": np.concatenate([t.action_indices for t in trajs]),
            "old_log_probs": np.concatenate([t.log_probs for t in trajs]),
            "advantages": np.concatenate(
                [advantage(t.rewards, baseline.values) for t in trajs]),
        }
        diag = ppo_update(policy, batch, ppo_config, upd_rng, adam,
                          entropy_coef=ent_coef)
        ent_coef *= ppo_config.entropy_decay
        history["rounds"].append(diag)
    history["phase_means"] = phase_means(history["episode_returns"])
    return policy, history


def phase_means(returns, n_phases: int = 5) -> list:
    """Mean hyper-episode return per training phase (quintiles by default)."""
    returns = list(returns)
    if not returns:
        return []
    edges = np.linspace(0, len(returns), n_phases + 1).astype(int)
    return [float(np.mean(returns[lo:hi])) if hi > lo else float("nan")
            for lo, hi in zip(edges[:-1], edges[1:])]


def save_controller(policy: ControllerPolicy, path) -> None:
    checkpoint.save(path, checkpoint.net_tensors("controller", policy.net), {
        "kind": "hyper-controller",
        "head_mask": list(policy.head_mask),
        "feature_mask": list(policy.feature_mask),
        "head_sizes": list(HEAD_SIZES),
        "config_hash": policy.config_hash,
    })


def load_controller(path) -> ControllerPolicy:
    tensors, meta = checkpoint.load(path)
    if meta.get("kind") != "hyper-controller":
        raise checkpoint.CheckpointError(f"{path}: not a controller checkpoint")
    feature_mask = tuple(bool(b) for b in meta["feature_mask"])
    head_mask = tuple(bool(b) for b in meta["head_mask"])
    hidden = tensors["controller.layer0.weight"].shape[0]
    net = nets.init_dense(SeededRng.from_seed(0),
                          [int(np.sum(feature_mask)), hidden, sum(HEAD_SIZES)],
                          ["tanh", "identity"])
    checkpoint.load_net("controller", tensors, net)
    return ControllerPolicy(net, head_mask, feature_mask, meta.get("config_hash", ""))


def check_transfer(policy: ControllerPolicy, config_hash: str) -> bool:
    """Warn (not error) when a controller meets a different hyper-MDP config,
    so transfer experiments run but are visibly flagged."""
    if policy.config_hash and config_hash and policy.config_hash != config_hash:
        warnings.warn(
            f"controller trained under config {policy.config_hash[:12]} used "
            f"with config {config_hash[:12]}; transfer results are not "
            "directly comparable", stacklevel=2)
        logger.warning("controller transfer across configs: %s -> %s",
                       policy.config_hash[:12], config_hash[:12])
        return False
    return True
