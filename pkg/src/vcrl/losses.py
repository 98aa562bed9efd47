"""Training objectives: n-step targets, distributional cross-entropy,
latent-consistency (cosine) loss, value-consistency distances with their
ablation variants, actor-critic losses, and the ramped total objective.

Everything target-side is computed under no_grad and enters the losses as
plain arrays, so targets are structurally incapable of carrying gradients.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from . import models
from .numcore import tensor as T

VARIANTS = ("VCR", "MSE", "MSE_A", "SPR_only")

LOG_FLOOR = float(np.log(1e-12))
NORM_FLOOR = 1e-12


class Diagnostics:
    """Counts of numeric edge events (log clamps, zero-norm latents, ...)."""

    def __init__(self):
        self.counts = defaultdict(int)

    def bump(self, key: str, n: int = 1):
        if n:
            self.counts[key] += int(n)

    def get(self, key: str) -> int:
        return self.counts.get(key, 0)

    def reset(self):
        self.counts.clear()


DIAGNOSTICS = Diagnostics()


# --- n-step targets -----------------------------------------------------


def nstep_target_scalar(rewards, bootstrap: float, gamma: float, mask=None) -> float:
    """Discounted n-step return with a bootstrap tail.

    mask truncates the window at an episode end: once a position is masked
    the remaining rewards and the bootstrap are dropped (terminal inside
    the window means there is nothing to bootstrap from).
    """
    rewards = list(rewards)
    if not rewards:
        raise ValueError("empty reward window")
    if mask is None:
        mask = [True] * len(rewards)
    total = 0.0
    for tau, (r, ok) in enumerate(zip(rewards, mask)):
        if not ok:
            return total
        total += gamma**tau * float(r)
    return total + gamma ** len(rewards) * float(bootstrap)


def nstep_components(rewards: np.ndarray, cuts: np.ndarray, valid: np.ndarray,
                     n: int, gamma: float, num_offsets: int):
    """Vectorized n-step pieces for every window offset of a segment batch.

    For each row b and offset k, the window covers transitions k..k+n-1.
    Returns (reward_sum, boot_discount, boot_index, use_boot) arrays of
    shape (B, num_offsets).  A terminal inside the window drops the
    bootstrap; a validity truncation bootstraps early from the last real
    observation (index boot_index, discounted by gamma^steps).
    """
    B, W = rewards.shape
    if W < num_offsets - 1 + n:
        raise ValueError(f"segment window {W} too short for n={n}, offsets={num_offsets}")
    rsum = np.zeros((B, num_offsets))
    bdisc = np.zeros((B, num_offsets))
    bidx = np.zeros((B, num_offsets), dtype=np.int64)
    use_boot = np.zeros((B, num_offsets), dtype=bool)
    for k in range(num_offsets):
        alive = np.ones(B, dtype=bool)
        terminal = np.zeros(B, dtype=bool)
        rs = np.zeros(B)
        boot_at = np.full(B, k, dtype=np.int64)
        disc = np.ones(B)
        for j in range(n):
            trunc_now = alive & ~valid[:, k + j]
            boot_at[trunc_now] = k + j
            disc[trunc_now] = gamma**j
            alive = alive & valid[:, k + j]
            rs[alive] += gamma**j * rewards[alive, k + j]
            terminal |= alive & cuts[:, k + j]
            alive = alive & ~cuts[:, k + j]
        boot_at[alive] = k + n
        disc[alive] = gamma**n
        rsum[:, k] = rs
        bdisc[:, k] = np.where(terminal, 0.0, disc)
        bidx[:, k] = boot_at
        use_boot[:, k] = ~terminal
    return rsum, bdisc, bidx, use_boot


# --- categorical projection ----------------------------------------------


def categorical_project(target, atoms: np.ndarray, gamma: float = 1.0,
                        reward: float = 0.0, distribution: bool = False) -> np.ndarray:
    """Project a Bellman-shifted target onto the fixed atom support.

    Scalar/array targets become point masses split linearly between the two
    neighboring atoms; with distribution=True, `target` is a probability
    table over `atoms` whose shifted atoms are projected with their masses.
    Values are clamped to the support range.
    """
    atoms = np.asarray(atoms)
    if distribution:
        weights = np.asarray(target, dtype=np.float64)
        positions = reward + gamma * np.broadcast_to(atoms, weights.shape)
        return _project(positions, weights, atoms)
    values = np.asarray(target, dtype=np.float64)
    positions = (reward + gamma * values)[..., None]
    weights = np.ones_like(positions)
    return _project(positions, weights, atoms)


def _project(positions: np.ndarray, weights: np.ndarray, atoms: np.ndarray) -> np.ndarray:
    M = len(atoms)
    dz = atoms[1] - atoms[0]
    lead = positions.shape[:-1]
    S = positions.shape[-1]
    pos = positions.reshape(-1, S)
    wts = weights.reshape(-1, S)
    N = pos.shape[0]

    b = (np.clip(pos, atoms[0], atoms[-1]) - atoms[0]) / dz
    lo = np.floor(b).astype(np.int64)
    hi = np.ceil(b).astype(np.int64)
    frac_hi = b - lo
    frac_lo = (hi - b) + (lo == hi)  # exact hits put all mass on lo

    out = np.zeros((N, M))
    rows = np.repeat(np.arange(N), S)
    np.add.at(out, (rows, lo.ravel()), (wts * frac_lo).ravel())
    np.add.at(out, (rows, hi.ravel()), (wts * frac_hi).ravel())
    return out.reshape(lead + (M,))


# --- cross-entropy losses -------------------------------------------------


def _cross_entropy(pred_logp: T.Tensor, target_probs: np.ndarray) -> T.Tensor:
    """-sum target * log pred over the last axis, with the log floored."""
    clamped = (pred_logp.data < LOG_FLOOR) & (target_probs > 0.0)
    DIAGNOSTICS.bump("log_floor_clamps", clamped.sum())
    return T.neg(T.tsum(T.clamp_min(pred_logp, LOG_FLOOR) * target_probs, axis=-1))


def dqn_loss(pred_logp: T.Tensor, target_probs: np.ndarray) -> T.Tensor:
    """Distributional TD loss: cross-entropy of the projected target
    distribution against the online prediction, averaged over the batch."""
    ce = _cross_entropy(pred_logp, np.asarray(target_probs))
    if ce.data.ndim == 0:
        return ce
    return T.tmean(ce)


def spr_loss(imagined, targets, mask=None) -> T.Tensor:
    """Negative cosine similarity between imagined and target projections,
    summed over prediction steps and averaged over the batch.

    Masked steps contribute exactly zero; zero-norm vectors define the
    cosine as 0 and are counted in diagnostics.
    """
    K = len(imagined)
    if K != len(targets):
        raise ValueError("imagined/target step counts differ")
    preds = []
    tgts = []
    batch = None
    for k in range(K):
        pred = imagined[k]
        tgt = np.asarray(targets[k].data if isinstance(targets[k], T.Tensor) else targets[k],
                         dtype=np.float64)
        if pred.data.ndim == 1:
            pred = T.reshape(pred, (1, -1))
            tgt = tgt.reshape(1, -1)
        batch = pred.data.shape[0] if batch is None else batch
        preds.append(pred)
        tgts.append(tgt)
    pred_rows = preds[0] if K == 1 else T.concat(preds, axis=0)
    tgt_rows = np.concatenate(tgts, axis=0)
    if mask is None:
        mask_rows = None
    else:
        m = np.asarray(mask, dtype=np.float64)
        mask_rows = np.concatenate([m[:, k] for k in range(K)])
    return spr_loss_stacked(pred_rows, tgt_rows, mask_rows, batch)


def spr_loss_stacked(pred_rows: T.Tensor, target_rows: np.ndarray, mask_rows,
                     batch_size: int) -> T.Tensor:
    """Row-stacked form of spr_loss: rows are (step, sample) pairs and the
    result is the per-sample sum averaged over batch_size samples."""
    tgt_norm = np.sqrt((target_rows * target_rows).sum(axis=-1))
    pred_norm_data = np.sqrt((pred_rows.data * pred_rows.data).sum(axis=-1))
    ok = (tgt_norm > NORM_FLOOR) & (pred_norm_data > NORM_FLOOR)
    DIAGNOSTICS.bump("zero_norm_latents", (~ok).sum())
    scale = ok.astype(np.float64)
    if mask_rows is not None:
        scale = scale * mask_rows
    unit_tgt = target_rows / np.maximum(tgt_norm, NORM_FLOOR)[..., None]
    dot = T.tsum(pred_rows * unit_tgt, axis=-1)
    norm = T.clamp_min(T.sqrt(T.tsum(pred_rows * pred_rows, axis=-1)), NORM_FLOOR)
    cos = (dot / norm) * scale
    return T.neg(T.tsum(cos)) / float(batch_size)


# --- value-consistency distances ------------------------------------------


def vcr_target_discrete(a_t: np.ndarray, gbar: np.ndarray,
                        q_target_probs: np.ndarray, atoms: np.ndarray) -> np.ndarray:
    """Mixed per-action target table: the taken action's row is the
    projected n-step return; every other row is the target head's
    distribution, untouched.  Pure numpy, hence gradient-free."""
    a_t = np.asarray(a_t, dtype=np.int64)
    out = np.array(q_target_probs, dtype=np.float64, copy=True)
    proj = categorical_project(np.asarray(gbar, dtype=np.float64), atoms)
    idx = a_t.reshape(a_t.shape + (1, 1))
    np.put_along_axis(out, np.broadcast_to(idx, a_t.shape + (1, proj.shape[-1])),
                      proj[..., None, :], axis=-2)
    return out


def vcr_loss_discrete(imagined_logp: T.Tensor, targets: np.ndarray, a_idx: np.ndarray,
                      variant: str = "VCR", mask=None) -> tuple[T.Tensor, T.Tensor]:
    """Cross-entropy value-consistency split into the taken-action part
    (vcr1) and the mean over remaining actions (vcr2).

    `targets` carries the per-variant table: the mixed table for VCR, the
    plain target-head table for MSE / MSE_A.  MSE uses only the taken
    action, so its vcr2 is identically zero.
    """
    if variant not in ("VCR", "MSE", "MSE_A"):
        raise ValueError(f"unknown value-consistency variant {variant!r}")
    B, K, A, M = imagined_logp.data.shape
    ce = _cross_entropy(imagined_logp, np.asarray(targets))  # (B, K, A)
    hot = models.one_hot(a_idx, A)  # (B, K, A)
    m = np.ones((B, K)) if mask is None else np.asarray(mask, dtype=np.float64)

    vcr1 = T.tmean(T.tsum(T.tsum(ce * hot, axis=-1) * m, axis=-1))
    if variant == "MSE" or A < 2:
        vcr2 = T.Tensor(0.0)
    else:
        other = T.tsum(ce * (1.0 - hot), axis=-1) / float(A - 1)
        vcr2 = T.tmean(T.tsum(other * m, axis=-1))
    return vcr1, vcr2


def vcr_loss_continuous(bundle, z_hat, z_tilde, a_real, rewards, s_next, cuts,
                        alpha: float, gamma: float, variant: str = "VCR",
                        num_sampled: int = 2,
                        rng: np.random.Generator | None = None,
                        mask=None) -> tuple[T.Tensor, T.Tensor]:
    """Squared value-consistency for one imagination step of a batch.

    vcr1 aligns Q(z_hat, a_t) with the one-step soft bootstrap target built
    from the real reward (for the MSE / MSE_A ablations: with the target
    critics' value at the real action instead); vcr2 aligns Q(z_hat, a)
    with the target critics' soft values on actions freshly sampled from
    the policy at the target latent.  All targets are gradient-free.
    """
    if variant not in ("VCR", "MSE", "MSE_A"):
        raise ValueError(f"unknown value-consistency variant {variant!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    B = z_hat.data.shape[0]
    a_real = np.asarray(a_real, dtype=np.float64).reshape(B, -1)
    rewards = np.asarray(rewards, dtype=np.float64).reshape(B, 1)
    cuts = np.asarray(cuts, dtype=np.float64).reshape(B, 1)
    m = np.ones((B, 1)) if mask is None else np.asarray(mask, dtype=np.float64).reshape(B, 1)

    def target_q(z, actions):
        return T.minimum(
            models.q_continuous(bundle, z, actions, "target1"),
            models.q_continuous(bundle, z, actions, "target2"),
        ).data

    with T.no_grad():
        if variant == "VCR":
            z_next_online = models.encode(bundle, s_next)
            a_next, logp_next = models.policy_sample(bundle, z_next_online, rng)
            z_next_target = models.encode(bundle, s_next, use_target=True)
            qt = target_q(z_next_target, a_next)
            target1 = rewards + gamma * (1.0 - cuts) * (qt - alpha * logp_next.data)
        else:
            target1 = target_q(z_tilde, a_real)

        sampled, sampled_targets = [], []
        if variant != "MSE":
            for _ in range(num_sampled):
                a_s, logp_s = models.policy_sample(bundle, z_tilde, rng)
                qts = target_q(z_tilde, a_s)
                sampled.append(a_s.data)
                sampled_targets.append(qts - alpha * logp_s.data)

    def online_q(actions):
        q1 = models.q_continuous(bundle, z_hat, actions, "critic1")
        q2 = models.q_continuous(bundle, z_hat, actions, "critic2")
        return q1, q2

    q1, q2 = online_q(a_real)
    d1, d2 = q1 - target1, q2 - target1
    vcr1 = T.tmean((d1 * d1 + d2 * d2) * (0.5 * m))

    if not sampled:
        return vcr1, T.Tensor(0.0)
    acc = None
    for a_s, tgt in zip(sampled, sampled_targets):
        q1s, q2s = online_q(a_s)
        e1, e2 = q1s - tgt, q2s - tgt
        term = (e1 * e1 + e2 * e2) * (0.5 * m)
        acc = term if acc is None else acc + term
    vcr2 = T.tmean(acc) / float(num_sampled)
    return vcr1, vcr2


# --- actor-critic losses ---------------------------------------------------


@dataclass
class SACBatch:
    observations: np.ndarray       # (B, obs_dim)
    actions: np.ndarray            # (B, action_dim)
    rewards: np.ndarray            # (B,)
    next_observations: np.ndarray  # (B, obs_dim)
    cuts: np.ndarray               # (B,) bootstrap-cut flags


def sac_critic_loss(batch: SACBatch, bundle, alpha: float, gamma: float,
                    rng: np.random.Generator) -> T.Tensor:
    """Twin-critic TD loss against the gradient-free soft target."""
    B = batch.observations.shape[0]
    r = batch.rewards.reshape(B, 1)
    d = batch.cuts.astype(np.float64).reshape(B, 1)
    with T.no_grad():
        z_next = models.encode(bundle, batch.next_observations)
        a_next, logp_next = models.policy_sample(bundle, z_next, rng)
        z_next_t = models.encode(bundle, batch.next_observations, use_target=True)
        qt = T.minimum(
            models.q_continuous(bundle, z_next_t, a_next, "target1"),
            models.q_continuous(bundle, z_next_t, a_next, "target2"),
        ).data
        y = r + gamma * (1.0 - d) * (qt - alpha * logp_next.data)

    z = models.encode(bundle, batch.observations)
    q1 = models.q_continuous(bundle, z, batch.actions, "critic1")
    q2 = models.q_continuous(bundle, z, batch.actions, "critic2")
    e1, e2 = q1 - y, q2 - y
    return T.tmean(e1 * e1 + e2 * e2)


def sac_actor_and_alpha_loss(batch: SACBatch, bundle, log_alpha: T.Tensor,
                             target_entropy: float,
                             rng: np.random.Generator) -> tuple[T.Tensor, T.Tensor]:
    """Reparameterized policy loss and the temperature loss.

    The encoder is deliberately outside the actor's gradient path (the
    critic loss owns representation learning).
    """
    with T.no_grad():
        z = models.encode(bundle, batch.observations)
    a, logp = models.policy_sample(bundle, z, rng)
    qmin = T.minimum(
        models.q_continuous(bundle, z, a, "critic1"),
        models.q_continuous(bundle, z, a, "critic2"),
    )
    alpha = float(np.exp(log_alpha.data))
    actor_loss = T.tmean(logp * alpha - qmin)
    alpha_loss = T.tmean(T.neg(T.exp(log_alpha)) * (logp.data + target_entropy))
    return actor_loss, alpha_loss


# --- schedules and the total objective -------------------------------------


def lambda_rampup(step: int, warm_steps: int, lambda_max: float) -> float:
    """Gaussian ramp from ~0 to lambda_max over the first warm_steps."""
    if warm_steps <= 0:
        raise ValueError("warm_steps must be positive")
    frac = min(step, warm_steps) / warm_steps
    return lambda_max * float(np.exp(-5.0 * (1.0 - frac) ** 2))


@dataclass
class LossBreakdown:
    rl_loss: float
    spr_loss: float
    vcr1_loss: float
    vcr2_loss: float
    total: float
    lambda_spr: float
    lambda_vcr: float
    lambda_vcr2: float


def total_loss(parts, lambdas) -> LossBreakdown:
    """Combine (rl, spr, vcr1, vcr2) with weights (spr, vcr, vcr2)."""
    rl, spr, vcr1, vcr2 = (float(p) for p in parts)
    l_spr, l_vcr, l_vcr2 = (float(w) for w in lambdas)
    for w in (l_spr, l_vcr, l_vcr2):
        if w < 0.0:
            raise ValueError("loss weights must be nonnegative")
    total = rl + l_spr * spr + l_vcr * vcr1 + l_vcr2 * vcr2
    return LossBreakdown(rl, spr, vcr1, vcr2, total, l_spr, l_vcr, l_vcr2)
