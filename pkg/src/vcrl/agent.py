"""Training loops for the discrete (distributional Q-learning) and
continuous (soft actor-critic) branches, plus the run driver that
interleaves environment steps, gradient updates, and evaluation probes.

The discrete branch optimizes one joint objective with a single Adam; the
continuous branch keeps four optimizers (critic, actor, temperature, and
the latent/value-consistency step) and its own update cadences.
"""

from __future__ import annotations

import contextlib
import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    def threadpool_limits(limits=None):
        return contextlib.nullcontext()

from . import envs, evaluation, losses, models
from .numcore import tensor as T
from .numcore.optim import AdamState, adam_step
from .numcore.params import ParamSet, clip_grad_norm
from .replay import ReplayBuffer, Transition


@dataclass
class AugmentSpec:
    enabled: bool = False
    shift_pixels: int = 1
    intensity_scale: float = 0.05

    def __post_init__(self):
        if self.shift_pixels < 0:
            raise ValueError("shift_pixels must be >= 0")


@dataclass
class AgentConfig:
    env: str = "chain"
    variant: str = "VCR"
    seed: int = 1
    # environment parameters
    chain_length: int = 8
    chain_limit: int = 50
    grid_size: int = 7
    p_slip: float = 0.1
    grid_limit: int = 50
    pointmass_length: int = 200
    action_repeat: int = 1
    frame_stack: int = 1
    # model dimensions
    latent_dim: int = 64
    hidden_dim: int = 128
    num_atoms: int = 21
    v_min: float = -1.0
    v_max: float = 2.0
    # optimization
    K: int = 5
    n: int = 3
    gamma: float = 0.99
    batch_size: int = 32
    sac_batch_size: int = 128
    vcr_batch_size: int = 32
    num_sampled_actions: int = 2
    learning_rate: float = 1e-3
    alpha_lr: float = 1e-3
    init_temperature: float = 0.1
    max_grad_norm: float = 10.0
    lambda_spr: float = 1.0
    lambda_vcr: float = 0.2
    lambda_vcr2: float = -1.0       # -1 resolves to lambda_vcr / 10
    warmup_steps: int = 0           # 0 resolves to total_env_steps // 2
    tau_encoder: float = 0.0
    tau_value: float = 0.0
    target_update_period: int = 1
    critic_target_update_freq: int = 2
    actor_update_freq: int = 2
    updates_per_step: int = 2
    replay_capacity: int = 20_000
    min_fill: int = 500
    total_env_steps: int = 20_000
    eval_interval: int = 1000
    eval_episodes: int = 5
    probe_len: int = 200
    epsilon_start: float = 1.0
    epsilon_end: float = 0.02
    epsilon_fraction: float = 0.1
    augment: AugmentSpec = field(default_factory=AugmentSpec)

    def __post_init__(self):
        if isinstance(self.augment, dict):
            self.augment = AugmentSpec(**self.augment)
        if self.env not in envs.ENV_NAMES:
            raise ValueError(f"unknown env {self.env!r}")
        if self.variant not in losses.VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.K < 1 or self.n < 1:
            raise ValueError("K and n must be >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        for name in ("learning_rate", "alpha_lr"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.seed < 1:
            raise ValueError("seed must be >= 1")

    @property
    def effective_lambda_vcr(self) -> float:
        return 0.0 if self.variant == "SPR_only" else self.lambda_vcr

    @property
    def effective_lambda_vcr2(self) -> float:
        base = self.lambda_vcr2 if self.lambda_vcr2 >= 0.0 else self.lambda_vcr / 10.0
        return 0.0 if self.variant == "SPR_only" else base

    @property
    def effective_warmup(self) -> int:
        return self.warmup_steps if self.warmup_steps > 0 else max(self.total_env_steps // 2, 1)

    def make_env(self, seed: int):
        return envs.make_env(
            self.env, seed,
            chain_length=self.chain_length, chain_limit=self.chain_limit,
            grid_size=self.grid_size, p_slip=self.p_slip, grid_limit=self.grid_limit,
            pointmass_length=self.pointmass_length,
            action_repeat=self.action_repeat, frame_stack=self.frame_stack,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        return out


# --- augmentation ---------------------------------------------------------


def augment(observation: np.ndarray, spec: AugmentSpec, rng: np.random.Generator,
            image_shape=None) -> np.ndarray:
    """Random shift (zero-pad then crop back) plus global intensity scaling.

    Applies to flat image observations; identity when disabled.
    """
    if not spec.enabled:
        return observation
    single = observation.ndim == 1
    batch = observation.reshape(1, -1) if single else observation
    out = _augment_batch(batch, spec, rng, image_shape)
    return out[0] if single else out


def _augment_batch(batch: np.ndarray, spec: AugmentSpec, rng: np.random.Generator,
                   image_shape=None) -> np.ndarray:
    N, dim = batch.shape
    if image_shape is None:
        side = int(round(np.sqrt(dim)))
        if side * side != dim:
            raise ValueError(f"observation of length {dim} is not a square image")
        image_shape = (side, side)
    H, W = image_shape
    images = batch.reshape(N, H, W)
    p = spec.shift_pixels
    if p > 0:
        padded = np.zeros((N, H + 2 * p, W + 2 * p))
        padded[:, p : p + H, p : p + W] = images
        dr = rng.integers(0, 2 * p + 1, size=N)
        dc = rng.integers(0, 2 * p + 1, size=N)
        rows = dr[:, None] + np.arange(H)[None, :]
        cols = dc[:, None] + np.arange(W)[None, :]
        images = padded[np.arange(N)[:, None, None], rows[:, :, None], cols[:, None, :]]
    if spec.intensity_scale > 0.0:
        noise = np.clip(rng.standard_normal(N), -2.0, 2.0)
        images = images * (1.0 + spec.intensity_scale * noise)[:, None, None]
    return images.reshape(N, dim)


# --- action selection -----------------------------------------------------


def epsilon_schedule(step: int, total_steps: int, start: float = 1.0,
                     end: float = 0.02, fraction: float = 0.1) -> float:
    """Linear anneal from start to end over the first `fraction` of steps."""
    horizon = max(int(total_steps * fraction), 1)
    if step >= horizon:
        return end
    return start + (end - start) * (step / horizon)


def act_discrete(bundle: models.ModelBundle, observation: np.ndarray,
                 epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over distribution means; ties break to the lowest index."""
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(bundle.num_actions))
    with T.no_grad():
        z = models.encode(bundle, observation.reshape(1, -1))
        dist = models.q_discrete(bundle, z)
    return int(np.argmax(dist.means()))


def act_continuous(bundle: models.ModelBundle, observation: np.ndarray,
                   rng: np.random.Generator, deterministic: bool = False) -> np.ndarray:
    with T.no_grad():
        z = models.encode(bundle, observation.reshape(1, -1))
        if deterministic:
            return models.policy_mean_action(bundle, z)[0]
        a, _ = models.policy_sample(bundle, z, rng)
        return a.data[0]


# --- runtime state ---------------------------------------------------------


@dataclass
class RunState:
    cfg: AgentConfig
    bundle: models.ModelBundle
    buffer: ReplayBuffer
    env: object
    eval_env: object
    rng_explore: np.random.Generator
    rng_replay: np.random.Generator
    rng_augment: np.random.Generator
    rng_policy: np.random.Generator
    rng_vcr: np.random.Generator
    adam: AdamState | None = None           # discrete joint optimizer
    adam_critic: AdamState | None = None
    adam_actor: AdamState | None = None
    adam_alpha: AdamState | None = None
    adam_vcr: AdamState | None = None
    critic_params: ParamSet | None = None
    actor_params: ParamSet | None = None
    alpha_params: ParamSet | None = None
    vcr_params: ParamSet | None = None
    log_alpha: T.Tensor | None = None
    env_step: int = 0
    update_count: int = 0
    image_shape: tuple | None = None

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data)) if self.log_alpha is not None else 0.0


def build_run_state(cfg: AgentConfig) -> RunState:
    seq = np.random.SeedSequence(cfg.seed)
    (seed_env, seed_eval, seed_init, seed_explore, seed_replay,
     seed_augment, seed_policy, seed_vcr) = seq.spawn(8)
    env = cfg.make_env(int(seed_env.generate_state(1)[0]) % (2**31))
    eval_env = cfg.make_env(int(seed_eval.generate_state(1)[0]) % (2**31))
    init_rng = np.random.default_rng(seed_init)

    obs_dim = env.spec.observation_dim
    if envs.is_discrete(env):
        bundle = models.build_discrete_bundle(
            obs_dim, env.spec.action_space.n, latent_dim=cfg.latent_dim,
            hidden_dim=cfg.hidden_dim, num_atoms=cfg.num_atoms,
            v_min=cfg.v_min, v_max=cfg.v_max, rng=init_rng)
    else:
        bundle = models.build_continuous_bundle(
            obs_dim, env.spec.action_space.dim, latent_dim=cfg.latent_dim,
            hidden_dim=cfg.hidden_dim, rng=init_rng)

    rt = RunState(
        cfg=cfg, bundle=bundle,
        buffer=ReplayBuffer(cfg.replay_capacity, cfg.min_fill),
        env=env, eval_env=eval_env,
        rng_explore=np.random.default_rng(seed_explore),
        rng_replay=np.random.default_rng(seed_replay),
        rng_augment=np.random.default_rng(seed_augment),
        rng_policy=np.random.default_rng(seed_policy),
        rng_vcr=np.random.default_rng(seed_vcr),
        image_shape=None,
    )
    side = envs.image_side(env)
    if side is not None:
        rt.image_shape = (side, side)

    if bundle.branch == "discrete":
        rt.adam = AdamState(bundle.online, lr=cfg.learning_rate)
    else:
        rt.critic_params = bundle.online.subset(("f.", "q1.", "q2."))
        rt.actor_params = bundle.online.subset(("pi.",))
        rt.vcr_params = bundle.online.subset(("f.", "h.", "proj.", "q1.", "q2."))
        rt.alpha_params = ParamSet()
        rt.log_alpha = rt.alpha_params.add("log_alpha", np.log(cfg.init_temperature))
        rt.adam_critic = AdamState(rt.critic_params, lr=cfg.learning_rate)
        rt.adam_actor = AdamState(rt.actor_params, lr=cfg.learning_rate)
        rt.adam_alpha = AdamState(rt.alpha_params, lr=cfg.alpha_lr, beta1=0.5)
        rt.adam_vcr = AdamState(rt.vcr_params, lr=cfg.learning_rate)
    return rt


def _stack_segments(segments):
    obs = np.stack([s.observations for s in segments])
    actions = np.stack([s.actions for s in segments])
    rewards = np.stack([s.rewards for s in segments])
    cuts = np.stack([s.done_flags for s in segments])
    valid = np.stack([s.valid_mask for s in segments])
    return obs, actions, rewards, cuts, valid


# --- discrete branch --------------------------------------------------------


def train_step_discrete(rt: RunState, cfg: AgentConfig) -> losses.LossBreakdown:
    bundle = rt.bundle
    K, n = cfg.K, cfg.n
    A, M = bundle.num_actions, len(bundle.atoms)
    atoms = bundle.atoms

    obs, actions, rewards, cuts, valid = rt.buffer.sample_segment_batch(
        cfg.batch_size, K, n, rt.rng_replay)
    B, W = actions.shape  # W == K + n

    if cfg.augment.enabled and rt.image_shape is not None:
        flat = obs.reshape(B * (W + 1), -1)
        obs = _augment_batch(flat, cfg.augment, rt.rng_augment, rt.image_shape).reshape(obs.shape)

    # target-side quantities, fully outside the graph
    with T.no_grad():
        flat_obs = obs.reshape(B * (W + 1), -1)
        z_targets = models.encode(bundle, flat_obs, use_target=True)
        probs_t = models.q_discrete_probs(bundle, z_targets.data, use_target=True)
        # projections are only needed at the imagined positions, k-major
        rows = (np.arange(1, K + 1)[:, None] + np.arange(B)[None, :] * (W + 1)).reshape(-1)
        proj_rows = models.project_latents(bundle, T.Tensor(z_targets.data[rows]),
                                           use_target=True)
    probs_t = probs_t.reshape(B, W + 1, A, M)
    means_t = probs_t @ atoms
    a_star = means_t.argmax(axis=-1)
    best_mean = np.take_along_axis(means_t, a_star[..., None], axis=-1)[..., 0]
    best_probs = np.take_along_axis(probs_t, a_star[..., None, None], axis=2)[:, :, 0, :]

    rsum, bdisc, bidx, _ = losses.nstep_components(rewards, cuts, valid, n, cfg.gamma, K + 1)
    boot_mean = np.take_along_axis(best_mean, bidx, axis=1)
    gbar = rsum + bdisc * boot_mean  # scalar n-step targets, one per offset

    boot_probs0 = np.take_along_axis(best_probs, bidx[:, 0][:, None, None], axis=1)[:, 0, :]
    dqn_target = losses.categorical_project(
        boot_probs0, atoms, gamma=bdisc[:, 0][:, None], reward=rsum[:, 0][:, None],
        distribution=True)

    # online graph: encode the head, imagine K latents, one shared value pass
    z0 = models.encode(bundle, obs[:, 0])
    imagined = models.rollout_imagined(bundle, z0, [actions[:, k] for k in range(K)])
    stacked = T.concat(imagined, axis=0)  # (K*B, D), k-major
    logp_head = models.q_discrete_logp(bundle, z0)
    logp_imag = models.q_discrete_logp(bundle, stacked)
    logp_imag = T.transpose(T.reshape(logp_imag, (K, B, A, M)), (1, 0, 2, 3))

    hot0 = models.one_hot(actions[:, 0], A)
    pred_row = T.tsum(logp_head * hot0[:, :, None], axis=1)
    rl = losses.dqn_loss(pred_row, dqn_target)

    proj_online = models.project_latents(bundle, stacked)
    mask_rows = valid[:, :K].T.reshape(K * B).astype(np.float64)
    spr = losses.spr_loss_stacked(proj_online, proj_rows.data, mask_rows, B)

    lam_vcr = losses.lambda_rampup(rt.env_step, cfg.effective_warmup, cfg.effective_lambda_vcr)
    lam_vcr2 = losses.lambda_rampup(rt.env_step, cfg.effective_warmup, cfg.effective_lambda_vcr2)

    if cfg.variant == "SPR_only":
        total_t = rl + cfg.lambda_spr * spr
        vcr1_val = vcr2_val = 0.0
    else:
        vcr_mask = valid[:, 1 : K + 1]
        a_imag = actions[:, 1 : K + 1]
        if cfg.variant == "VCR":
            targets = losses.vcr_target_discrete(a_imag, gbar[:, 1:], probs_t[:, 1 : K + 1], atoms)
        else:  # MSE / MSE_A align against the target head's own table
            targets = probs_t[:, 1 : K + 1]
        vcr1, vcr2 = losses.vcr_loss_discrete(logp_imag, targets, a_imag, cfg.variant, vcr_mask)
        total_t = rl + cfg.lambda_spr * spr + lam_vcr * vcr1 + lam_vcr2 * vcr2
        vcr1_val, vcr2_val = vcr1.item(), vcr2.item()

    bundle.online.zero_grads()
    total_t.backward()
    clip_grad_norm(bundle.online, cfg.max_grad_norm)
    adam_step(rt.adam, bundle.online)
    rt.update_count += 1
    if rt.update_count % cfg.target_update_period == 0:
        models.ema_update(bundle, cfg.tau_encoder, cfg.tau_value)

    return losses.total_loss((rl.item(), spr.item(), vcr1_val, vcr2_val),
                             (cfg.lambda_spr, lam_vcr, lam_vcr2))


# --- continuous branch -------------------------------------------------------


def train_step_continuous(rt: RunState, cfg: AgentConfig) -> losses.LossBreakdown:
    bundle = rt.bundle
    K = cfg.K
    gamma = cfg.gamma
    target_entropy = -float(bundle.action_dim)

    # critic update on its own batch
    batch = _sample_sac_batch(rt, cfg.sac_batch_size)
    critic_loss = losses.sac_critic_loss(batch, bundle, rt.alpha, gamma, rt.rng_policy)
    bundle.online.zero_grads()
    critic_loss.backward()
    clip_grad_norm(rt.critic_params, cfg.max_grad_norm)
    adam_step(rt.adam_critic, rt.critic_params)

    rt.update_count += 1
    if rt.update_count % cfg.actor_update_freq == 0:
        actor_loss, alpha_loss = losses.sac_actor_and_alpha_loss(
            batch, bundle, rt.log_alpha, target_entropy, rt.rng_policy)
        bundle.online.zero_grads()
        actor_loss.backward()
        clip_grad_norm(rt.actor_params, cfg.max_grad_norm)
        adam_step(rt.adam_actor, rt.actor_params)
        rt.alpha_params.zero_grads()
        alpha_loss.backward()
        adam_step(rt.adam_alpha, rt.alpha_params)

    # latent-consistency + value-consistency step on its own batch
    obs, actions, rewards, cuts, valid = rt.buffer.sample_segment_batch(
        cfg.vcr_batch_size, K, 1, rt.rng_replay)
    B = obs.shape[0]

    with T.no_grad():
        flat_obs = obs.reshape(B * (K + 2), -1)
        z_t_flat = models.encode(bundle, flat_obs, use_target=True)
        rows = (np.arange(1, K + 1)[:, None] + np.arange(B)[None, :] * (K + 2)).reshape(-1)
        proj_rows = models.project_latents(bundle, T.Tensor(z_t_flat.data[rows]),
                                           use_target=True)
    z_t_all = z_t_flat.data.reshape(B, K + 2, -1)

    z0 = models.encode(bundle, obs[:, 0])
    imagined = models.rollout_imagined(bundle, z0, [actions[:, k] for k in range(K)])
    stacked = T.concat(imagined, axis=0)
    proj_online = models.project_latents(bundle, stacked)
    mask_rows = valid[:, :K].T.reshape(K * B).astype(np.float64)
    spr = losses.spr_loss_stacked(proj_online, proj_rows.data, mask_rows, B)

    lam_vcr = losses.lambda_rampup(rt.env_step, cfg.effective_warmup, cfg.effective_lambda_vcr)
    lam_vcr2 = losses.lambda_rampup(rt.env_step, cfg.effective_warmup, cfg.effective_lambda_vcr2)

    if cfg.variant == "SPR_only":
        joint = cfg.lambda_spr * spr
        vcr1_val = vcr2_val = 0.0
    else:
        # all K imagination steps as one row batch (k-major, matching `stacked`),
        # then scale the row mean back to a per-sample sum over k
        def rows_of(arr):
            moved = np.moveaxis(arr[:, 1 : K + 1], 1, 0)
            return moved.reshape((K * B,) + arr.shape[2:])

        next_rows = np.moveaxis(obs[:, 2 : K + 2], 1, 0).reshape(K * B, -1)
        v1, v2 = losses.vcr_loss_continuous(
            bundle, stacked, T.Tensor(z_t_all[:, 1 : K + 1].transpose(1, 0, 2).reshape(K * B, -1)),
            rows_of(actions), rows_of(rewards), next_rows, rows_of(cuts),
            rt.alpha, gamma, variant=cfg.variant,
            num_sampled=cfg.num_sampled_actions, rng=rt.rng_vcr,
            mask=rows_of(valid.astype(np.float64)))
        vcr1 = v1 * float(K)
        vcr2 = v2 * float(K)
        joint = cfg.lambda_spr * spr + lam_vcr * vcr1 + lam_vcr2 * vcr2
        vcr1_val, vcr2_val = vcr1.item(), vcr2.item()

    bundle.online.zero_grads()
    joint.backward()
    clip_grad_norm(rt.vcr_params, cfg.max_grad_norm)
    adam_step(rt.adam_vcr, rt.vcr_params)

    if rt.update_count % cfg.critic_target_update_freq == 0:
        models.ema_update(bundle, cfg.tau_encoder, cfg.tau_value)

    return losses.total_loss((critic_loss.item(), spr.item(), vcr1_val, vcr2_val),
                             (cfg.lambda_spr, lam_vcr, lam_vcr2))


def _sample_sac_batch(rt: RunState, batch_size: int) -> losses.SACBatch:
    obs, actions, rewards, cuts, _ = rt.buffer.sample_segment_batch(
        batch_size, 1, 1, rt.rng_replay)
    return losses.SACBatch(
        observations=obs[:, 0],
        actions=actions[:, 0].reshape(batch_size, -1).astype(np.float64),
        rewards=rewards[:, 0],
        next_observations=obs[:, 1],
        cuts=cuts[:, 0],
    )


# --- evaluation and the run driver ------------------------------------------


def greedy_episode(env, bundle: models.ModelBundle) -> evaluation.EvalTrajectory:
    """Roll one episode with the greedy/deterministic policy on clean observations."""
    obs_list = [env.reset()]
    actions, rewards = [], []
    done = False
    cut = False
    while not done:
        if bundle.branch == "discrete":
            a = act_discrete(bundle, obs_list[-1], 0.0, _NULL_RNG)
        else:
            with T.no_grad():
                z = models.encode(bundle, obs_list[-1].reshape(1, -1))
                a = models.policy_mean_action(bundle, z)[0]
        sr = env.step(a)
        actions.append(a)
        rewards.append(sr.reward)
        obs_list.append(sr.observation)
        done, cut = sr.done, sr.cut
    bootstrap = None
    if not cut:  # time-limit truncation: bootstrap from the final observation
        with T.no_grad():
            z_last = models.encode(bundle, obs_list[-1].reshape(1, -1))
            if bundle.branch == "discrete":
                bootstrap = float(np.max(models.q_discrete(bundle, z_last).means()))
            else:
                a_last = models.policy_mean_action(bundle, z_last)
                q1 = models.q_continuous(bundle, z_last, a_last, "critic1").data
                q2 = models.q_continuous(bundle, z_last, a_last, "critic2").data
                bootstrap = float(np.minimum(q1, q2)[0, 0])
    return evaluation.EvalTrajectory(
        observations=np.stack(obs_list),
        actions=np.array(actions),
        rewards=np.array(rewards),
        terminal_bootstrap=bootstrap,
    )


_NULL_RNG = np.random.default_rng(0)  # epsilon=0 paths never draw from it


@dataclass
class RunArtifacts:
    run_dir: str
    metrics_path: str
    qerror_path: str
    config_path: str
    checkpoint_paths: tuple[str, str]
    final_return: float
    final_hns: float
    env_spec: envs.EnvSpec


class TrainingDiverged(RuntimeError):
    pass


def run_training(cfg: AgentConfig, run_dir: str) -> RunArtifacts:
    """Execute one seeded training run, writing metrics.csv / qerror.csv /
    checkpoints into run_dir.  Partial metrics are flushed if anything fails."""
    # the workload is thousands of tiny matmuls; multithreaded BLAS only adds
    # synchronization overhead here
    with threadpool_limits(limits=1):
        return _run_training_inner(cfg, run_dir)


def _run_training_inner(cfg: AgentConfig, run_dir: str) -> RunArtifacts:
    os.makedirs(run_dir, exist_ok=True)
    ckpt_dir = os.path.join(run_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)

    rt = build_run_state(cfg)
    discrete = rt.bundle.branch == "discrete"
    train_step = train_step_discrete if discrete else train_step_continuous

    config_path = os.path.join(run_dir, "config.json")
    with open(config_path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)

    metrics_rows: list[list] = []
    qerror_rows: list[list] = []
    final_return = float("nan")

    def run_eval():
        nonlocal final_return
        trajs = [greedy_episode(rt.eval_env, rt.bundle) for _ in range(cfg.eval_episodes)]
        mean_return = float(np.mean([t.undiscounted_return for t in trajs]))
        probe, steps = [], 0
        for tr in trajs:
            probe.append(tr)
            steps += len(tr)
            if steps >= cfg.probe_len:
                break
        qe = evaluation.q_error_pooled(rt.bundle, probe, cfg.K, cfg.gamma)
        metrics_rows.append(["eval", rt.env_step, rt.update_count,
                             "", "", "", "", "", "", "", "", repr(mean_return)])
        qerror_rows.append([rt.env_step, repr(qe), repr(mean_return), cfg.seed])
        final_return = mean_return

    metrics_path = os.path.join(run_dir, "metrics.csv")
    qerror_path = os.path.join(run_dir, "qerror.csv")
    try:
        run_eval()
        obs = rt.env.reset()
        for step in range(1, cfg.total_env_steps + 1):
            rt.env_step = step
            if discrete:
                if len(rt.buffer) < cfg.min_fill:
                    action = int(rt.rng_explore.integers(rt.bundle.num_actions))
                else:
                    eps = epsilon_schedule(step, cfg.total_env_steps, cfg.epsilon_start,
                                           cfg.epsilon_end, cfg.epsilon_fraction)
                    action = act_discrete(rt.bundle, obs, eps, rt.rng_explore)
            else:
                if len(rt.buffer) < cfg.min_fill:
                    action = rt.rng_explore.uniform(-1.0, 1.0, size=rt.bundle.action_dim)
                else:
                    action = act_continuous(rt.bundle, obs, rt.rng_explore)
            sr = rt.env.step(action)
            rt.buffer.push(Transition(obs, action, sr.reward, sr.observation, sr.done, sr.cut))
            obs = rt.env.reset() if sr.done else sr.observation

            if len(rt.buffer) >= cfg.min_fill:
                for _ in range(cfg.updates_per_step):
                    breakdown = train_step(rt, cfg)
                    if not np.isfinite(breakdown.total):
                        raise TrainingDiverged(
                            f"non-finite loss at env step {step}: {breakdown}")
                    aux = (epsilon_schedule(step, cfg.total_env_steps, cfg.epsilon_start,
                                            cfg.epsilon_end, cfg.epsilon_fraction)
                           if discrete else rt.alpha)
                    metrics_rows.append([
                        "update", step, rt.update_count,
                        repr(breakdown.rl_loss), repr(breakdown.spr_loss),
                        repr(breakdown.vcr1_loss), repr(breakdown.vcr2_loss),
                        repr(breakdown.total), repr(breakdown.lambda_vcr),
                        repr(breakdown.lambda_vcr2), repr(float(aux)), "",
                    ])
            if step % cfg.eval_interval == 0:
                run_eval()
    finally:
        _write_csv(metrics_path, METRICS_HEADER, metrics_rows)
        _write_csv(qerror_path, QERROR_HEADER, qerror_rows)

    online_path = os.path.join(ckpt_dir, "online.vcrp")
    target_path = os.path.join(ckpt_dir, "target.vcrp")
    rt.bundle.save(online_path, target_path)

    spec = rt.env.spec
    final_hns = evaluation.hns(final_return, spec.random_score, spec.optimal_score)
    return RunArtifacts(run_dir, metrics_path, qerror_path, config_path,
                        (online_path, target_path), final_return, final_hns, spec)


METRICS_HEADER = ["kind", "env_step", "update", "rl_loss", "spr_loss", "vcr1_loss",
                  "vcr2_loss", "total_loss", "lambda_vcr", "lambda_vcr2", "aux",
                  "eval_return"]
QERROR_HEADER = ["step", "q_error", "mean_return", "seed"]


def _write_csv(path: str, header: list[str], rows: list[list]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
