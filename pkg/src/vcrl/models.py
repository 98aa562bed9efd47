"""Learnable components: encoders, latent transition model, value heads,
policy, projection, and EMA target maintenance.

A ModelBundle owns two ParamSets.  `online` holds everything trained by
gradient descent; `target` holds the gradient-free copies (target encoder
and value heads) that provide learning targets.  All target-side forward
passes run under no_grad, so target parameters can never accumulate
gradients.

Two EMA conventions coexist deliberately. The discrete branch treats tau
as the weight kept on the old target (tau=0 means hard copy, applied every
update); the continuous branch treats tau as the tracking rate (tau=0
means frozen), the usual actor-critic convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import tensor as T
from .numcore.mlp import LayerSpec, forward_mlp, init_mlp
from .numcore.params import ParamSet

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
HALF_LOG_2PI = 0.5 * float(np.log(2.0 * np.pi))

# A latent state is just a (batch, D) tensor in the shared embedding space.
LatentState = T.Tensor


@dataclass
class CategoricalQ:
    """Per-action value distribution over a fixed atom support."""

    atoms: np.ndarray  # (M,)
    probs: np.ndarray  # (num_actions, M), rows sum to 1

    def means(self) -> np.ndarray:
        return self.probs @ self.atoms


class ModelBundle:
    def __init__(self, branch: str, obs_dim: int, num_actions: int, action_dim: int,
                 arch: dict[str, list[LayerSpec]], online: ParamSet, target: ParamSet,
                 atoms: np.ndarray | None = None):
        if branch not in ("discrete", "continuous"):
            raise ValueError(f"unknown branch {branch!r}")
        self.branch = branch
        self.obs_dim = obs_dim
        self.num_actions = num_actions
        self.action_dim = action_dim
        self.arch = arch
        self.online = online
        self.target = target
        self.atoms = atoms
        if branch == "discrete" and atoms is None:
            raise ValueError("discrete bundle requires an atom support")

    @property
    def latent_dim(self) -> int:
        return self.arch["f"][-1].out_dim

    def target_prefixes(self) -> tuple[str, ...]:
        if self.branch == "discrete":
            return ("f.", "q.")
        return ("f.", "proj.", "q1.", "q2.")

    def save(self, online_path, target_path):
        self.online.save(online_path)
        self.target.save(target_path)

    def load(self, online_path, target_path):
        self.online.copy_from(ParamSet.load(online_path))
        self.target.copy_from(ParamSet.load(target_path))


def _encoder_layers(obs_dim: int, hidden: int, latent: int) -> list[LayerSpec]:
    return [LayerSpec(obs_dim, hidden, "relu"), LayerSpec(hidden, latent, "linear")]


def build_discrete_bundle(obs_dim: int, num_actions: int, *, latent_dim: int = 64,
                          hidden_dim: int = 128, num_atoms: int = 21,
                          v_min: float = -1.0, v_max: float = 2.0,
                          rng: np.random.Generator | None = None) -> ModelBundle:
    if num_atoms < 2:
        raise ValueError("need at least two atoms")
    rng = rng if rng is not None else np.random.default_rng(0)
    arch = {
        "f": _encoder_layers(obs_dim, hidden_dim, latent_dim),
        "h": [LayerSpec(latent_dim + num_actions, hidden_dim, "relu"),
              LayerSpec(hidden_dim, latent_dim, "linear")],
        # first q layer doubles as the projection head
        "q": [LayerSpec(latent_dim, hidden_dim, "relu"),
              LayerSpec(hidden_dim, num_actions * num_atoms, "linear")],
    }
    online = ParamSet()
    for name in ("f", "h", "q"):
        init_mlp(online, arch[name], f"{name}.", rng)
    target = online.subset(("f.", "q.")).copy(requires_grad=False)
    atoms = np.linspace(v_min, v_max, num_atoms)
    return ModelBundle("discrete", obs_dim, num_actions, 0, arch, online, target, atoms)


def build_continuous_bundle(obs_dim: int, action_dim: int, *, latent_dim: int = 64,
                            hidden_dim: int = 128,
                            rng: np.random.Generator | None = None) -> ModelBundle:
    rng = rng if rng is not None else np.random.default_rng(0)
    critic = [LayerSpec(latent_dim + action_dim, hidden_dim, "relu"),
              LayerSpec(hidden_dim, 1, "linear")]
    arch = {
        "f": _encoder_layers(obs_dim, hidden_dim, latent_dim),
        # transition: linear -> layer norm -> relu -> linear
        "h": [LayerSpec(latent_dim + action_dim, hidden_dim, "linear"),
              LayerSpec(hidden_dim, latent_dim, "linear")],
        "proj": [LayerSpec(latent_dim, hidden_dim, "linear")],
        "pi": [LayerSpec(latent_dim, hidden_dim, "relu"),
               LayerSpec(hidden_dim, 2 * action_dim, "linear")],
        "q1": critic,
        "q2": [LayerSpec(latent_dim + action_dim, hidden_dim, "relu"),
               LayerSpec(hidden_dim, 1, "linear")],
    }
    online = ParamSet()
    for name in ("f", "h", "proj", "pi", "q1", "q2"):
        init_mlp(online, arch[name], f"{name}.", rng)
    target = online.subset(("f.", "proj.", "q1.", "q2.")).copy(requires_grad=False)
    return ModelBundle("continuous", obs_dim, 0, action_dim, arch, online, target, None)


# --- forward passes -----------------------------------------------------


def encode(bundle: ModelBundle, s, use_target: bool = False) -> LatentState:
    """Map observations (batch, obs_dim) to latents via f or f_T."""
    if use_target:
        with T.no_grad():
            return forward_mlp(bundle.target, bundle.arch["f"], s, "f.")
    return forward_mlp(bundle.online, bundle.arch["f"], s, "f.")


def _layer_norm(h: T.Tensor) -> T.Tensor:
    mean = T.tmean(h, axis=-1, keepdims=True)
    centered = h - mean
    var = T.tmean(centered * centered, axis=-1, keepdims=True)
    return centered / T.sqrt(var + 1e-6)


def one_hot(indices, n: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros(indices.shape + (n,))
    np.put_along_axis(out, indices[..., None], 1.0, axis=-1)
    return out


def transit(bundle: ModelBundle, z: LatentState, action) -> LatentState:
    """One latent step: h(z, a).  Discrete actions are one-hot encoded."""
    if bundle.branch == "discrete":
        a = np.asarray(action)
        if np.any(a < 0) or np.any(a >= bundle.num_actions):
            raise ValueError("action index out of range")
        a_in = one_hot(a.reshape(-1), bundle.num_actions)
        x = T.concat([z, T.Tensor(a_in)], axis=-1)
        return forward_mlp(bundle.online, bundle.arch["h"], x, "h.")
    a_t = action if isinstance(action, T.Tensor) else T.Tensor(np.asarray(action, dtype=np.float64))
    x = T.concat([z, a_t], axis=-1)
    layers = bundle.arch["h"]
    h = forward_mlp(bundle.online, layers[:1], x, "h.")
    h = T.relu(_layer_norm(h))
    return T.linear(h, bundle.online["h.w1"], bundle.online["h.b1"])


def rollout_imagined(bundle: ModelBundle, z0: LatentState, actions) -> list[LatentState]:
    """Recursively imagine K latents from z0 along the given action sequence."""
    if len(actions) == 0:
        raise ValueError("rollout needs at least one action")
    out = []
    z = z0
    for a in actions:
        z = transit(bundle, z, a)
        out.append(z)
    return out


def q_discrete_logp(bundle: ModelBundle, z: LatentState, use_target: bool = False) -> T.Tensor:
    """Log-probabilities over atoms, shape (batch, num_actions, num_atoms)."""
    if bundle.branch != "discrete":
        raise RuntimeError("distributional head is only defined for the discrete branch")
    params = bundle.target if use_target else bundle.online
    if use_target:
        with T.no_grad():
            flat = forward_mlp(params, bundle.arch["q"], z, "q.")
            batch = flat.data.shape[0]
            logits = T.reshape(flat, (batch, bundle.num_actions, len(bundle.atoms)))
            return T.log_softmax(logits, axis=-1)
    flat = forward_mlp(params, bundle.arch["q"], z, "q.")
    batch = flat.data.shape[0]
    logits = T.reshape(flat, (batch, bundle.num_actions, len(bundle.atoms)))
    return T.log_softmax(logits, axis=-1)


def q_discrete_probs(bundle: ModelBundle, z_data: np.ndarray,
                     use_target: bool = False) -> np.ndarray:
    """Graph-free softmax probabilities (batch, num_actions, num_atoms)."""
    if bundle.branch != "discrete":
        raise RuntimeError("distributional head is only defined for the discrete branch")
    params = bundle.target if use_target else bundle.online
    with T.no_grad():
        flat = forward_mlp(params, bundle.arch["q"], z_data, "q.")
    logits = flat.data.reshape(flat.data.shape[0], bundle.num_actions, len(bundle.atoms))
    logits = logits - logits.max(axis=-1, keepdims=True)
    np.exp(logits, out=logits)
    logits /= logits.sum(axis=-1, keepdims=True)
    return logits


def q_discrete(bundle: ModelBundle, z, use_target: bool = False) -> CategoricalQ:
    """Single-state categorical value distribution (no graph)."""
    with T.no_grad():
        logp = q_discrete_logp(bundle, z, use_target)
    probs = np.exp(logp.data)
    if probs.shape[0] != 1:
        raise ValueError("q_discrete expects a single latent; use q_discrete_logp for batches")
    return CategoricalQ(bundle.atoms, probs[0])


def q_continuous(bundle: ModelBundle, z: LatentState, a, which: str = "critic1") -> T.Tensor:
    """Scalar soft-Q estimate, shape (batch, 1)."""
    if bundle.branch != "continuous":
        raise RuntimeError("scalar critics are only defined for the continuous branch")
    heads = {"critic1": ("q1.", bundle.online), "critic2": ("q2.", bundle.online),
             "target1": ("q1.", bundle.target), "target2": ("q2.", bundle.target)}
    if which not in heads:
        raise ValueError(f"unknown critic selector {which!r}")
    prefix, params = heads[which]
    a_t = a if isinstance(a, T.Tensor) else T.Tensor(np.asarray(a, dtype=np.float64))
    if which.startswith("target"):
        with T.no_grad():
            x = T.concat([z, a_t], axis=-1)
            return forward_mlp(params, bundle.arch[prefix[:-1]], x, prefix)
    x = T.concat([z, a_t], axis=-1)
    return forward_mlp(params, bundle.arch[prefix[:-1]], x, prefix)


def policy_forward(bundle: ModelBundle, z: LatentState) -> tuple[T.Tensor, T.Tensor]:
    """Mean and clamped log-std of the pre-squash Gaussian."""
    out = forward_mlp(bundle.online, bundle.arch["pi"], z, "pi.")
    da = bundle.action_dim
    mean = _slice_cols(out, 0, da)
    log_std = _slice_cols(out, da, 2 * da)
    if not np.all(np.isfinite(log_std.data)):
        raise ValueError("policy produced non-finite log-std")
    return mean, T.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)


def _slice_cols(t: T.Tensor, start: int, end: int) -> T.Tensor:
    width = t.data.shape[-1]
    mask = np.zeros((width, end - start))
    mask[start:end] = np.eye(end - start)
    return T.matmul(t, T.Tensor(mask))


def policy_sample(bundle: ModelBundle, z: LatentState,
                  rng: np.random.Generator) -> tuple[T.Tensor, T.Tensor]:
    """Reparameterized tanh-Gaussian action and its log-probability.

    Returns (actions (batch, da), log_prob (batch, 1)); the log-prob
    includes the tanh change-of-variables correction.
    """
    mean, log_std = policy_forward(bundle, z)
    eps = rng.standard_normal(mean.data.shape)
    u = mean + T.exp(log_std) * eps
    a = T.tanh(u)
    # log N(u; mean, std): with u reparameterized the quadratic term reduces
    # to the constant -eps^2/2, which carries exactly zero parameter gradient.
    gauss_const = -0.5 * eps * eps - HALF_LOG_2PI
    # tanh change of variables: log(1 - tanh(u)^2) = 2*(log 2 - u - softplus(-2u))
    correction = 2.0 * (T.LOG2 - u - T.softplus(-2.0 * u))
    logp = T.tsum(T.neg(log_std) + gauss_const - correction, axis=-1, keepdims=True)
    return a, logp


def policy_mean_action(bundle: ModelBundle, z) -> np.ndarray:
    """Deterministic action tanh(mean), used for evaluation."""
    with T.no_grad():
        mean, _ = policy_forward(bundle, z)
        return np.tanh(mean.data)


def ema_update(bundle: ModelBundle, tau_encoder: float, tau_value: float):
    """Blend online parameters into the targets, per-branch convention."""
    for tau in (tau_encoder, tau_value):
        if not 0.0 <= tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if bundle.branch == "discrete":
        w_enc, w_val = 1.0 - tau_encoder, 1.0 - tau_value
        groups = {"f.": w_enc, "q.": w_val}
    else:
        groups = {"f.": tau_encoder, "proj.": tau_encoder,
                  "q1.": tau_value, "q2.": tau_value}
    for prefix, weight in groups.items():
        bundle.target.subset((prefix,)).lerp_from(bundle.online.subset((prefix,)), weight)


def project_latents(bundle: ModelBundle, z: LatentState, use_target: bool = False) -> T.Tensor:
    """Projection used by the latent-consistency loss.

    Discrete branch reuses the first q-head layer; continuous branch has a
    dedicated linear projection.
    """
    params = bundle.target if use_target else bundle.online
    if bundle.branch == "discrete":
        prefix, w, b = "q.", params["q.w0"], params["q.b0"]
    else:
        prefix, w, b = "proj.", params["proj.w0"], params["proj.b0"]
    if use_target:
        with T.no_grad():
            return T.linear(z, w, b)
    return T.linear(z, w, b)
