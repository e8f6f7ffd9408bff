"""Representation-conditioned equivariant molecule diffusion.

Variance-preserving diffusion over (coords, one-hot types) in the zero-CoM
coordinate subspace, denoised by an equivariant message-passing network whose
coordinate updates are linear combinations of inter-point difference vectors.
Supports representation perturbation, classifier-free guidance through a
learnable fake representation, and an optional representation-consistency
loss term.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from repmolgen.data.alphabet import ElementAlphabet
from repmolgen.data.molecule import Molecule, project_zero_com, sample_subspace_noise
from repmolgen.errors import (
    DimensionError,
    InvariantViolationError,
    SamplingError,
)
from repmolgen.nn.layers import MLP, Dense, sinusoidal_embedding
from repmolgen.nn.params import ParamStore
from repmolgen.nn.tensor import Tape, Tensor, concat

# ---------------------------------------------------------------------------
# noise schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MolSchedule:
    """Variance-preserving polynomial schedule: alpha[t]^2 + sigma[t]^2 = 1, t = 0..n_steps."""

    n_steps: int
    alphas: np.ndarray
    sigmas: np.ndarray

    @classmethod
    def polynomial(cls, n_steps: int = 500, power: float = 2.0,
                   offset: float = 1e-5) -> "MolSchedule":
        t = np.arange(n_steps + 1, dtype=np.float64)
        alphas2 = (1.0 - (t / n_steps) ** power) ** 2
        # keep per-step signal ratios bounded away from zero (schedule clipping)
        ratios = alphas2[1:] / np.maximum(alphas2[:-1], 1e-300)
        ratios = np.clip(ratios, 0.001, 1.0)
        alphas2 = np.concatenate([[1.0], np.cumprod(ratios)])
        alphas2 = (1.0 - 2.0 * offset) * alphas2 + offset
        alphas = np.sqrt(alphas2)
        sigmas = np.sqrt(1.0 - alphas2)
        return cls(n_steps=n_steps, alphas=alphas, sigmas=sigmas)

    def strided_times(self, steps: int) -> np.ndarray:
        """Uniform sub-sampling of 0..n_steps with `steps` reverse transitions."""
        if steps < 2:
            raise ValueError(f"need at least 2 sampling steps, got {steps}")
        if steps > self.n_steps:
            raise ValueError(f"steps {steps} exceeds schedule length {self.n_steps}")
        return np.round(np.linspace(0, self.n_steps, steps + 1)).astype(int)


@dataclass(frozen=True)
class TrainTricks:
    """Training-time conditioning tricks."""

    sigma_rep: float = 0.3
    p_fake: float = 0.1
    rho: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p_fake <= 1.0:
            raise ValueError("p_fake must lie in [0, 1]")
        if self.sigma_rep < 0.0:
            raise ValueError("sigma_rep must be non-negative")
        if self.rho < 0.0:
            raise ValueError("rho must be non-negative")


# ---------------------------------------------------------------------------
# bond inference
# ---------------------------------------------------------------------------


def infer_bonds(m: Molecule, alphabet: ElementAlphabet) -> list[tuple[int, int]]:
    """Undirected bond list: pair (i, j) bonded iff distance inside its lookup window."""
    idx = m.type_indices
    diff = m.coords[:, None, :] - m.coords[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    bonds = []
    for i in range(m.n_atoms):
        for j in range(i + 1, m.n_atoms):
            lo, hi = alphabet.bond_window(int(idx[i]), int(idx[j]))
            if lo <= dist[i, j] <= hi:
                bonds.append((i, j))
    return bonds


# ---------------------------------------------------------------------------
# equivariant denoiser
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MolDenoiserConfig:
    n_elements: int = 4
    d_r: int = 64
    layers: int = 4
    hidden: int = 128
    t_emb_dim: int = 32
    feature_scale: float = 0.25
    # total coordinate displacement budget, split across layers; keeps the
    # reverse chain stable for any parameter values via a tanh clamp
    coord_range: float = 15.0


class EgnnDenoiser:
    """Equivariant noise predictor for (coords, types) with gated representation conditioning.

    Scalar messages are built from invariant node features and squared
    distances; coordinate updates are sums of difference vectors weighted by
    scalar message outputs, which makes rotation equivariance structural.
    A sigmoid-gated feedforward block conditioned on (representation, time
    embedding) modulates node features before every message-passing layer.
    """

    def __init__(self, config: MolDenoiserConfig, rng: np.random.Generator):
        self.config = config
        self.store = ParamStore()
        c = config
        self.embed_h = Dense(self.store, "embed_h", c.n_elements, c.hidden, rng)
        self.t_proj = Dense(self.store, "t_proj", c.t_emb_dim, c.hidden, rng)
        self.r_proj = Dense(self.store, "r_proj", c.d_r, c.hidden, rng)
        self.gates = []
        self.gate_ffs = []
        self.msg_mlps = []
        self.coord_mlps = []
        self.node_mlps = []
        for l in range(c.layers):
            self.gates.append(Dense(self.store, f"layer{l}.gate", c.hidden, c.hidden, rng))
            self.gate_ffs.append(
                MLP(self.store, f"layer{l}.cond_ff", [c.hidden, c.hidden, c.hidden], rng))
            self.msg_mlps.append(
                MLP(self.store, f"layer{l}.msg", [2 * c.hidden + 1, c.hidden, c.hidden], rng))
            self.coord_mlps.append(
                MLP(self.store, f"layer{l}.coord", [c.hidden, c.hidden, 1], rng,
                    zero_init_last=True))
            self.node_mlps.append(
                MLP(self.store, f"layer{l}.node", [2 * c.hidden, c.hidden, c.hidden], rng))
        self.out_h = Dense(self.store, "out_h", c.hidden, c.n_elements, rng, zero_init=True)
        self.fake_rep = self.store.add("fake_rep", 0.1 * rng.standard_normal(c.d_r))

    # -- forward -------------------------------------------------------------
    def forward(self, zx, zh, t_norm: np.ndarray, r,
                require_centered: bool = True) -> tuple[Tensor, Tensor]:
        """Predict the injected noise for a batch of equal-size molecules.

        zx: (B, N, 3) coordinates (zero CoM), zh: (B, N, d) feature block,
        t_norm: (B,) diffusion times scaled to [0, 1], r: (B, d_r) conditioning.
        Returns (eps_x, eps_h); eps_x is projected to the zero-CoM subspace.
        """
        zx = zx if isinstance(zx, Tensor) else Tensor(zx)
        zh = zh if isinstance(zh, Tensor) else Tensor(zh)
        r = r if isinstance(r, Tensor) else Tensor(r)
        b, n, _ = zx.data.shape
        if require_centered:
            com = np.linalg.norm(zx.data.mean(axis=1), axis=-1).max()
            if com > 1e-9:
                raise InvariantViolationError(
                    f"coordinate state violates zero-CoM invariant (|CoM| = {com:.2e})")
        if r.data.shape != (b, self.config.d_r):
            raise DimensionError(
                f"conditioning must be ({b}, {self.config.d_r}), got {r.data.shape}")

        t_emb = Tensor(sinusoidal_embedding(np.asarray(t_norm, dtype=np.float64),
                                            self.config.t_emb_dim))
        cond = (self.t_proj(t_emb) + self.r_proj(r)).silu()  # (B, hidden)
        cond_row = cond.expand_dims(1)  # (B, 1, hidden)

        h = self.embed_h(zh)
        x = zx
        mask = (1.0 - np.eye(n))[None, :, :, None]  # excludes self-pairs

        for l in range(self.config.layers):
            gate = self.gates[l](cond).sigmoid().expand_dims(1)  # (B, 1, hidden)
            h = h + gate * self.gate_ffs[l](h + cond_row)

            diff = x.expand_dims(2) - x.expand_dims(1)          # (B, N, N, 3)
            d2 = (diff * diff).sum(axis=3, keepdims=True)       # (B, N, N, 1)
            hi = h.expand_dims(2) + Tensor(np.zeros((1, 1, n, 1)))
            hj = h.expand_dims(1) + Tensor(np.zeros((1, n, 1, 1)))
            msg = self.msg_mlps[l](concat([hi, hj, d2], axis=3)) * mask  # (B, N, N, hidden)

            per_layer_range = self.config.coord_range / self.config.layers
            weight = self.coord_mlps[l](msg).tanh() * per_layer_range  # (B, N, N, 1)
            damp = (d2 + 1e-12).sqrt() + 1.0
            x = x + (diff / damp * weight * mask).sum(axis=2)

            agg = msg.sum(axis=2)                               # (B, N, hidden)
            h = h + self.node_mlps[l](concat([h, agg], axis=2))

        eps_x = x - zx
        eps_x = eps_x - eps_x.mean(axis=1, keepdims=True)       # zero-CoM projection
        eps_h = self.out_h(h)
        return eps_x, eps_h


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _effective_conditioning(model: EgnnDenoiser, reps: np.ndarray, tricks: TrainTricks,
                            rng: np.random.Generator) -> Tensor:
    """Perturb representations and substitute the learnable fake representation.

    The fake representation enters through a 0/1 mask multiply, so it receives
    gradient exactly on the substituted samples.
    """
    b = reps.shape[0]
    perturbed = reps
    if tricks.sigma_rep > 0:
        perturbed = reps + tricks.sigma_rep * rng.standard_normal(reps.shape)
    if tricks.p_fake <= 0.0:
        return Tensor(perturbed)
    fake_mask = (rng.random(b) < tricks.p_fake).astype(np.float64)[:, None]
    real_part = Tensor(perturbed * (1.0 - fake_mask))
    fake_part = model.fake_rep.expand_dims(0) * Tensor(fake_mask)
    return real_part + fake_part


def mol_loss(model: EgnnDenoiser, coords: np.ndarray, types: np.ndarray,
             reps: np.ndarray, schedule: MolSchedule, tricks: TrainTricks,
             rng: np.random.Generator, encoder=None, t_override=None) -> Tensor:
    """Noise-regression loss on a batch of equal-size molecules (summed over
    the molecule's dimensions, averaged over the batch)."""
    b, n, _ = coords.shape
    com = np.linalg.norm(coords.mean(axis=1), axis=-1).max()
    if com > 1e-9:
        raise InvariantViolationError("training coordinates must be centered")
    if tricks.rho > 0 and encoder is None:
        raise ValueError("rho > 0 requires the frozen encoder for the representation loss")

    if t_override is None:
        t = rng.integers(0, schedule.n_steps + 1, size=b)
    else:
        t = np.full(b, int(t_override), dtype=int)
    alpha = schedule.alphas[t][:, None, None]
    sigma = schedule.sigmas[t][:, None, None]

    eps_x = np.empty((b, n, 3))
    eps_h = np.empty((b, n, types.shape[2]))
    for k in range(b):
        eps_x[k], eps_h[k] = sample_subspace_noise(n, types.shape[2], rng)

    zx = alpha * coords + sigma * eps_x
    zh = alpha * (model.config.feature_scale * types) + sigma * eps_h

    r_eff = _effective_conditioning(model, reps, tricks, rng)
    pred_x, pred_h = model.forward(zx, zh, t / schedule.n_steps, r_eff)

    dx = pred_x - eps_x
    dh = pred_h - eps_h
    loss = ((dx * dx).sum(axis=2).sum(axis=1) + (dh * dh).sum(axis=2).sum(axis=1)).mean()

    if tricks.rho > 0:
        alpha_t = Tensor(alpha)
        sigma_t = Tensor(sigma)
        x0_hat = (Tensor(zx) - sigma_t * pred_x) / alpha_t
        x0_hat = x0_hat - x0_hat.mean(axis=1, keepdims=True)
        h0_hat = (Tensor(zh) - sigma_t * pred_h) / (alpha_t * model.config.feature_scale)
        rep_pred = encoder.embed_tensors(x0_hat, h0_hat)
        drep = rep_pred - Tensor(reps)
        loss = loss + tricks.rho * (drep * drep).sum(axis=1).mean()
    return loss


def mol_train_step(model: EgnnDenoiser, coords, types, reps, schedule: MolSchedule,
                   tricks: TrainTricks, rng: np.random.Generator, lr: float = 1e-3,
                   encoder=None) -> float:
    """One optimizer step; returns the scalar loss."""
    model.store.zero_grad()
    with Tape() as tape:
        loss = mol_loss(model, coords, types, reps, schedule, tricks, rng, encoder=encoder)
    tape.backward(loss)
    value = loss.item()
    tape.clear()
    model.store.adam_step(lr)
    return value


# ---------------------------------------------------------------------------
# guidance and sampling
# ---------------------------------------------------------------------------


def cfg_eps(model: EgnnDenoiser, zx: np.ndarray, zh: np.ndarray, t_norm: np.ndarray,
            r: np.ndarray, w: float) -> tuple[np.ndarray, np.ndarray]:
    """Classifier-free guided prediction (1+w)*conditional - w*fake-conditioned."""
    cond_x, cond_h = model.forward(zx, zh, t_norm, r)
    if w == 0.0:
        return cond_x.data, cond_h.data
    b = zx.shape[0]
    fake = np.broadcast_to(model.fake_rep.data, (b, model.config.d_r))
    fake_x, fake_h = model.forward(zx, zh, t_norm, fake)
    out_x = (1.0 + w) * cond_x.data - w * fake_x.data
    out_h = (1.0 + w) * cond_h.data - w * fake_h.data
    return out_x, out_h


def mol_sample_batch(model: EgnnDenoiser, reps: np.ndarray, n_atoms: int,
                     schedule: MolSchedule, rng: np.random.Generator, w: float = 0.0,
                     steps: int | None = None, noise_source=None,
                     com_tol: float = 1e-9) -> list[Molecule]:
    """Ancestral reverse diffusion for a batch of molecules sharing one atom count.

    `noise_source(shape)` may replace the default Gaussian draws (used by the
    paired-chain symmetry tests); the coordinate part of every draw is
    projected onto the zero-CoM subspace inside this function.
    """
    if steps is None:
        steps = schedule.n_steps
    times = schedule.strided_times(steps)
    draw = noise_source if noise_source is not None else rng.standard_normal
    b = reps.shape[0]
    n, d = n_atoms, model.config.n_elements
    scale = model.config.feature_scale

    zx = project_zero_com(draw((b, n, 3)))
    zh = np.asarray(draw((b, n, d)), dtype=np.float64)
    alphas, sigmas = schedule.alphas, schedule.sigmas

    for k in range(len(times) - 1, 0, -1):
        t, s = times[k], times[k - 1]
        eps_x, eps_h = cfg_eps(model, zx, zh, np.full(b, t / schedule.n_steps), reps, w)
        a_ts = alphas[t] / alphas[s]
        s2_ts = sigmas[t] ** 2 - a_ts ** 2 * sigmas[s] ** 2
        mean_x = zx / a_ts - (s2_ts / (a_ts * sigmas[t])) * eps_x
        mean_h = zh / a_ts - (s2_ts / (a_ts * sigmas[t])) * eps_h
        std = np.sqrt(s2_ts) * sigmas[s] / sigmas[t]
        zx = project_zero_com(mean_x + std * project_zero_com(draw((b, n, 3))))
        zh = mean_h + std * draw((b, n, d))
        if not (np.isfinite(zx).all() and np.isfinite(zh).all()):
            raise SamplingError(f"non-finite state in reverse chain at step index {k} (t={t})")
        com = np.linalg.norm(zx.mean(axis=1), axis=-1).max()
        if com > com_tol:
            raise InvariantViolationError(f"reverse chain left the zero-CoM subspace (t={t})")

    eps_x, eps_h = cfg_eps(model, zx, zh, np.zeros(b), reps, w)
    x = (zx - sigmas[0] * eps_x) / alphas[0]
    h = (zh - sigmas[0] * eps_h) / (alphas[0] * scale)
    x = project_zero_com(x)

    out = []
    for k in range(b):
        types = np.zeros((n, d))
        types[np.arange(n), np.argmax(h[k], axis=1)] = 1.0
        out.append(Molecule(x[k], types))
    return out


def mol_sample(model: EgnnDenoiser, r: np.ndarray, n_atoms: int, schedule: MolSchedule,
               rng: np.random.Generator, w: float = 0.0, steps: int | None = None,
               noise_source=None) -> Molecule:
    """Single-molecule convenience wrapper around mol_sample_batch."""
    return mol_sample_batch(model, r.reshape(1, -1), n_atoms, schedule, rng, w=w,
                            steps=steps, noise_source=noise_source)[0]


def fewer_step_sample(model: EgnnDenoiser, r: np.ndarray, n_atoms: int,
                      schedule: MolSchedule, steps: int, rng: np.random.Generator,
                      w: float = 0.0, noise_source=None) -> Molecule:
    """Reverse chain on a uniformly strided schedule with `steps` transitions."""
    return mol_sample(model, r, n_atoms, schedule, rng, w=w, steps=steps,
                      noise_source=noise_source)
