"""Diffusion model over representation vectors.

A residual MLP predicts the clean representation from its noised version,
conditioned on diffusion time, the molecule's atom count, and optionally a
scalar property.  Sampling integrates a tempered reverse-time SDE with an
annealed Langevin corrector; temperature 1 with no extra Langevin noise
reduces exactly to the vanilla reverse SDE.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from repmolgen.errors import ConfigError, SamplingError
from repmolgen.nn.layers import MLP, Dense, sinusoidal_embedding
from repmolgen.nn.params import ParamStore
from repmolgen.nn.tensor import Tape, Tensor


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RepSchedule:
    """Variance-preserving noise schedule with per-step rates betas (length
    n_steps) and survival products abars (length n_steps + 1, abars[0] = 1)."""

    betas: np.ndarray
    abars: np.ndarray

    @classmethod
    def linear(cls, n_steps: int = 1000, beta_min: float = 1e-4,
               beta_max: float = 0.02) -> "RepSchedule":
        if n_steps < 1:
            raise ValueError("schedule needs at least one step")
        if not 0 < beta_min <= beta_max < 1:
            raise ValueError("beta range must satisfy 0 < beta_min <= beta_max < 1")
        betas = np.linspace(beta_min, beta_max, n_steps)
        abars = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        return cls(betas=betas, abars=abars)

    @property
    def n_steps(self) -> int:
        return len(self.betas)


@dataclass(frozen=True)
class LowTempParams:
    """Sampler temperature controls.

    lambda0 = 1/temperature scales the score near the data end of the chain;
    psi adds extra Langevin churn to the predictor; corrector_steps Langevin
    corrections run at each noise level with step sizes targeting snr.
    """

    temperature: float = 1.0
    psi: float = 1.0
    corrector_steps: int = 1
    snr: float = 0.15

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.psi < 0:
            raise ValueError("psi must be non-negative")
        if self.corrector_steps < 0:
            raise ValueError("corrector_steps must be non-negative")
        if self.snr <= 0:
            raise ValueError("snr must be positive")

    @property
    def lambda0(self) -> float:
        return 1.0 / self.temperature


def lambda_at(lambda0: float, abar: float) -> float:
    """Time-dependent score scale: lambda0 at the data end (abar=1), easing to
    1 at the noise end (abar=0), so tempering acts only where the distribution
    has structure."""
    return lambda0 / (abar + (1.0 - abar) * lambda0)


def hybrid_step_coefficients(beta: float, lam_t: float, lambda0: float,
                             psi: float) -> tuple[float, float, float]:
    """Euler coefficients (state, score, noise) of one reverse step
    r <- state*r + score*s(r) + noise*xi.  With lam_t=1 and psi=0 these are
    exactly the vanilla reverse-SDE coefficients (1 + beta/2, beta, sqrt(beta))."""
    state = 1.0 + beta / 2.0
    score = (lam_t + lambda0 * psi / 2.0) * beta
    noise = np.sqrt(beta * (1.0 + psi))
    return state, score, noise


# ---------------------------------------------------------------------------
# denoiser network
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RepDenoiserConfig:
    d_r: int = 64
    blocks: int = 6
    hidden: int = 256
    cond_width: int = 64
    t_emb_dim: int = 32
    n_min: int = 1
    n_max: int = 9
    with_property: bool = False

    def validate(self) -> None:
        if self.blocks < 1:
            raise ConfigError("denoiser needs at least one residual block")
        if self.d_r < 1 or self.hidden < 1 or self.cond_width < 1:
            raise ConfigError("denoiser widths must be >= 1")
        if self.t_emb_dim < 2:
            raise ConfigError("time embedding needs at least two dimensions")
        if self.n_min < 1 or self.n_max < self.n_min:
            raise ConfigError("node-count range must satisfy 1 <= n_min <= n_max")


class RepDenoiser:
    """Residual MLP predicting the clean representation from a noised one."""

    def __init__(self, config: RepDenoiserConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        self.store = ParamStore()
        c, h = config.cond_width, config.hidden

        self.in_proj = Dense(self.store, "in", config.d_r, h, rng)
        self.t_proj = Dense(self.store, "t_proj", config.t_emb_dim, c, rng)
        self.n_table = self.store.add(
            "n_table", 0.1 * rng.standard_normal((config.n_max - config.n_min + 1, c)))
        if config.with_property:
            self.prop_proj = Dense(self.store, "prop_proj", 1, c, rng)
        self.cond_proj = Dense(self.store, "cond", c, h, rng)
        self.blocks = [MLP(self.store, f"block{k}", [h, h, h], rng)
                       for k in range(config.blocks)]
        self.out = Dense(self.store, "out", h, config.d_r, rng, zero_init=True)
        # Training-set property range, tracked for extrapolation warnings.
        self.prop_range: tuple[float, float] | None = None

    def _count_indices(self, counts: np.ndarray) -> np.ndarray:
        counts = np.asarray(counts, dtype=int)
        if counts.min() < self.config.n_min or counts.max() > self.config.n_max:
            raise ConfigError(
                f"node counts {sorted(set(counts.tolist()))} outside the supported "
                f"range [{self.config.n_min}, {self.config.n_max}]"
            )
        return counts - self.config.n_min

    def forward(self, r_t: np.ndarray | Tensor, t_norm: np.ndarray,
                counts: np.ndarray, props: np.ndarray | None = None) -> Tensor:
        """Predict the clean representation; inputs (B, d_r), (B,), (B,), (B,)."""
        r_t = r_t if isinstance(r_t, Tensor) else Tensor(r_t)
        t_emb = sinusoidal_embedding(t_norm, self.config.t_emb_dim)
        cond = self.t_proj(Tensor(t_emb)) + self.n_table[self._count_indices(counts)]
        if self.config.with_property:
            if props is not None:
                cond = cond + self.prop_proj(Tensor(np.asarray(props)[:, None]))
        elif props is not None:
            raise ConfigError("model was built without property conditioning")

        h = self.in_proj(r_t) + self.cond_proj(cond.silu())
        for block in self.blocks:
            h = h + block(h.silu())
        return self.out(h.silu())


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def rep_loss(model, reps: np.ndarray, counts: np.ndarray, schedule: RepSchedule,
             rng: np.random.Generator, props: np.ndarray | None = None,
             t_override: int | None = None) -> Tensor:
    """Clean-sample regression loss: squared error between the model's
    prediction from the noised representation and the clean one, summed over
    the representation and averaged over the batch."""
    b = reps.shape[0]
    if t_override is None:
        t = rng.integers(1, schedule.n_steps + 1, size=b)
    else:
        t = np.full(b, int(t_override), dtype=int)
    eps = rng.standard_normal(reps.shape)
    abar = schedule.abars[t][:, None]
    r_t = np.sqrt(abar) * reps + np.sqrt(1.0 - abar) * eps
    pred = model.forward(r_t, t / schedule.n_steps, counts, props)
    diff = pred - Tensor(reps)
    return (diff * diff).sum(axis=1).mean()


def rep_train_step(model: RepDenoiser, reps, counts, schedule: RepSchedule,
                   encoder, rng: np.random.Generator, lr: float = 1e-3,
                   props: np.ndarray | None = None) -> float:
    """One optimizer step on representations produced by the frozen encoder."""
    if not getattr(encoder, "frozen", False):
        raise ConfigError("representation training requires a frozen encoder")
    model.store.zero_grad()
    with Tape() as tape:
        loss = rep_loss(model, reps, counts, schedule, rng, props=props)
    tape.backward(loss)
    value = loss.item()
    tape.clear()
    model.store.adam_step(lr)
    if props is not None:
        lo, hi = float(np.min(props)), float(np.max(props))
        if model.prop_range is None:
            model.prop_range = (lo, hi)
        else:
            model.prop_range = (min(model.prop_range[0], lo),
                                max(model.prop_range[1], hi))
    return value


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def reverse_sde_sample(score_fn, d_r: int, count: int, schedule: RepSchedule,
                       lowtemp: LowTempParams, rng: np.random.Generator) -> np.ndarray:
    """Integrate the tempered reverse SDE from Gaussian noise.

    score_fn(r, t) returns the score of the noised marginal at discrete step t.
    Each level runs corrector_steps of annealed Langevin on the tempered score,
    then one predictor step; the final predictor step adds no noise.
    """
    lam0 = lowtemp.lambda0
    r = rng.standard_normal((count, d_r))
    for t in range(schedule.n_steps, 0, -1):
        abar = schedule.abars[t]
        beta = schedule.betas[t - 1]
        lam = lambda_at(lam0, abar)

        for _ in range(lowtemp.corrector_steps):
            g = lam * score_fn(r, t)
            xi = rng.standard_normal(r.shape)
            g_norm = np.linalg.norm(g, axis=1).mean()
            if g_norm > 0:
                xi_norm = np.linalg.norm(xi, axis=1).mean()
                step = 2.0 * abar * (lowtemp.snr * xi_norm / g_norm) ** 2
                r = r + step * g + np.sqrt(2.0 * step) * xi

        state, score_c, noise_c = hybrid_step_coefficients(beta, lam, lam0,
                                                           lowtemp.psi)
        r = state * r + score_c * score_fn(r, t)
        if t > 1:
            r = r + noise_c * rng.standard_normal(r.shape)
        if not np.isfinite(r).all():
            raise SamplingError(f"non-finite representation state at step index {t}")
    return r


def _model_score_fn(model: RepDenoiser, schedule: RepSchedule, counts: np.ndarray,
                    props: np.ndarray | None):
    def score(r, t):
        abar = schedule.abars[t]
        t_norm = np.full(r.shape[0], t / schedule.n_steps)
        pred = model.forward(r, t_norm, counts, props).data
        return (np.sqrt(abar) * pred - r) / (1.0 - abar)

    return score


def rep_sample(model: RepDenoiser, n_atoms, schedule: RepSchedule,
               lowtemp: LowTempParams, rng: np.random.Generator,
               count: int | None = None,
               props: np.ndarray | None = None) -> np.ndarray:
    """Draw representations conditioned on atom counts (scalar or per-sample)."""
    n_atoms = np.asarray(n_atoms, dtype=int)
    if n_atoms.ndim == 0:
        if count is None:
            raise ValueError("count is required when n_atoms is a scalar")
        n_atoms = np.full(count, int(n_atoms))
    counts = n_atoms
    score_fn = _model_score_fn(model, schedule, counts, props)
    return reverse_sde_sample(score_fn, model.config.d_r, len(counts), schedule,
                              lowtemp, rng)


def rep_sample_conditional(model: RepDenoiser, prop_value: float, n_atoms,
                           schedule: RepSchedule, lowtemp: LowTempParams,
                           rng: np.random.Generator,
                           count: int | None = None) -> tuple[np.ndarray, bool]:
    """Property-conditioned sampling; the flag warns when the requested value
    lies outside the property range seen during training (extrapolation)."""
    if not model.config.with_property:
        raise ConfigError("model was built without property conditioning")
    n_atoms = np.asarray(n_atoms, dtype=int)
    if n_atoms.ndim == 0:
        if count is None:
            raise ValueError("count is required when n_atoms is a scalar")
        n_atoms = np.full(count, int(n_atoms))
    props = np.full(len(n_atoms), float(prop_value))
    reps = rep_sample(model, n_atoms, schedule, lowtemp, rng, props=props)
    if model.prop_range is None:
        extrapolated = True
    else:
        lo, hi = model.prop_range
        extrapolated = bool(prop_value < lo or prop_value > hi)
    return reps, extrapolated
