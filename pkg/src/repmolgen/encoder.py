"""Invariant molecule encoder.

Maps a 3D molecule to a fixed-width representation vector that is exact under
permutation of atoms and rigid motion of coordinates, and (optionally) changes
under reflection.  The network is a fully connected distance-message-passing
stack: pair messages are built from radial-basis features of interatomic
distances, so every learned quantity depends on coordinates only through
distances.  An optional per-atom signed-volume scalar makes the encoder
reflection-sensitive while staying rotation- and permutation-invariant.

Pretraining is a denoising pretext task: Gaussian noise is added to the
coordinates and a disposable equivariant head predicts it from the node
embeddings.  The head is discarded afterwards and the encoder is frozen.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from repmolgen.data.molecule import Molecule
from repmolgen.errors import ConfigError, DimensionError, TrainingDivergenceError
from repmolgen.nn.layers import MLP, Dense
from repmolgen.nn.params import ParamStore
from repmolgen.nn.tensor import Tape, Tensor, concat


@dataclass(frozen=True)
class EncoderConfig:
    """Hyperparameters of the encoder.

    d_r is the representation width; layers/hidden size the message-passing
    stack; n_rbf radial basis functions cover distances up to r_max.
    pretext_noise is the coordinate noise scale used during pretraining and
    must be positive (a zero scale would make the pretext task vacuous).
    """

    d_r: int = 64
    layers: int = 3
    hidden: int = 64
    n_rbf: int = 16
    r_max: float = 12.0
    reflection_sensitive: bool = False
    pretext_noise: float = 0.3

    def validate(self) -> None:
        if self.d_r < 1:
            raise ConfigError("encoder representation width d_r must be >= 1")
        if self.layers < 1:
            raise ConfigError("encoder needs at least one message-passing layer")
        if self.hidden < 1:
            raise ConfigError("encoder hidden width must be >= 1")
        if self.n_rbf < 2:
            raise ConfigError("encoder needs at least two radial basis functions")
        if self.r_max <= 0:
            raise ConfigError("encoder distance cutoff r_max must be positive")
        if self.pretext_noise <= 0:
            raise ConfigError(
                "pretext_noise must be positive; a zero noise scale gives the "
                "denoising pretraining nothing to learn"
            )


def pool_nodes(h: np.ndarray) -> np.ndarray:
    """Order-independent readout: concatenated mean- and max-pool over nodes."""
    h = np.asarray(h, dtype=np.float64)
    return np.concatenate([h.mean(axis=0), h.max(axis=0)])


def _layer_norm(t: Tensor) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (no learned affine)."""
    centered = t - t.mean(axis=t.data.ndim - 1, keepdims=True)
    var = (centered * centered).mean(axis=t.data.ndim - 1, keepdims=True)
    return centered / (var + 1e-8).sqrt()


class GeoEncoder:
    """Distance-message-passing encoder with a mean/max pooled readout."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator,
                 n_elements: int = 4):
        config.validate()
        self.config = config
        self.n_elements = n_elements
        self.store = ParamStore()
        self._frozen = False

        centers = np.linspace(0.0, config.r_max, config.n_rbf)
        spacing = centers[1] - centers[0]
        self._centers = centers
        self._gamma = 1.0 / (2.0 * spacing * spacing)

        h = config.hidden
        in_width = n_elements + (1 if config.reflection_sensitive else 0)
        self.embed = Dense(self.store, "embed", in_width, h, rng)
        self.msg_mlps = [
            MLP(self.store, f"msg{l}", [2 * h + config.n_rbf + 1, h, h], rng)
            for l in range(config.layers)
        ]
        self.node_mlps = [
            MLP(self.store, f"node{l}", [2 * h, h, h], rng)
            for l in range(config.layers)
        ]
        self.readout = Dense(self.store, "readout", 2 * h, config.d_r, rng)

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> None:
        """Mark the parameters as final; consumers check this flag."""
        self._frozen = True

    # -- geometry features -----------------------------------------------------

    def _pair_features(self, x: Tensor):
        """Pairwise displacement, distance, radial features, and off-diagonal mask.

        The radial features are Gaussian RBFs plus the normalized raw distance;
        the extra linear channel resolves small distance changes that fall
        between RBF centers.
        """
        n = x.data.shape[1]
        diff = x.expand_dims(2) - x.expand_dims(1)           # (B, N, N, 3)
        d2 = (diff * diff).sum(axis=3)                       # (B, N, N)
        d = (d2 + 1e-12).sqrt()
        de = d.expand_dims(3)                                # (B, N, N, 1)
        gauss = ((de - self._centers) ** 2 * (-self._gamma)).exp()
        rbf = concat([gauss, de * (1.0 / self.config.r_max)], axis=3)
        mask = (1.0 - np.eye(n))[None, :, :, None]
        return diff, d, de, rbf, mask

    def _chiral_scalar(self, diff: Tensor, d: Tensor, mask) -> Tensor:
        """Per-atom signed volume of three radially weighted moment vectors.

        Each moment vector sums neighbor displacements with a different radial
        weight, so the triple is rotation-covariant; its determinant is
        rotation- and permutation-invariant but flips sign under reflection.
        """
        wa = ((-d).exp()).expand_dims(3) * mask
        wb = ((d * d * -0.5).exp()).expand_dims(3) * mask
        wc = (1.0 / (d + 1.0)).expand_dims(3) * mask
        a = (wa * diff).sum(axis=2)                          # (B, N, 3)
        b = (wb * diff).sum(axis=2)
        c = (wc * diff).sum(axis=2)
        cx = b[:, :, 1] * c[:, :, 2] - b[:, :, 2] * c[:, :, 1]
        cy = b[:, :, 2] * c[:, :, 0] - b[:, :, 0] * c[:, :, 2]
        cz = b[:, :, 0] * c[:, :, 1] - b[:, :, 1] * c[:, :, 0]
        s = a[:, :, 0] * cx + a[:, :, 1] * cy + a[:, :, 2] * cz
        return s.tanh().expand_dims(2)                       # (B, N, 1)

    # -- forward ----------------------------------------------------------------

    def _node_embeddings(self, x: Tensor, h_types: Tensor):
        """Message-passing trunk; returns node embeddings plus pair features."""
        if x.data.ndim != 3 or x.data.shape[-1] != 3:
            raise DimensionError(f"expected coordinates of shape (B, N, 3), got {x.data.shape}")
        if h_types.data.ndim != 3 or h_types.data.shape[:2] != x.data.shape[:2]:
            raise DimensionError(
                f"type features {h_types.data.shape} do not match coordinates {x.data.shape}"
            )
        if h_types.data.shape[2] != self.n_elements:
            raise DimensionError(
                f"encoder expects {self.n_elements} element channels, got {h_types.data.shape[2]}"
            )
        n = x.data.shape[1]
        if n == 0:
            raise DimensionError("cannot embed a molecule with zero atoms")

        diff, d, de, rbf, mask = self._pair_features(x)
        if self.config.reflection_sensitive:
            h_in = concat([h_types, self._chiral_scalar(diff, d, mask)], axis=2)
        else:
            h_in = h_types
        h = self.embed(h_in)                                  # (B, N, hidden)

        for l in range(self.config.layers):
            hn = _layer_norm(h)
            hi = hn.expand_dims(2) + Tensor(np.zeros((1, 1, n, 1)))
            hj = hn.expand_dims(1) + Tensor(np.zeros((1, n, 1, 1)))
            msg = self.msg_mlps[l](concat([hi, hj, rbf], axis=3)) * mask
            agg = msg.sum(axis=2) * (1.0 / max(n - 1, 1))     # (B, N, hidden)
            h = h + self.node_mlps[l](concat([hn, agg], axis=2))
        return h, diff, de, rbf, mask

    def embed_tensors(self, x: Tensor, h_types: Tensor) -> Tensor:
        """Differentiable encode of a batch: (B, N, 3), (B, N, d) -> (B, d_r)."""
        h, _, _, _, _ = self._node_embeddings(x, h_types)
        pooled = concat([h.mean(axis=1), h.max(axis=1)], axis=1)
        return self.readout(pooled)

    def encode(self, m: Molecule) -> np.ndarray:
        """Representation vector of a single molecule; pure and deterministic."""
        rep = self.embed_tensors(Tensor(m.coords[None]), Tensor(m.types[None]))
        return rep.data[0].copy()

    def encode_molecules(self, molecules) -> np.ndarray:
        """Stack encode() over a list of molecules into an (M, d_r) array."""
        return np.stack([self.encode(m) for m in molecules])


def pretrain_denoising(molecules, config: EncoderConfig, rng: np.random.Generator,
                       steps: int = 500, batch_size: int = 16,
                       lr: float = 1e-3, head_rounds: int = 3
                       ) -> tuple[GeoEncoder, list[float]]:
    """Train a fresh encoder on coordinate denoising; freeze it and return it.

    A disposable equivariant head predicts the added noise per atom as a
    weighted sum of displacement directions; only the encoder survives.  The
    recorded losses are per-atom squared errors (expectation 3 at the start,
    because the zero-initialized head predicts zero noise).
    """
    config.validate()
    molecules = list(molecules)
    if not molecules:
        raise ConfigError("denoising pretraining needs a non-empty corpus")

    d_types = molecules[0].types.shape[1]
    encoder = GeoEncoder(config, rng, n_elements=d_types)
    hw, radial = config.hidden, config.n_rbf + 1
    rounds = head_rounds
    head_store = ParamStore()
    # Disposable head: a few rounds of equivariant coordinate refinement.
    # Node features come exclusively from the encoder trunk, so denoising
    # quality depends on the trunk learning type- and geometry-aware
    # embeddings; each round re-measures the partially cleaned distances.
    head_msg = [MLP(head_store, f"head_msg{k}", [2 * hw + radial, hw, hw], rng)
                for k in range(rounds)]
    head_coord = [MLP(head_store, f"head_coord{k}", [hw, hw, 1], rng,
                      zero_init_last=True) for k in range(rounds)]
    head_node = [MLP(head_store, f"head_node{k}", [2 * hw, hw, hw], rng)
                 for k in range(rounds)]

    groups: dict[int, list[Molecule]] = {}
    for m in molecules:
        groups.setdefault(m.n_atoms, []).append(m)

    def micro_batch_loss(batch_mols):
        coords = np.stack([m.coords for m in batch_mols])
        types = np.stack([m.types for m in batch_mols])
        b, n, _ = coords.shape
        eps = rng.standard_normal((b, n, 3))
        noisy = coords + config.pretext_noise * eps

        g, _, _, _, mask = encoder._node_embeddings(Tensor(noisy), Tensor(types))
        x = Tensor(noisy)
        for k in range(rounds):
            diff = x.expand_dims(2) - x.expand_dims(1)        # (B, N, N, 3)
            d2 = (diff * diff).sum(axis=3)
            d = (d2 + 1e-12).sqrt()
            de = d.expand_dims(3)
            gauss = ((de - encoder._centers) ** 2 * (-encoder._gamma)).exp()
            feats = concat([gauss, de * (1.0 / config.r_max)], axis=3)
            gi = g.expand_dims(2) + Tensor(np.zeros((1, 1, n, 1)))
            gj = g.expand_dims(1) + Tensor(np.zeros((1, n, 1, 1)))
            msg = head_msg[k](concat([gi, gj, feats], axis=3)) * mask
            w = head_coord[k](msg) * mask                     # (B, N, N, 1)
            x = x + (w * (diff * (1.0 / (de + 1.0)))).sum(axis=2)
            agg = msg.sum(axis=2) * (1.0 / max(n - 1, 1))
            g = g + head_node[k](concat([g, agg], axis=2))
        # Refined coordinates imply the noise estimate; with zero-init
        # coordinate layers the first prediction is exactly zero.
        resid = (Tensor(noisy) - x) * (1.0 / config.pretext_noise) - Tensor(eps)
        return (resid * resid).mean() * 3.0

    # Molecules of different sizes cannot share one dense batch, so each
    # optimizer step accumulates gradients over a few size-homogeneous
    # micro-batches; stepping on the mixed gradient avoids the optimizer
    # thrash of alternating between per-size objectives.
    n_micro = 3
    per_micro = max(1, batch_size // n_micro)
    losses: list[float] = []
    for step in range(steps):
        step_lr = lr * (1.0 - 0.9 * step / steps)
        encoder.store.zero_grad()
        head_store.zero_grad()
        total = 0.0
        for _ in range(n_micro):
            anchor = molecules[int(rng.integers(len(molecules)))]
            group = groups[anchor.n_atoms]
            picks = rng.integers(len(group), size=per_micro)
            with Tape() as tape:
                loss = micro_batch_loss([group[i] for i in picks])
                scaled = loss * (1.0 / n_micro)
            tape.backward(scaled)
            tape.clear()
            total += loss.item()
        value = total / n_micro
        if not np.isfinite(value):
            raise TrainingDivergenceError(f"denoising pretraining diverged (loss={value})")
        encoder.store.adam_step(step_lr)
        head_store.adam_step(step_lr)
        losses.append(value)

    encoder.freeze()
    return encoder, losses
