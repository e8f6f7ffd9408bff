"""Two-stage molecule generation: representation diffusion + conditioned equivariant diffusion."""

__version__ = "0.1.0"
