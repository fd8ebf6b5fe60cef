"""Synthetic ground-truth phantoms."""

from app.phantoms.shapes import disk_phantom
from app.phantoms.shepp_logan import shepp_logan
from app.phantoms.rock import RockPhantomSpec, rock_phantom

__all__ = ["disk_phantom", "shepp_logan", "RockPhantomSpec", "rock_phantom"]
