"""Neural-network robustness verification with proof sharing."""

from .relax import Box, Star, Zonotope
from .network import Network

__all__ = ["Box", "Star", "Zonotope", "Network"]
__version__ = "0.1.0"
