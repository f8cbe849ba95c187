"""Topology-aware point-cloud generation at desk scale.

Pipeline: point clouds -> Vietoris-Rips persistence diagrams -> persistence
images -> topology tokens feeding a bottlenecked diffusion transformer, plus
a persistence-image VAE prior, DDPM training/sampling, and generation metrics.
"""

__version__ = "0.1.0"
