"""vcrl: desk-scale value-based RL with value-consistent latent representations."""

__version__ = "0.1.0"
