"""lawm: latent-action pretraining of an imitation policy through world
modeling, on a deterministic synthetic tabletop environment."""

__version__ = "0.1.0"
