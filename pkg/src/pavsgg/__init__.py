"""Weakly-supervised video scene graph generation around learnable pair
affinity: grounded pseudo-label matching, affinity-gated attention, and
composite ranking, all runnable against a seeded synthetic oracle."""

__version__ = "0.1.0"
