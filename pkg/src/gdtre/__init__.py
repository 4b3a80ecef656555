"""Stabilizing solutions of game-theoretic Riccati equations for Markov-jump systems."""

__version__ = "0.1.0"
