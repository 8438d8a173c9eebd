"""Reward-driven session-based recommendation.

Supervised Negative Q-learning (SNQN) and Supervised Advantage
Actor-Critic (SA2C) over a shared GRU sequence encoder, with a synthetic
session MDP and a tabular value-iteration oracle for verification.
"""

__version__ = "0.1.0"
