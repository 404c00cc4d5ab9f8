"""Observation encoder, feature importance, and receiver-side fusion.

Each agent compresses its local observation into a short feature vector
through a small dense network (a hard bottleneck: feature_dim is far below
the observation size; an L2 activation penalty applied during training keeps
the code compact). The scalar importance of a fresh feature is the distance
to the sender's last delivered feature, so it measures how much the agent's
view has changed since the team last heard from it.

Receivers keep the last delivered feature per sender and fuse them with
their own current feature: received vectors are damped by a staleness weight
1 / (1 + age) and tagged with the normalized age itself, so downstream
networks can both read the content and judge how much to trust it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn

ABSENT = None


@dataclass(frozen=True)
class CodecConfig:
    feature_dim: int = 16
    hidden_dim: int = 32
    activation_penalty: float = 1e-3  # L2 weight on feature vectors in the training loss

    def validate(self, obs_dim=None):
        problems = []
        if self.feature_dim < 1:
            problems.append("feature_dim must be >= 1")
        if self.hidden_dim < 1:
            problems.append("hidden_dim must be >= 1")
        if self.activation_penalty < 0:
            problems.append("activation_penalty must be >= 0")
        if obs_dim is not None and self.feature_dim >= obs_dim:
            problems.append(f"feature_dim {self.feature_dim} must be < observation dim {obs_dim}")
        return problems


@dataclass
class SemanticFeature:
    vector: np.ndarray
    importance: float
    gen_step: int
    sender: int


class FeatureCache:
    """Last delivered feature per sender (ABSENT until first delivery)."""

    def __init__(self, n_agents: int):
        self.n = n_agents
        self.entries = [ABSENT] * n_agents

    def store(self, feature: SemanticFeature):
        self.entries[feature.sender] = feature

    def get(self, sender: int):
        return self.entries[sender]


def encoder_spec(obs_dim: int, config: CodecConfig):
    return nn.mlp_spec([obs_dim, config.hidden_dim, config.feature_dim])


def encode(obs_vector, spec, params, gen_step=0, sender=0, last_delivered=ABSENT) -> SemanticFeature:
    """Compress one flattened observation into a SemanticFeature."""
    vector, _ = nn.forward(spec, params, obs_vector)
    feature = SemanticFeature(vector=vector, importance=0.0, gen_step=gen_step, sender=sender)
    feature.importance = importance_score(feature, last_delivered)
    return feature


def encode_batch(obs_matrix, spec, params) -> np.ndarray:
    """Feature vectors for a batch of flattened observations, one per row."""
    vectors, _ = nn.forward(spec, params, obs_matrix)
    return vectors


def importance_score(current: SemanticFeature, last_delivered) -> float:
    """How much the sender's view changed since its last delivered feature."""
    if last_delivered is ABSENT:
        return float(np.linalg.norm(current.vector))
    if last_delivered.vector.shape != current.vector.shape:
        raise ValueError("feature dimensions do not match")
    return float(np.linalg.norm(current.vector - last_delivered.vector))


def fused_dim(n_agents: int, feature_dim: int) -> int:
    return feature_dim * n_agents + (n_agents - 1)


def staleness_weight(age):
    return 1.0 / (1.0 + age)


def fuse(own: SemanticFeature, cache: FeatureCache, ages, max_steps: int) -> np.ndarray:
    """Decision input for one agent: own feature, then per other sender the
    cached feature damped by staleness plus its normalized age.

    ages holds, per sender, the steps since that sender's cached feature was
    generated. Output length is feature_dim * n_agents + (n_agents - 1).
    """
    feature_dim = own.vector.shape[0]
    parts = [own.vector]
    for sender in range(cache.n):
        if sender == own.sender:
            continue
        entry = cache.get(sender)
        if entry is ABSENT:
            vec = np.zeros(feature_dim)
        else:
            if entry.vector.shape[0] != feature_dim:
                raise ValueError("cached feature dimension does not match own feature")
            vec = entry.vector
        age = float(ages[sender])
        parts.append(vec * staleness_weight(age))
        parts.append(np.array([age / max_steps]))
    return np.concatenate(parts)
