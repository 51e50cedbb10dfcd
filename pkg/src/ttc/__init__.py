"""Generative transport by a sequence of trained Wasserstein critics."""

from .critic import CriticNet, init_critic, train_critic
from .engine import CriticStack, ExperimentConfig, analytic_ttc, n_theta, push_sample, ttc_train
from .oracle import brute_force_w1, w1_1d, w1_hungarian

__version__ = "0.1.0"
