"""Adversarial imitation learning with a sampling-based MPC agent.

The planner optimizes short model rollouts costed by a learned transition
discriminator plus a learned terminal value, and the training loop
alternates environment collection with discriminator and value updates;
there is no policy network.
"""

from .agent import Discriminator, PiMppi, StepRecord, ValueFunction, airl_reward
from .dynamics import AnalyticBicycle, LearnedDynamics, ReplayBuffer
from .envs import CartpoleEnv, DemoSet, EpisodeSpec, NavEnv, generate_demos, read_demos, write_demos
from .nets import Adam, LrSchedule, Mlp, clip_grad_norm, l2_penalty, spectral_normalize
from .planner import MppiConfig, MppiPlanner, Plan, RolloutBatch, mppi_plan, shift_plan, softmin_weights, trajectory_cost
from .training import TrainConfig, Trainer, compute_returns, discriminator_update, temperature_decay, value_update

__version__ = "0.1.0"
