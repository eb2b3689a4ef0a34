"""Policy fusion toolkit: train gridworld policies, learn rewards from
demonstrations, and combine policies at inference time."""

from . import (airl, artifacts, errors, fusion, gridworld, harness, policy,
               ppo, session)

__version__ = "0.1.0"
