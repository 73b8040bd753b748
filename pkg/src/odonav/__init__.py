"""Goal-driven route navigation: recurrent PPO over fused ego-motion and
visual embedding channels, with corruption models and an evaluation
harness for robustness studies."""

__version__ = "0.1.0"

from . import errors, evalharness, kernels, percept, policynet, ppo, routeworld

__all__ = ["errors", "evalharness", "kernels", "percept", "policynet",
           "ppo", "routeworld", "__version__"]
