"""Causal diagnosis of group inequality in sequential decision processes.

Modules:

* ``causal``: plug-in direct/indirect effect estimators, gap decomposition,
  dynamics-fairness checks and an exact oracle for small discrete models.
* ``analytic``: closed-form effects of the logistic threshold reward model.
* ``envs``: two-group Allocation and Lending simulators.
* ``dynamics``: probabilistic MLP ensemble for (z, s, a) -> (s', r).
* ``planner``: CEM planning (PETS, FairA, FairS, InsightFair) and the
  model-based learning loop.
* ``harness`` / ``cli``: experiment drivers, CSV and SVG output.
"""

__version__ = "0.1.0"
