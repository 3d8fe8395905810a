"""Continual mean estimation under user-level differential privacy.

A stream of (time, user, value) events is consumed one event at a time and a
mean estimate is published at every step.  Privacy is enforced at the user
level: the full output sequence changes by at most an e^eps factor when all
samples of any single user change.  The package provides

* tree-aggregation counters over dyadic blocks (``binmech``),
* a per-user exponential withhold-release scheduler (``withhold``),
* truncation intervals that shrink per-user sensitivity (``truncate``),
* an exponential-mechanism private median used as a prior (``median``),
* five continual estimators built from those parts (``estimators``),
* stream generation and serialization (``streams``),
* an experiment/auditing harness and CLI (``harness``, ``cli``).
"""

from contmean.estimators import EstimatorConfig, make_estimator

__all__ = ["EstimatorConfig", "make_estimator"]
__version__ = "0.1.0"
