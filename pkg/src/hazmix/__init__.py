"""Bayesian Markov degradation-hazard modeling with heterogeneous pump effects.

Pipeline: inspection records -> state discretization -> covariate features ->
random-effect / finite-mixture hazard models fitted by full-rank ADVI or NUTS
-> diagnostics, interpretable cluster selection, and degradation curves.
"""

__version__ = "0.1.0"
