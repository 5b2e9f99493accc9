"""Adversarial robustness evaluation for text classifiers.

Homograph and embedding-neighbour perturbations, perturbed training regimes and
ensembles, attack test sets, and error / confidence / collapsed-label metrics.
"""
__version__ = "0.1.0"
