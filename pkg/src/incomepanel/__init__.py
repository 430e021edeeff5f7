"""Income-class prediction on longitudinal survey panels.

Data preparation, from-scratch learners (random forest, SVM via SMO,
multilayer perceptron), evaluation metrics, Shapley attributions and a
configuration-driven experiment runner.
"""

__version__ = "0.1.0"
