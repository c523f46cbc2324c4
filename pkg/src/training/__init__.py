"""
Training Package

Predictors, the SGD optimizer and the training loop.
"""
