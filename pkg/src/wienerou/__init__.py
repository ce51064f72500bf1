"""Infinite-dimensional Ornstein-Uhlenbeck processes on Wiener space."""
