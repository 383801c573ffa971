"""Markov adaptive importance sampling."""
