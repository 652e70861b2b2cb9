"""Pinned directed polymers in a random environment: Galerkin-truncated gradient flows and their Gibbs measures"""
