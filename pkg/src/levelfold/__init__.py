"""Fold balanced secret-dependent code into level-interleaved layouts and check the result."""
