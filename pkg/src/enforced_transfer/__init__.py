"""Enforced Transfer domain adaptation at desk scale."""
