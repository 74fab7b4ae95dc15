"""
S-adic Diophantine approximation toolkit: Dirichlet's theorem over K_S,
flows on S-arithmetic lattices and quantitative nondivergence checks.
"""

__version__ = "1.0.0"
