"""Mean-shift dynamics and the anti-diffusion PDE that models them."""

__version__ = "0.1.0"
