"""Multiple-curve affine term-structure model.

Fits ordered exponential-martingale models to initial OIS/LIBOR term
structures, prices caps, swaptions, and basis swaptions by Fourier and
boundary-approximation methods, and validates every analytic price against
a built-in Monte Carlo oracle.
"""

__version__ = "0.1.0"
