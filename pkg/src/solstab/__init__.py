"""Linear and dynamical stability of rotationally symmetric Ricci solitons.

Subpackages by dependency order: geometry (warped-product calculus),
solitons (profiles: closed forms and shooting), spectral (weighted
eigenproblems and integral identities), flow (linearized and modified
nonlinear flows), stability (sufficient-criteria reports), cli (batch
entry point). See CONVENTIONS.md for the sign conventions.
"""

from . import geometry, solitons, spectral, flow, stability

__version__ = "0.1.0"

__all__ = ["geometry", "solitons", "spectral", "flow", "stability"]
