"""Ricci flow with surgery on cohomogeneity-one 4-metrics.

Evolves warped-product metrics g = phi^2 dx^2 + psi^2 g_{S^3/Gamma} under
Ricci flow, monitors curvature pinching and neck formation, performs
Hamilton-style surgery at scheduled curvature thresholds, and keeps the
connected-sum bookkeeping needed to reconstruct the initial space from the
pieces removed along the way.
"""

__version__ = "0.1.0"
