"""Pointwise curvature algebra for 4-dimensional metrics.

The curvature operator of a 4-manifold, viewed as a symmetric endomorphism of
the 2-forms, splits over Lambda^2 = Lambda^+ (+) Lambda^- into blocks

    [ A  B ]
    [ B^T C ]

once an orthonormal basis of self-dual / anti-self-dual 2-forms is fixed.  We
use phi_i(+-) = (e0^ei +- ej^ek)/sqrt(2) with (i,j,k) cyclic in (1,2,3).  The
sorted eigenvalues a1<=a2<=a3 of A, c1<=c2<=c3 of C and b1<=b2<=b3 of
sqrt(B B^T) drive every pinching predicate in this package:

* uniformly positive isotropic curvature (PIC) is a1+a2 >= c and c1+c2 >= c,
* the evolving pinching inequalities bound a3, b3, c3 against a1, c1,
* the restricted condition a3 <= Psi*a1, c3 <= Psi*c1, b3^2 <= a1*c1.

An independent brute-force oracle minimises the raw frame expression

    R_0202 + R_0303 + R_1212 + R_1313 - 2*R_0123

over sampled orthonormal frames; under the basis convention above its minimum
equals 2*min(a1+a2, c1+c2).  Both normalisation constants are pinned by tests
on constant-curvature input (see FRAME_ORACLE_FACTOR, KAPPA_NORM).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "KAPPA_NORM",
    "FRAME_ORACLE_FACTOR",
    "AlgebraicCurvature",
    "CurvatureBlocks",
    "CurvatureSpectrum",
    "PinchingConstants",
    "PinchingReport",
    "decompose",
    "reassemble",
    "spectrum",
    "pic_margin",
    "pic_margin_frame_oracle",
    "restricted_pic_check",
    "pinching_check",
    "constant_curvature_tensor",
    "warped_product_tensor",
    "random_curvature_tensor",
]

# Scalar curvature from block traces: R = KAPPA_NORM * (tr A + tr C).
# Pinned by requiring R = 12/rho^2 on the round 4-sphere of radius rho.
KAPPA_NORM = 2.0

# Frame-expression minimum = FRAME_ORACLE_FACTOR * min(a1+a2, c1+c2).
# Pinned on constant-curvature tensors where the expression equals 4k.
FRAME_ORACLE_FACTOR = 2.0

# Index pairs spanning Lambda^2 in the order used throughout: the mixed
# planes (0,i) first, then their Hodge partners.  phi_i(+-) combines row i
# with row i+3.
_PAIRS = ((0, 1), (0, 2), (0, 3), (2, 3), (3, 1), (1, 2))

_SYMMETRY_TOL = 1e-12
_TRACE_TOL = 1e-10
_ROUNDTRIP_TOL = 1e-10


def _as_operator(r4: np.ndarray) -> np.ndarray:
    """6x6 matrix of the curvature operator in the e_i^e_j pair basis."""
    m = np.empty((6, 6))
    for p, (i, j) in enumerate(_PAIRS):
        for q, (k, l) in enumerate(_PAIRS):
            m[p, q] = r4[i, j, k, l]
    return m


def _from_operator(m: np.ndarray) -> np.ndarray:
    """Rebuild R_{ijkl} from the 6x6 pair-basis matrix."""
    r4 = np.zeros((4, 4, 4, 4))
    for p, (i, j) in enumerate(_PAIRS):
        for q, (k, l) in enumerate(_PAIRS):
            v = m[p, q]
            r4[i, j, k, l] = v
            r4[j, i, k, l] = -v
            r4[i, j, l, k] = -v
            r4[j, i, l, k] = v
    return r4


@dataclass(frozen=True)
class AlgebraicCurvature:
    """An algebraic curvature tensor R_{ijkl} in an orthonormal 4-frame.

    Index symmetries (antisymmetry in each pair, pair exchange, first Bianchi)
    are verified on construction to 1e-12 relative to the tensor scale.
    """

    components: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.components, dtype=float)
        if r.shape != (4, 4, 4, 4):
            raise ValueError(f"curvature tensor must be 4x4x4x4, got {r.shape}")
        object.__setattr__(self, "components", r)
        scale = max(1.0, float(np.max(np.abs(r))))
        tol = _SYMMETRY_TOL * scale
        if np.max(np.abs(r + np.swapaxes(r, 0, 1))) > tol:
            raise ValueError("curvature tensor not antisymmetric in (i,j)")
        if np.max(np.abs(r + np.swapaxes(r, 2, 3))) > tol:
            raise ValueError("curvature tensor not antisymmetric in (k,l)")
        if np.max(np.abs(r - np.transpose(r, (2, 3, 0, 1)))) > tol:
            raise ValueError("curvature tensor violates pair symmetry")
        bianchi = r + np.transpose(r, (0, 2, 3, 1)) + np.transpose(r, (0, 3, 1, 2))
        if np.max(np.abs(bianchi)) > tol:
            raise ValueError("curvature tensor violates the first Bianchi identity")

    def frame_expression(self, q: np.ndarray | None = None) -> float:
        """PIC frame expression in the (possibly rotated) frame q[:, a]."""
        r = self.components
        if q is not None:
            r = np.einsum("ijkl,ia,jb,kc,ld->abcd", r, q, q, q, q)
        return float(
            r[0, 2, 0, 2] + r[0, 3, 0, 3] + r[1, 2, 1, 2] + r[1, 3, 1, 3]
            - 2.0 * r[0, 1, 2, 3]
        )


@dataclass(frozen=True)
class CurvatureBlocks:
    """Blocks A, B, C of the curvature operator in the phi(+-) basis."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.A, dtype=float)
        b = np.asarray(self.B, dtype=float)
        c = np.asarray(self.C, dtype=float)
        for name, blk in (("A", a), ("B", b), ("C", c)):
            if blk.shape != (3, 3):
                raise ValueError(f"block {name} must be 3x3")
        scale = max(1.0, float(max(np.max(np.abs(a)), np.max(np.abs(c)))))
        if np.max(np.abs(a - a.T)) > _TRACE_TOL * scale:
            raise ValueError("block A not symmetric")
        if np.max(np.abs(c - c.T)) > _TRACE_TOL * scale:
            raise ValueError("block C not symmetric")
        if abs(np.trace(a) - np.trace(c)) > _TRACE_TOL * scale:
            raise ValueError("trace(A) != trace(C): not an algebraic curvature operator")
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "C", c)


@dataclass(frozen=True)
class CurvatureSpectrum:
    """Sorted eigenvalue triples of A, C, sqrt(B B^T) plus scalar curvature."""

    a: tuple[float, float, float]
    c: tuple[float, float, float]
    b: tuple[float, float, float]
    R: float

    def __post_init__(self):
        for name, triple in (("a", self.a), ("c", self.c), ("b", self.b)):
            if not (triple[0] <= triple[1] + 1e-15 and triple[1] <= triple[2] + 1e-15):
                raise ValueError(f"spectrum triple {name} not sorted: {triple}")
        if self.b[0] < -1e-12:
            raise ValueError("singular values b must be nonnegative")

    @property
    def a1(self):
        return self.a[0]

    @property
    def a3(self):
        return self.a[2]

    @property
    def c1(self):
        return self.c[0]

    @property
    def c3(self):
        return self.c[2]

    @property
    def b3(self):
        return self.b[2]


@dataclass(frozen=True)
class PinchingConstants:
    """Constants (c, K, rho, Psi, L, P, S) entering the pinching inequalities.

    c is the PIC lower bound and K the initial curvature bound; rho shifts
    a1, c1 away from zero, Psi bounds the top eigenvalues, and (L, P, S)
    control the time-dependent bound on b3.
    """

    c: float
    K: float
    rho: float
    Psi: float
    L: float
    P: float
    S: float

    def __post_init__(self):
        for name in ("c", "K", "rho", "Psi", "L", "P", "S"):
            if getattr(self, name) <= 0:
                raise ValueError(f"pinching constant {name} must be positive")


@dataclass(frozen=True)
class PinchingReport:
    """Outcome of the pointwise pinching inequalities at one spacetime point."""

    a1_shift_positive: bool
    c1_shift_positive: bool
    psi_bound_a: bool
    psi_bound_c: bool
    b3_ratio_bound: bool
    worst_margin: float

    @property
    def ok(self) -> bool:
        return (
            self.a1_shift_positive
            and self.c1_shift_positive
            and self.psi_bound_a
            and self.psi_bound_c
            and self.b3_ratio_bound
        )


def decompose(tensor: AlgebraicCurvature) -> CurvatureBlocks:
    """Split the curvature operator into its A, B, C blocks.

    The pair basis (e0^ei, ej^ek) maps to phi(+-) by the orthogonal
    half-sum/half-difference transform, so the blocks are simple
    combinations of the 3x3 corners of the 6x6 operator matrix.
    """
    m = _as_operator(tensor.components)
    muu = m[:3, :3]
    muv = m[:3, 3:]
    mvu = m[3:, :3]
    mvv = m[3:, 3:]
    a = 0.5 * (muu + muv + mvu + mvv)
    c = 0.5 * (muu - muv - mvu + mvv)
    b = 0.5 * (muu - muv + mvu - mvv)
    a = 0.5 * (a + a.T)
    c = 0.5 * (c + c.T)
    return CurvatureBlocks(A=a, B=b, C=c)


def reassemble(blocks: CurvatureBlocks) -> AlgebraicCurvature:
    """Inverse of decompose: rebuild R_{ijkl} from the phi(+-) blocks."""
    a, b, c = blocks.A, blocks.B, blocks.C
    muu = 0.5 * (a + c + b + b.T)
    muv = 0.5 * (a - c - b + b.T)
    mvu = 0.5 * (a - c + b - b.T)
    mvv = 0.5 * (a + c - b - b.T)
    m = np.block([[muu, muv], [mvu, mvv]])
    return AlgebraicCurvature(_from_operator(m))


def spectrum(blocks: CurvatureBlocks) -> CurvatureSpectrum:
    """Sorted eigenvalues of the blocks and the scalar curvature."""
    a_eig = np.linalg.eigvalsh(blocks.A)
    c_eig = np.linalg.eigvalsh(blocks.C)
    b_sv = np.sort(np.linalg.svd(blocks.B, compute_uv=False))
    r = KAPPA_NORM * (np.trace(blocks.A) + np.trace(blocks.C))
    return CurvatureSpectrum(
        a=tuple(float(v) for v in a_eig),
        c=tuple(float(v) for v in c_eig),
        b=tuple(float(v) for v in b_sv),
        R=float(r),
    )


def pic_margin(spec: CurvatureSpectrum) -> float:
    """Isotropic-curvature margin min(a1+a2, c1+c2)."""
    return min(spec.a[0] + spec.a[1], spec.c[0] + spec.c[1])


def _so4_generators() -> list[tuple[int, int]]:
    return [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


def _plane_rotation(i: int, j: int, angle: float) -> np.ndarray:
    q = np.eye(4)
    ca, sa = np.cos(angle), np.sin(angle)
    q[i, i] = ca
    q[j, j] = ca
    q[i, j] = -sa
    q[j, i] = sa
    return q


def _frame_values(r4: np.ndarray, qs: np.ndarray) -> np.ndarray:
    """Vectorised frame expression over a batch of rotations qs[n, :, a]."""
    def comp(a, b, c, d):
        return np.einsum(
            "ijkl,ni,nj,nk,nl->n",
            r4,
            qs[:, :, a],
            qs[:, :, b],
            qs[:, :, c],
            qs[:, :, d],
            optimize=True,
        )

    return (
        comp(0, 2, 0, 2)
        + comp(0, 3, 0, 3)
        + comp(1, 2, 1, 2)
        + comp(1, 3, 1, 3)
        - 2.0 * comp(0, 1, 2, 3)
    )


def pic_margin_frame_oracle(
    tensor: AlgebraicCurvature,
    samples: int,
    seed: int = 0,
    refine_iters: int = 100,
) -> float:
    """Brute-force minimum of the raw frame expression over orthonormal frames.

    Draws `samples` Haar-ish random rotations (QR of Gaussian matrices),
    evaluates the frame expression on each, then polishes the best frame by
    coordinate descent over the six rotation planes with step halving.  Kept
    deliberately independent of the eigenvalue route so it can serve as the
    oracle for pic_margin.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    r4 = tensor.components

    g = rng.standard_normal((samples, 4, 4))
    qs, rs = np.linalg.qr(g)
    # Fix the QR sign ambiguity so the sample is rotation-distributed.
    signs = np.sign(np.einsum("nii->ni", rs))
    signs[signs == 0] = 1.0
    qs = qs * signs[:, None, :]

    vals = _frame_values(r4, qs)
    best_idx = int(np.argmin(vals))
    best_q = qs[best_idx]
    best = float(vals[best_idx])

    planes = _so4_generators()
    step = 0.2
    for _ in range(refine_iters):
        improved = False
        for (i, j) in planes:
            for sign in (1.0, -1.0):
                q_try = best_q @ _plane_rotation(i, j, sign * step)
                v = tensor.frame_expression(q_try)
                if v < best - 1e-300:
                    best, best_q = v, q_try
                    improved = True
        if not improved:
            step *= 0.5
            if step < 1e-10:
                break
    return best


def restricted_pic_check(spec: CurvatureSpectrum, Psi: float) -> bool:
    """Restricted isotropic curvature: a3<=Psi*a1, c3<=Psi*c1, b3^2<=a1*c1."""
    if Psi <= 0:
        raise ValueError("Psi must be positive")
    tol = 1e-12 * max(1.0, abs(spec.a3), abs(spec.c3), spec.b3**2)
    return (
        spec.a3 <= Psi * spec.a1 + tol
        and spec.c3 <= Psi * spec.c1 + tol
        and spec.b3**2 <= spec.a1 * spec.c1 + tol
    )


def pinching_check(
    spec: CurvatureSpectrum, consts: PinchingConstants, t: float
) -> PinchingReport:
    """Evaluate the time-dependent pinching inequalities at time t.

    Checks a1+rho>0, c1+rho>0, max(a3,b3,c3) <= Psi*(a1+rho) and <= Psi*(c1+rho),
    and b3/sqrt((a1+rho)(c1+rho)) <= 1 + L*e^{Pt}/max(ln sqrt((a1+rho)(c1+rho)), S).
    The worst margin is the most negative slack (inequality minus its bound,
    normalised per inequality); nonnegative means everything holds.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    rho = consts.rho
    sa = spec.a1 + rho
    sc = spec.c1 + rho
    top = max(spec.a3, spec.b3, spec.c3)

    margins = [sa, sc]
    ok_a = sa > 0
    ok_c = sc > 0
    psi_a = top <= consts.Psi * sa if ok_a else False
    psi_c = top <= consts.Psi * sc if ok_c else False
    if ok_a:
        margins.append(consts.Psi * sa - top)
    if ok_c:
        margins.append(consts.Psi * sc - top)

    ratio_ok = False
    if ok_a and ok_c:
        root = np.sqrt(sa * sc)
        bound = 1.0 + consts.L * np.exp(consts.P * t) / max(np.log(root), consts.S)
        ratio = spec.b3 / root
        ratio_ok = ratio <= bound
        margins.append(bound - ratio)

    return PinchingReport(
        a1_shift_positive=ok_a,
        c1_shift_positive=ok_c,
        psi_bound_a=psi_a,
        psi_bound_c=psi_c,
        b3_ratio_bound=ratio_ok,
        worst_margin=float(min(margins)),
    )


def constant_curvature_tensor(k: float) -> AlgebraicCurvature:
    """R_{ijkl} = k (delta_ik delta_jl - delta_il delta_jk)."""
    eye = np.eye(4)
    r4 = k * (np.einsum("ik,jl->ijkl", eye, eye) - np.einsum("il,jk->ijkl", eye, eye))
    return AlgebraicCurvature(r4)


def warped_product_tensor(k_mix: float, k_sph: float) -> AlgebraicCurvature:
    """Diagonal curvature of a warped product over an interval.

    Planes containing the interval direction e0 carry sectional curvature
    k_mix, fibre planes carry k_sph; all off-diagonal components vanish.
    """
    r4 = np.zeros((4, 4, 4, 4))
    for i in range(1, 4):
        r4[0, i, 0, i] = k_mix
        r4[i, 0, i, 0] = k_mix
        r4[0, i, i, 0] = -k_mix
        r4[i, 0, 0, i] = -k_mix
    for i in range(1, 4):
        for j in range(1, 4):
            if i != j:
                r4[i, j, i, j] = k_sph
                r4[i, j, j, i] = -k_sph
    return AlgebraicCurvature(r4)


def random_curvature_tensor(rng: np.random.Generator, scale: float = 1.0) -> AlgebraicCurvature:
    """Random valid algebraic curvature tensor.

    Draws a random symmetric operator on Lambda^2 and projects out the
    Bianchi-violating direction, which in block terms is the trace(A)-trace(C)
    mismatch (the Hodge-star component of the operator).
    """
    m = rng.standard_normal((6, 6)) * scale
    m = 0.5 * (m + m.T)
    muu = m[:3, :3]
    muv = m[:3, 3:]
    mvu = m[3:, :3]
    mvv = m[3:, 3:]
    a = 0.5 * (muu + muv + mvu + mvv)
    c = 0.5 * (muu - muv - mvu + mvv)
    b = 0.5 * (muu - muv + mvu - mvv)
    shift = (np.trace(a) - np.trace(c)) / 6.0
    a = a - shift * np.eye(3)
    c = c + shift * np.eye(3)
    return reassemble(CurvatureBlocks(A=0.5 * (a + a.T), B=b, C=0.5 * (c + c.T)))
