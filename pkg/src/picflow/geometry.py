"""Cohomogeneity-one 4-metrics g = phi^2 dx^2 + psi^2 g_{S^3/Gamma}.

A profile stores the warp factors (phi, psi) on a grid over [0,1] together
with the cross-section group and the boundary kinds (smooth or orbifold tips
where psi vanishes, or a periodic seam).  In arclength s the two sectional
curvatures are

    K_mix = -psi_ss / psi          (planes containing the interval direction)
    K_sph = (1 - psi_s^2) / psi^2  (fibre planes)

and the scalar curvature is R = 6 (K_mix + K_sph).  Differentiation uses
five-point stencils on the (generally nonuniform) arclength grid; at a tip
the profile is extended by odd parity and the nodes nearest the tip are
evaluated through a local odd polynomial fit, which keeps K_sph finite and
equal to K_mix in the limit.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import PchipInterpolator

from .curvature import CurvatureSpectrum, decompose, spectrum, warped_product_tensor

__all__ = [
    "TIP",
    "PERIODIC",
    "CrossSection",
    "WarpedProfile",
    "PointGeometry",
    "GeometryArrays",
    "profile_geometry",
    "point_geometry",
    "arclength_remesh",
    "ball_volume",
    "make_initial",
    "write_snapshot",
    "read_snapshot",
]

TIP = "tip"
PERIODIC = "periodic-seam"

# Tip closing must have unit slope within this tolerance (smooth or orbifold
# closing condition for psi ~ s near the axis).
TIP_SLOPE_TOL = 5e-2

# Nodes within this many grid points of a tip take extrapolated curvatures.
_TIP_FIT_SKIRT = 4


@dataclass(frozen=True)
class CrossSection:
    """Finite fixed-point-free isometry group Gamma of S^3, by label and order.

    The quotient only rescales fibre volume by 1/order; local curvature is
    that of the round S^3.
    """

    group_label: str = "trivial"
    order: int = 1

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("group order must be >= 1")
        if self.order == 1 and self.group_label not in ("trivial", "1", "{1}"):
            raise ValueError("order-1 cross-section must carry the trivial label")

    @property
    def volume_factor(self) -> float:
        """Volume of the unit cross-section, 2 pi^2 / |Gamma|."""
        return 2.0 * np.pi**2 / self.order

    @property
    def is_trivial(self) -> bool:
        return self.order == 1


@dataclass(frozen=True)
class WarpedProfile:
    """The evolving metric: warp factors on a grid over [0,1].

    Treated as immutable; evolution and surgery build new profiles.
    """

    x: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    cross_section: CrossSection = field(default_factory=CrossSection)
    left_boundary: str = TIP
    right_boundary: str = TIP
    t: float = 0.0
    component_id: str = "c0"

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float)
        phi = np.ascontiguousarray(self.phi, dtype=float)
        psi = np.ascontiguousarray(self.psi, dtype=float)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "psi", psi)
        self.validate()

    def validate(self):
        x, phi, psi = self.x, self.phi, self.psi
        n = x.size
        if n < 9:
            raise ValueError("profile needs at least 9 nodes")
        if phi.shape != (n,) or psi.shape != (n,):
            raise ValueError("x, phi, psi must have matching shapes")
        if np.any(np.diff(x) <= 0):
            raise ValueError("x must be strictly increasing")
        if x[0] < 0 or x[-1] > 1 + 1e-12:
            raise ValueError("x must lie in [0, 1]")
        if np.any(~np.isfinite(phi)) or np.any(~np.isfinite(psi)):
            raise ValueError("non-finite warp factor")
        if np.any(phi <= 0):
            raise ValueError("phi must be positive")
        kinds = (self.left_boundary, self.right_boundary)
        for k in kinds:
            if k not in (TIP, PERIODIC):
                raise ValueError(f"unknown boundary kind {k!r}")
        if (self.left_boundary == PERIODIC) != (self.right_boundary == PERIODIC):
            raise ValueError("periodic seam must appear on both ends or neither")
        interior = slice(1, n - 1) if not self.is_periodic else slice(0, n)
        if np.any(psi[interior] <= 0):
            raise ValueError("psi must be positive at interior nodes")
        if not self.is_periodic:
            s = self.arclength()
            if self.left_boundary == TIP:
                if psi[0] != 0.0:
                    raise ValueError("psi must vanish exactly at a tip")
                slope = psi[1] / (s[1] - s[0])
                if abs(slope - 1.0) > TIP_SLOPE_TOL:
                    raise ValueError(f"left tip slope {slope:.4f} not within {TIP_SLOPE_TOL} of 1")
            if self.right_boundary == TIP:
                if psi[-1] != 0.0:
                    raise ValueError("psi must vanish exactly at a tip")
                slope = psi[-2] / (s[-1] - s[-2])
                if abs(slope - 1.0) > TIP_SLOPE_TOL:
                    raise ValueError(f"right tip slope {slope:.4f} not within {TIP_SLOPE_TOL} of 1")

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def is_periodic(self) -> bool:
        return self.left_boundary == PERIODIC

    def arclength(self) -> np.ndarray:
        """Cumulative arclength of the interval direction, s[0] = 0."""
        dx = np.diff(self.x)
        ds = 0.5 * (self.phi[:-1] + self.phi[1:]) * dx
        s = np.empty(self.n)
        s[0] = 0.0
        np.cumsum(ds, out=s[1:])
        return s

    def total_length(self) -> float:
        s = self.arclength()
        if self.is_periodic:
            wrap_dx = 1.0 - self.x[-1] + self.x[0]
            return float(s[-1] + 0.5 * (self.phi[-1] + self.phi[0]) * wrap_dx)
        return float(s[-1])

    def spacing_ratio(self) -> float:
        s = self.arclength()
        if self.is_periodic:
            wrap = self.total_length() - s[-1]
            ds = np.append(np.diff(s), wrap)
        else:
            ds = np.diff(s)
        return float(np.max(ds) / np.min(ds))

    def with_time(self, t: float) -> "WarpedProfile":
        return replace(self, t=t)


def unchecked_evolved_profile(
    template: WarpedProfile, phi: np.ndarray, psi: np.ndarray, t: float
) -> WarpedProfile:
    """Bare profile construction for the stepper's hot path.

    Skips __post_init__ validation; callers must have verified positivity of
    the new warp factors themselves.  Everything else is copied from the
    template.
    """
    obj = object.__new__(WarpedProfile)
    object.__setattr__(obj, "x", template.x)
    object.__setattr__(obj, "phi", phi)
    object.__setattr__(obj, "psi", psi)
    object.__setattr__(obj, "cross_section", template.cross_section)
    object.__setattr__(obj, "left_boundary", template.left_boundary)
    object.__setattr__(obj, "right_boundary", template.right_boundary)
    object.__setattr__(obj, "t", t)
    object.__setattr__(obj, "component_id", template.component_id)
    return obj


@dataclass(frozen=True)
class PointGeometry:
    """Pointwise geometric data at one node."""

    K_mix: float
    K_sph: float
    R: float
    spectrum: CurvatureSpectrum


@dataclass(frozen=True)
class GeometryArrays:
    """Vectorised pointwise geometry over all nodes of a profile."""

    s: np.ndarray
    psi_s: np.ndarray
    psi_ss: np.ndarray
    K_mix: np.ndarray
    K_sph: np.ndarray
    R: np.ndarray
    total_length: float

    @property
    def pic_margin(self) -> np.ndarray:
        """Warped-product isotropic margin a1+a2 = c1+c2 = K_mix + K_sph."""
        return self.K_mix + self.K_sph

    @property
    def abs_rm_max(self) -> float:
        return float(max(np.max(np.abs(self.K_mix)), np.max(np.abs(self.K_sph))))


def fd_weights(x0: float, xs: np.ndarray, m: int) -> np.ndarray:
    """Fornberg weights for derivatives 0..m at x0 from nodes xs.

    Returns an (m+1, len(xs)) array; row k gives the k-th derivative weights.
    """
    n = len(xs)
    w = np.zeros((m + 1, n))
    c1 = 1.0
    c4 = xs[0] - x0
    w[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = xs[i] - x0
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    w[k, i] = c1 * (k * w[k - 1, i - 1] - c5 * w[k, i - 1]) / c2
                w[0, i] = -c1 * c5 * w[0, i - 1] / c2
            for k in range(mn, 0, -1):
                w[k, j] = ((c4 * w[k, j] - k * w[k - 1, j])) / c3
            w[0, j] = c4 * w[0, j] / c3
        c1 = c2
    return w


def _extended_grid(profile: WarpedProfile, pad: int):
    """Arclength and psi padded by `pad` ghost nodes on each side.

    Tips use odd parity (psi(-s) = -psi(s)); periodic seams wrap.
    """
    s = profile.arclength()
    psi = profile.psi
    n = profile.n
    if profile.is_periodic:
        total = profile.total_length()
        s_ext = np.concatenate([s[-pad:] - total, s, s[:pad] + total])
        p_ext = np.concatenate([psi[-pad:], psi, psi[:pad]])
    else:
        sl = 2 * s[0] - s[1 : pad + 1][::-1]
        sr = 2 * s[-1] - s[-pad - 1 : -1][::-1]
        pl = -psi[1 : pad + 1][::-1]
        pr = -psi[-pad - 1 : -1][::-1]
        s_ext = np.concatenate([sl, s, sr])
        p_ext = np.concatenate([pl, psi, pr])
    return s, s_ext, p_ext


def arc_derivatives_3pt(profile: WarpedProfile):
    """(psi_s, psi_ss) from 3-point nonuniform stencils with ghost handling."""
    s, s_ext, p_ext = _extended_grid(profile, 1)
    hm = s_ext[1:-1] - s_ext[:-2]
    hp = s_ext[2:] - s_ext[1:-1]
    pm, p0, pp = p_ext[:-2], p_ext[1:-1], p_ext[2:]
    denom = hm * hp * (hm + hp)
    psi_s = (-hp * hp * pm + (hp * hp - hm * hm) * p0 + hm * hm * pp) / denom
    psi_ss = 2.0 * (hp * pm - (hm + hp) * p0 + hm * pp) / denom
    return psi_s, psi_ss


def _five_point_derivatives(s_ext: np.ndarray, p_ext: np.ndarray, n: int, pad: int):
    """Vectorised 4th-order first/second derivatives on a nonuniform grid.

    Closed-form Lagrange differentiation weights at the centre node of each
    5-point window; equivalent to solving the local Vandermonde systems but
    an order of magnitude cheaper.
    """
    # Offsets d_m = s_m - s_centre for the four off-centre nodes of each window.
    dm = np.empty((n, 4))
    ym = np.empty((n, 4))
    c0 = pad - 2
    centre_s = s_ext[pad : pad + n]
    for col, k in enumerate((-2, -1, 1, 2)):
        dm[:, col] = s_ext[c0 + k + 2 : c0 + k + 2 + n] - centre_s
        ym[:, col] = p_ext[c0 + k + 2 : c0 + k + 2 + n]
    yc = p_ext[pad : pad + n]

    inv = 1.0 / dm
    s1 = -np.sum(inv, axis=1)
    s2 = np.sum(inv * inv, axis=1)
    prod_all = np.prod(dm, axis=1)
    # L_j'(0) = prod_{m!=j,c}(-d_m) / (d_j * prod_{m!=j,c}(d_j - d_m))
    numer = -(prod_all[:, None] * inv)
    diff = dm[:, :, None] - dm[:, None, :]
    diff[:, np.arange(4), np.arange(4)] = 1.0
    denom = dm * np.prod(diff, axis=2)
    w1 = numer / denom
    # L_j''(0) = 2 L_j'(0) * sum_{m!=j,c} 1/(0 - d_m)
    sum_j = -(np.sum(inv, axis=1)[:, None] - inv)
    w2 = 2.0 * w1 * sum_j

    psi_s = np.sum(w1 * ym, axis=1) + s1 * yc
    psi_ss = np.sum(w2 * ym, axis=1) + (s1 * s1 - s2) * yc
    return psi_s, psi_ss


def _linear_extrapolation(idx_fit: np.ndarray, vals: np.ndarray, idx_eval: np.ndarray):
    """Least-squares line through (idx_fit, vals), evaluated at idx_eval."""
    x0 = idx_fit.mean()
    dx = idx_fit - x0
    slope = np.dot(dx, vals - vals.mean()) / np.dot(dx, dx)
    return vals.mean() + slope * (idx_eval - x0)


def profile_geometry(profile: WarpedProfile) -> GeometryArrays:
    """Pointwise K_mix, K_sph, R over all nodes, tip-aware.

    Fails if psi <= 0 at an interior node (degenerate metric); tips are the
    only admissible zeros.
    """
    n = profile.n
    psi = profile.psi
    interior = slice(1, n - 1) if not profile.is_periodic else slice(0, n)
    if np.any(psi[interior] <= 0):
        raise ValueError("degenerate metric: psi <= 0 at an interior node")

    pad = 2
    s, s_ext, p_ext = _extended_grid(profile, pad)
    psi_s, psi_ss = _five_point_derivatives(s_ext, p_ext, n, pad)

    with np.errstate(divide="ignore", invalid="ignore"):
        k_mix = -psi_ss / psi
        k_sph = (1.0 - psi_s**2) / psi**2

    if not profile.is_periodic:
        # The divisions by psi are untrustworthy near a tip: K_sph compares
        # 1 - psi_s^2 (which vanishes like the squared rescaled distance to
        # the axis) against grid-level noise in psi_s, so curvatures are
        # extrapolated across the skirt where 1 - psi_s^2 < 0.04 -- a
        # scale-free criterion -- and the smooth-closing limit K_mix = K_sph
        # is imposed at the tip itself by averaging the two extrapolants.
        limit = max(2, n // 4)
        one = 1.0 - psi_s * psi_s
        skirt = _TIP_FIT_SKIRT
        while skirt < limit and one[skirt] < 0.04:
            skirt += 1
        m = skirt + 5
        idx_fit = np.arange(skirt, min(m, n - 1), dtype=float)
        idx_eval = np.arange(skirt, dtype=float)
        if profile.left_boundary == TIP:
            km = _linear_extrapolation(idx_fit, k_mix[skirt:m], idx_eval)
            ks = _linear_extrapolation(idx_fit, k_sph[skirt:m], idx_eval)
            k_mix[:skirt] = km
            k_sph[:skirt] = ks
            k_mix[0] = k_sph[0] = 0.5 * (km[0] + ks[0])
        skirt_r = _TIP_FIT_SKIRT
        while skirt_r < limit and one[n - 1 - skirt_r] < 0.04:
            skirt_r += 1
        m_r = skirt_r + 5
        idx_fit_r = np.arange(skirt_r, min(m_r, n - 1), dtype=float)
        idx_eval_r = np.arange(skirt_r, dtype=float)
        if profile.right_boundary == TIP:
            km = _linear_extrapolation(idx_fit_r, k_mix[::-1][skirt_r:m_r], idx_eval_r)
            ks = _linear_extrapolation(idx_fit_r, k_sph[::-1][skirt_r:m_r], idx_eval_r)
            k_mix[-skirt_r:] = km[::-1]
            k_sph[-skirt_r:] = ks[::-1]
            k_mix[-1] = k_sph[-1] = 0.5 * (km[0] + ks[0])

    r = 6.0 * (k_mix + k_sph)
    if not np.all(np.isfinite(r)):
        raise FloatingPointError("non-finite curvature")
    if profile.is_periodic:
        wrap_dx = 1.0 - profile.x[-1] + profile.x[0]
        total = float(s[-1] + 0.5 * (profile.phi[-1] + profile.phi[0]) * wrap_dx)
    else:
        total = float(s[-1])
    return GeometryArrays(
        s=s, psi_s=psi_s, psi_ss=psi_ss, K_mix=k_mix, K_sph=k_sph, R=r, total_length=total
    )


def point_geometry(profile: WarpedProfile, node: int) -> PointGeometry:
    """Geometry at one node, with the spectrum built through the full
    curvature algebra (the vectorised path uses the closed warped formulas;
    this one cross-checks them tensor-by-tensor)."""
    if not 0 <= node < profile.n:
        raise IndexError("node out of range")
    geo = profile_geometry(profile)
    k_mix = float(geo.K_mix[node])
    k_sph = float(geo.K_sph[node])
    spec = spectrum(decompose(warped_product_tensor(k_mix, k_sph)))
    r = 6.0 * (k_mix + k_sph)
    if abs(spec.R - r) > 1e-8 * max(1.0, abs(r)):
        raise AssertionError("warped reduction inconsistent with curvature algebra")
    return PointGeometry(K_mix=k_mix, K_sph=k_sph, R=r, spectrum=spec)


def arclength_remesh(profile: WarpedProfile, n: int | None = None) -> WarpedProfile:
    """Resample to equal arclength spacing by monotone cubic interpolation.

    Total arclength and tip values are preserved; the new grid carries
    x = s / L and a constant phi = L.
    """
    n_new = profile.n if n is None else int(n)
    s = profile.arclength()
    if profile.is_periodic:
        total = profile.total_length()
        s_ext = np.concatenate([s, [total]])
        psi_ext = np.concatenate([profile.psi, [profile.psi[0]]])
        interp = PchipInterpolator(s_ext, psi_ext)
        s_new = np.linspace(0.0, total, n_new, endpoint=False)
        psi_new = interp(s_new)
        x_new = s_new / total
        phi_new = np.full(n_new, total)
    else:
        total = float(s[-1])
        interp = PchipInterpolator(s, profile.psi)
        s_new = np.linspace(0.0, total, n_new)
        psi_new = interp(s_new)
        psi_new[0] = profile.psi[0]
        psi_new[-1] = profile.psi[-1]
        x_new = s_new / total
        phi_new = np.full(n_new, total)
    return replace(profile, x=x_new, phi=phi_new, psi=psi_new)


def ball_volume(profile: WarpedProfile, center: int, radius: float) -> float:
    """Volume of the metric ball of the given radius around the orbit of a node.

    Geodesics of the symmetric reduction run along the interval, so the ball
    is the arclength slab |s - s_c| <= radius, clipped at tips, and the
    volume is (2 pi^2 / |Gamma|) * integral psi^3 ds over the slab.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    s = profile.arclength()
    psi3 = profile.psi**3
    vf = profile.cross_section.volume_factor

    if profile.is_periodic:
        total = profile.total_length()
        if radius >= total / 2:
            wrap = 0.5 * (psi3[-1] + psi3[0]) * (total - s[-1])
            return float(vf * (np.trapezoid(psi3, s) + wrap))
        # Unroll one period around the centre.
        s3 = np.concatenate([s - total, s, s + total])
        p3 = np.concatenate([psi3, psi3, psi3])
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (p3[1:] + p3[:-1]) * np.diff(s3))])
        sc = s[center] + total
        lo, hi = sc - radius, sc + radius
        return float(vf * (np.interp(hi, s3, cum) - np.interp(lo, s3, cum)))

    cum = np.concatenate([[0.0], np.cumsum(0.5 * (psi3[1:] + psi3[:-1]) * np.diff(s))])
    lo = max(0.0, s[center] - radius)
    hi = min(float(s[-1]), s[center] + radius)
    return float(vf * (np.interp(hi, s, cum) - np.interp(lo, s, cum)))


# ---------------------------------------------------------------------------
# Initial data families
# ---------------------------------------------------------------------------


def _hermite5(t, y0, d0, dd0, y1, d1, dd1, length):
    """Quintic Hermite on [0,1] matching value/slope/curvature at both ends;
    slopes and curvatures are given per unit arclength of the segment."""
    h = length
    a0 = y0
    a1 = d0 * h
    a2 = 0.5 * dd0 * h * h
    b0 = y1
    b1 = d1 * h
    b2 = 0.5 * dd1 * h * h
    c3 = 10 * (b0 - a0) - 6 * a1 - 4 * b1 + (b2 - 3 * a2)
    c4 = -15 * (b0 - a0) + 8 * a1 + 7 * b1 + (3 * a2 - 2 * b2)
    c5 = 6 * (b0 - a0) - 3 * (a1 + b1) + (b2 - a2)
    return a0 + a1 * t + a2 * t * t + c3 * t**3 + c4 * t**4 + c5 * t**5


class _SegmentedCurve:
    """Piecewise profile psi(u) assembled from analytic segments."""

    def __init__(self):
        self.segments = []  # (length, callable on local u in [0, length])

    def add(self, length, func):
        if length > 0:
            self.segments.append((float(length), func))

    @property
    def total(self):
        return sum(l for l, _ in self.segments)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        out = np.empty_like(u)
        start = 0.0
        remaining = np.ones(u.shape, dtype=bool)
        for length, func in self.segments:
            end = start + length
            mask = remaining & (u <= end + 1e-14)
            out[mask] = func(np.clip(u[mask] - start, 0.0, length))
            remaining &= ~mask
            start = end
        out[remaining] = self.segments[-1][1](self.segments[-1][0])
        return out


def _v_taper(v0, d0, dd0, v1, length):
    """Quintic taper in v = psi^2 ending flat: (v0, d0, dd0) -> (v1, 0, 0).

    Working in v makes the uniform-PIC gate linear: the isotropic margin of a
    warped profile is (1 - v''/2)/v, so any taper with v'' < 2 and v > 0 is
    admissible no matter how steep psi itself gets.
    """
    return lambda u: _hermite5(u / length, v0, d0, dd0, v1, 0.0, 0.0, length)


def _taper_admissible(func, length, v_floor):
    u = np.linspace(0.0, length, 512)
    v = func(u)
    if np.any(v < v_floor) or np.any(np.diff(v) > 1e-9):
        return False
    vpp = np.gradient(np.gradient(v, u), u)
    return bool(np.max(vpp) < 1.8)


def _fit_taper(v0, d0, dd0, v1, v_floor, length_min=0.15):
    """Shortest admissible quintic v-taper over a geometric length sweep.

    Admissible means v stays above v_floor, decreases monotonically and keeps
    v'' < 1.8, which leaves a uniform isotropic-curvature margin.
    """
    lt_lo = max(length_min, abs(d0) / 1.8, 1.6 * np.sqrt(max(v0 - v1, 0.0) / 1.8) * 0.5)
    for lt in lt_lo * 1.18 ** np.arange(24):
        func = _v_taper(v0, d0, dd0, v1, lt)
        if _taper_admissible(func, lt, v_floor):
            return lt, func
    return None


def _build_dumbbell_curve(
    lobe_radius: float,
    neck_radius: float,
    neck_width: float,
    collar_radius: float | None,
    collar_length: float,
    taper_length: float | None,
) -> _SegmentedCurve:
    """Assemble v(u) = psi^2 for half the dumbbell, then mirror."""
    rho = lobe_radius
    curve = _SegmentedCurve()

    first_target = collar_radius if collar_radius is not None else neck_radius
    # Riding the sphere arc below psi ~ sqrt(rho * target) leaves no room to
    # brake v' within the PIC budget v'' < 2, so scan exit levels above that.
    exit_floor = 1.1 * np.sqrt(rho * first_target) / rho
    picked = None
    for frac in np.linspace(exit_floor, 0.8, 12):
        alpha = np.arcsin(min(frac, 1.0))
        v_exit = (rho * np.sin(alpha)) ** 2
        dv_exit = -rho * np.sin(2 * alpha)
        ddv_exit = 2 * np.cos(2 * alpha)
        fit = _fit_taper(v_exit, dv_exit, ddv_exit, first_target**2, 0.5 * first_target**2)
        if fit is not None:
            picked = (alpha, fit)
            break
    if picked is None:
        raise ValueError("could not construct a PIC-admissible lobe taper; widen the geometry")
    alpha, (lt, taper) = picked
    if taper_length is not None and taper_length > lt:
        fit = _fit_taper(
            (rho * np.sin(alpha)) ** 2, -rho * np.sin(2 * alpha), 2 * np.cos(2 * alpha),
            first_target**2, 0.5 * first_target**2, length_min=taper_length,
        )
        if fit is not None:
            lt, taper = fit
    arc_len = rho * (np.pi - alpha)
    curve.add(arc_len, lambda u: (rho * np.sin(u / rho)) ** 2)
    curve.add(lt, taper)

    if collar_radius is not None:
        curve.add(collar_length, lambda u, v=collar_radius**2: np.full_like(u, v, dtype=float))
        fit = _fit_taper(collar_radius**2, 0.0, 0.0, neck_radius**2, 0.5 * neck_radius**2)
        if fit is None:
            raise ValueError("could not construct a PIC-admissible collar taper")
        curve.add(*fit)

    curve.add(neck_width / 2.0, lambda u, v=neck_radius**2: np.full_like(u, v, dtype=float))

    half = curve.total
    mirrored = _SegmentedCurve()
    mirrored.segments = list(curve.segments)
    mirrored.add(half, lambda u, c=curve, H=half: c(np.clip(H - u, 0.0, H)))
    return mirrored


def _sample_curve(
    curve,
    total: float,
    n: int,
    cross_section: CrossSection,
    component_id: str,
) -> WarpedProfile:
    s = np.linspace(0.0, total, n)
    psi = np.sqrt(np.maximum(np.asarray(curve(s), dtype=float), 0.0))
    psi[0] = 0.0
    psi[-1] = 0.0
    return WarpedProfile(
        x=s / total,
        phi=np.full(n, total),
        psi=psi,
        cross_section=cross_section,
        left_boundary=TIP,
        right_boundary=TIP,
        t=0.0,
        component_id=component_id,
    )


def make_initial(family: str, n: int = 401, component_id: str = "c0", **params) -> WarpedProfile:
    """Construct initial data from one of the analytic families.

    Families:
      round_sphere(rho)                      closed round 4-sphere
      round_cylinder_periodic(psi0, length)  flat circle of round S^3 fibres
      dumbbell(lobe_radius, neck_radius, neck_width[, collar_radius,
               collar_length, taper_length])  two lobes joined by a thin neck
      capped_orbifold(rho, group_label, order) round quotient with C_Gamma tips

    Rejects data that is not uniformly PIC or has nonpositive psi anywhere in
    the interior: the flow machinery assumes both from the start.
    """
    cs = CrossSection(
        group_label=params.pop("group_label", "trivial"),
        order=int(params.pop("order", 1)),
    )
    if family in ("round_sphere", "capped_orbifold"):
        rho = float(params.pop("rho", 1.0))
        if rho <= 0:
            raise ValueError("rho must be positive")
        x = np.linspace(0.0, 1.0, n)
        psi = rho * np.sin(np.pi * x)
        psi[0] = 0.0
        psi[-1] = 0.0
        prof = WarpedProfile(
            x=x,
            phi=np.full(n, np.pi * rho),
            psi=psi,
            cross_section=cs,
            component_id=component_id,
        )
    elif family == "round_cylinder_periodic":
        psi0 = float(params.pop("psi0", np.sqrt(6.0)))
        length = float(params.pop("length", 10.0))
        if psi0 <= 0 or length <= 0:
            raise ValueError("psi0 and length must be positive")
        x = np.arange(n) / n
        prof = WarpedProfile(
            x=x,
            phi=np.full(n, length),
            psi=np.full(n, psi0),
            cross_section=cs,
            left_boundary=PERIODIC,
            right_boundary=PERIODIC,
            component_id=component_id,
        )
    elif family == "dumbbell":
        lobe = float(params.pop("lobe_radius", 2.0))
        neck = float(params.pop("neck_radius", 0.2))
        width = float(params.pop("neck_width", 1.0))
        collar_radius = params.pop("collar_radius", None)
        collar_radius = None if collar_radius is None else float(collar_radius)
        collar_length = float(params.pop("collar_length", 0.0))
        taper_length = params.pop("taper_length", None)
        taper_length = None if taper_length is None else float(taper_length)
        if not (0 < neck < lobe):
            raise ValueError("need 0 < neck_radius < lobe_radius")
        curve = _build_dumbbell_curve(lobe, neck, width, collar_radius, collar_length, taper_length)
        prof = _sample_curve(curve, curve.total, n, cs, component_id)
    else:
        raise ValueError(f"unknown initial family {family!r}")
    if params:
        raise ValueError(f"unused parameters for family {family!r}: {sorted(params)}")

    geo = profile_geometry(prof)
    interior = slice(1, prof.n - 1) if not prof.is_periodic else slice(0, prof.n)
    if np.min(geo.pic_margin[interior]) <= 0:
        raise ValueError(
            "initial data is not uniformly PIC "
            f"(min margin {np.min(geo.pic_margin[interior]):.3e})"
        )
    return prof


# ---------------------------------------------------------------------------
# Snapshot format: header line, then one row per node.
# ---------------------------------------------------------------------------


def write_snapshot(profile: WarpedProfile, path_or_buf) -> None:
    """Plain-text table: header with t, group, boundaries, id; rows x phi psi."""
    own = isinstance(path_or_buf, (str, bytes))
    f = open(path_or_buf, "w") if own else path_or_buf
    try:
        cs = profile.cross_section
        f.write(
            f"# t={profile.t!r} gamma={cs.group_label} order={cs.order} "
            f"left={profile.left_boundary} right={profile.right_boundary} "
            f"id={profile.component_id}\n"
        )
        for xi, pi, qi in zip(profile.x, profile.phi, profile.psi):
            f.write(f"{xi:.17g} {pi:.17g} {qi:.17g}\n")
    finally:
        if own:
            f.close()


def read_snapshot(path_or_buf) -> WarpedProfile:
    own = isinstance(path_or_buf, (str, bytes))
    f = open(path_or_buf) if own else path_or_buf
    try:
        header = f.readline().strip()
        if not header.startswith("# "):
            raise ValueError("missing snapshot header")
        meta = dict(tok.split("=", 1) for tok in header[2:].split())
        data = np.loadtxt(io.StringIO(f.read()), ndmin=2)
    finally:
        if own:
            f.close()
    return WarpedProfile(
        x=data[:, 0],
        phi=data[:, 1],
        psi=data[:, 2],
        cross_section=CrossSection(meta["gamma"], int(meta["order"])),
        left_boundary=meta["left"],
        right_boundary=meta["right"],
        t=float(meta["t"]),
        component_id=meta["id"],
    )
