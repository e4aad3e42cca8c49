"""Hamilton-style surgery on warped profiles.

A cut happens at the centre of a certified strong neck of scale h.  On each
side the metric is conformally bent into a standard cap over the rescaled
coordinate z in [0, 4] measured from the cap base (z = 0, metric untouched)
to the tip at the former cut point (z = 4):

    psi~^2 = e^{-2f(z)} ( bump(z) psi_old^2 + (1 - bump(z)) 6 h^2 )
    ds~    = e^{-f(z)} ds

with bump = 1 for z <= 2 and 0 for z >= 3.  The bending function f is zero
for z <= 0, equals w0 exp(-W0/z) on (0, 3], continues as a convex C^2
quintic spline on [3, 3.9], and the final segment [3.9, 4] is a smooth
closing arc in profile space reaching psi = 0 with unit slope (the
logarithmic expression this replaces degenerates into a cone under the
unit-speed reading of the cylinder coordinate and cannot close smoothly; the
substitution is recorded on every surgery event).

The scheduler decides when to cut (threshold Theta = 2 D h^-2), which
components to discard (full canonical coverage at curvature comparable to
the surgery scale), and verifies the pinching and curvature-drop
postconditions that make the run a surgical solution.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .flow import FlowState, StopEvent, evolve_until, standard_solution
from .geometry import (
    PERIODIC,
    TIP,
    CrossSection,
    WarpedProfile,
    profile_geometry,
)
from .monitors import (
    CanonicalNbhdParams,
    NeckCertificate,
    Refusal,
    classify_component,
    neck_check,
    strong_neck_check,
)
from .curvature import PinchingConstants, pinching_check
from .geometry import GeometryArrays

__all__ = [
    "CapProfile",
    "SurgerySchedule",
    "SurgeryEvent",
    "build_f",
    "standard_cap_initial_profile",
    "find_cutoff_necks",
    "perform_surgery",
    "schedule_and_discard",
    "cap_persistence_check",
    "SurgeryError",
]

_Z_KNOTS = (0.0, 2.0, 3.0, 3.9, 4.0)
_SQRT6 = np.sqrt(6.0)


class SurgeryError(RuntimeError):
    """A surgery postcondition failed: the run configuration is falsified."""


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def _quintic_hermite(t, y0, d0, dd0, y1, d1, dd1):
    """Quintic on [0,1] with values/slopes/curvatures (y, d, dd) at the ends."""
    a0, a1, a2 = y0, d0, 0.5 * dd0
    c3 = 10 * (y1 - y0) - 6 * d0 - 4 * d1 + (0.5 * dd1 - 1.5 * dd0)
    c4 = -15 * (y1 - y0) + 8 * d0 + 7 * d1 + (1.5 * dd0 - dd1)
    c5 = 6 * (y1 - y0) - 3 * (d0 + d1) + (0.5 * dd1 - 0.5 * dd0)
    return a0 + t * (a1 + t * (a2 + t * (c3 + t * (c4 + t * c5))))


@dataclass(frozen=True)
class CapProfile:
    """The bending function f and the assembled unit-scale cap curve.

    The closing segment is stored as (amp, omega, cubic) for
    psi(u) = amp sin(omega u) + cubic u^3 with u the arclength from the tip;
    amp*omega = 1 so the tip closes with unit slope.  `u_arc` / `psi_unit`
    tabulate the whole cap from the tip (u = 0) to the base where the metric
    joins the untouched cylinder of fibre radius sqrt(6).
    """

    w0: float
    W0: float
    spline_slope_end: float
    spline_curv_end: float
    closing_omega: float
    closing_c3: float
    closing_c5: float
    closing_length: float
    z_table: np.ndarray
    f_table: np.ndarray
    u_arc: np.ndarray
    psi_unit: np.ndarray
    _z_desc: np.ndarray = field(repr=False, default=None)
    _u_at_z: np.ndarray = field(repr=False, default=None)

    def f(self, z):
        """Bending function on (-inf, 3.9]; zero for z <= 0."""
        z = np.asarray(z, dtype=float)
        out = np.interp(z, self.z_table, self.f_table)
        return np.where(z <= 0, 0.0, out)

    def closing_psi(self, u):
        """Closing arc as a function of arclength from the tip."""
        om = self.closing_omega
        return np.sin(om * u) / om + self.closing_c3 * u**3 + self.closing_c5 * u**5

    def tip_curvature(self) -> float:
        """Sectional curvature at the cap tip (unit scale)."""
        return self.closing_omega**2 - 6.0 * self.closing_c3

    @property
    def base_arclength(self) -> float:
        return float(self.u_arc[-1])


def _spline_segment(w0, W0, slope_end, curv_end):
    """f on [3, 3.9] as a C^2 quintic between the exponential segment and the
    chosen end data (slope_end, curv_end) at the pinned value f(3.9)."""
    f3 = w0 * np.exp(-W0 / 3.0)
    df3 = w0 * W0 * np.exp(-W0 / 3.0) / 9.0
    ddf3 = w0 * np.exp(-W0 / 3.0) * (W0**2 / 81.0 - 2.0 * W0 / 27.0)
    f39 = -0.5 * np.log(16.0 - 3.9**2)
    h = 0.9
    return lambda z: _quintic_hermite(
        (np.asarray(z) - 3.0) / h, f3, df3 * h, ddf3 * h * h,
        f39, slope_end * h, curv_end * h * h,
    )


def _closing_coeffs(omega, u, psi_j, slope_j):
    """(c3, c5) so that sin(omega u)/omega + c3 u^3 + c5 u^5 matches the
    junction value and slope at u."""
    a = np.array([[u**3, u**5], [3 * u * u, 5 * u**4]])
    b = np.array([psi_j - np.sin(omega * u) / omega, slope_j - np.cos(omega * u)])
    return np.linalg.solve(a, b)


def _closing_admissible(omega, u_len, c3, c5, psi_j):
    us = np.linspace(1e-9, u_len, 600)
    psi = np.sin(omega * us) / omega + c3 * us**3 + c5 * us**5
    dpsi = np.cos(omega * us) + 3 * c3 * us**2 + 5 * c5 * us**4
    ddpsi = -omega * np.sin(omega * us) + 6 * c3 * us + 20 * c5 * us**3
    if np.any(psi <= 0) or np.any(dpsi <= 0) or np.any(dpsi > 1.0 + 1e-9):
        return -np.inf
    k_tip = omega**2 - 6 * c3
    if k_tip <= 0:
        return -np.inf
    margin = -ddpsi / psi + (1 - dpsi**2) / psi**2
    return float(np.min(margin))


def _solve_closing(psi_j, slope_j, curv_j):
    """Closing arc psi(u) = sin(omega u)/omega + c3 u^3 + c5 u^5 from the tip.

    Matches (psi, psi_u, psi_uu) = (psi_j, slope_j, curv_j) at u = u_len and
    closes with unit slope at u = 0.  For each omega the value and slope
    equations fix (c3, c5) linearly; the curvature mismatch is a scalar
    function of u_len bisected to zero.  Among admissible solutions (psi
    positive and rising, slope at most 1, positive isotropic margin, positive
    tip curvature) the one with the largest margin is kept.
    """
    def curvature_residual(omega, u):
        c3, c5 = _closing_coeffs(omega, u, psi_j, slope_j)
        curv = -omega * np.sin(omega * u) + 6 * c3 * u + 20 * c5 * u**3
        return curv - curv_j, c3, c5

    best = None
    for omega in np.linspace(0.08, 1.8, 60):
        u_lo = max(0.3 * psi_j, 1e-2)
        u_hi = min(0.98 * np.pi / omega, 8.0 * psi_j)
        if u_hi <= u_lo:
            continue
        us = np.linspace(u_lo, u_hi, 40)
        res = np.array([curvature_residual(omega, u)[0] for u in us])
        sign_change = np.where(np.diff(np.sign(res)) != 0)[0]
        for k in sign_change:
            u_root = brentq(
                lambda u: curvature_residual(omega, u)[0], us[k], us[k + 1], xtol=1e-13
            )
            _, c3, c5 = curvature_residual(omega, u_root)
            score = _closing_admissible(omega, u_root, c3, c5, psi_j)
            if np.isfinite(score) and (best is None or score > best[0]):
                best = (score, omega, u_root, c3, c5)
    if best is None or best[0] <= 0:
        raise ValueError("no smooth closing arc matches the spline end data")
    _, omega, u_len, c3, c5 = best
    return omega, u_len, c3, c5


def build_f(w0: float, W0: float, samples: int = 4096) -> CapProfile:
    """Construct the cap bending function and assembled unit-scale profile.

    f = 0 for z <= 0, w0 e^{-W0/z} on (0, 3], a convex C^2 quintic on
    [3, 3.9] interpolating to -0.5 ln(16 - z^2) at 3.9, and a smooth closing
    arc in place of the logarithmic tail on [3.9, 4].  The spline end slope
    is chosen inside the convexity window; convexity is verified by sampling.
    Fails when no admissible spline or closing exists for (w0, W0).
    """
    if w0 <= 0 or W0 <= 0:
        raise ValueError("w0 and W0 must be positive")
    f3 = w0 * np.exp(-W0 / 3.0)
    df3 = w0 * W0 * np.exp(-W0 / 3.0) / 9.0
    f39 = -0.5 * np.log(16.0 - 3.9**2)
    h = 0.9
    mean_slope = (f39 - f3) / h
    if mean_slope <= df3:
        raise ValueError(
            f"no convex spline exists: mean slope {mean_slope:.4g} does not "
            f"exceed the exponential segment's end slope {df3:.4g}"
        )

    zs = np.linspace(3.0, 3.9, 1000)
    chosen = None
    # Prefer gentle end slopes: they keep |psi_s| <= 1 on the cap, which the
    # isotropic-curvature postcondition needs.
    for slope_end in np.linspace(max(2.0 * df3, 0.12), 0.45, 12):
        for curv_end in (0.3, 0.5, 0.8, 1.2):
            spline = _spline_segment(w0, W0, slope_end, curv_end)
            fs = spline(zs)
            fpp = np.gradient(np.gradient(fs, zs), zs)
            if np.any(np.diff(fs) <= 0):
                continue
            if np.min(fpp[2:-2]) < -1e-6:
                continue
            chosen = (slope_end, curv_end, spline)
            break
        if chosen:
            break
    if chosen is None:
        raise ValueError(
            f"no convex C^2 spline on [3, 3.9] exists for (w0={w0}, W0={W0})"
        )
    slope_end, curv_end, spline = chosen

    # Junction data at z = 3.9 in profile space (arclength from the tip).
    e_f = np.exp(-f39)
    psi_j = _SQRT6 * e_f
    slope_j = _SQRT6 * slope_end
    curv_j = -_SQRT6 * curv_end / e_f
    omega, u_len, c3, c5 = _solve_closing(psi_j, slope_j, curv_j)

    # Tabulate f on [0, 3.9].
    z_exp = np.linspace(1e-9, 3.0, samples // 2)
    z_spl = np.linspace(3.0, 3.9, samples // 2)[1:]
    z_tab = np.concatenate([[0.0], z_exp, z_spl])
    f_tab = np.concatenate([[0.0], w0 * np.exp(-W0 / z_exp), spline(z_spl)])

    # Assemble the unit-scale cap curve from the tip outward.
    u_close = np.linspace(0.0, u_len, samples // 4)
    psi_close = np.sin(omega * u_close) / omega + c3 * u_close**3 + c5 * u_close**5
    psi_close[0] = 0.0
    z_dense = np.linspace(3.9, 0.0, samples)
    f_dense = np.interp(z_dense, z_tab, f_tab)
    ds_dz = np.exp(-f_dense)
    u_f = u_len + np.concatenate(
        [[0.0], np.cumsum(0.5 * (ds_dz[1:] + ds_dz[:-1]) * (-np.diff(z_dense)))]
    )
    psi_f = _SQRT6 * np.exp(-f_dense)
    u_arc = np.concatenate([u_close, u_f[1:]])
    psi_unit = np.concatenate([psi_close, psi_f[1:]])

    return CapProfile(
        w0=w0,
        W0=W0,
        spline_slope_end=float(slope_end),
        spline_curv_end=float(curv_end),
        closing_omega=float(omega),
        closing_c3=float(c3),
        closing_c5=float(c5),
        closing_length=float(u_len),
        z_table=z_tab,
        f_table=f_tab,
        u_arc=u_arc,
        psi_unit=psi_unit,
        _z_desc=z_dense,
        _u_at_z=u_f,
    )


_DEFAULT_CAP: dict = {}


def default_cap(w0: float = 0.1, W0: float = 5.0) -> CapProfile:
    key = (w0, W0)
    if key not in _DEFAULT_CAP:
        _DEFAULT_CAP[key] = build_f(w0, W0)
    return _DEFAULT_CAP[key]


def standard_cap_initial_profile(
    n: int = 801,
    cylinder_length: float = 25.0,
    cross_section: CrossSection | None = None,
    cap: CapProfile | None = None,
    component_id: str = "standard",
) -> WarpedProfile:
    """Initial data of the standard solution at unit scale.

    The surgery cap glued to an exact cylinder of scalar curvature 1, closed
    at the far end by the mirror cap (the model is a semi-infinite cylinder;
    a distant second cap stands in for infinity at desk scale).
    """
    if cap is None:
        cap = default_cap()
    cs = cross_section or CrossSection()
    u_cap = cap.u_arc
    psi_cap = cap.psi_unit
    lc = cap.base_arclength
    total = 2 * lc + cylinder_length
    s = np.linspace(0.0, total, n)
    psi = np.empty(n)
    left = s <= lc
    right = s >= total - lc
    mid = ~(left | right)
    psi[left] = np.interp(s[left], u_cap, psi_cap)
    psi[mid] = _SQRT6
    psi[right] = np.interp(total - s[right], u_cap, psi_cap)
    psi[0] = 0.0
    psi[-1] = 0.0
    return WarpedProfile(
        x=s / total,
        phi=np.full(n, total),
        psi=psi,
        cross_section=cs,
        left_boundary=TIP,
        right_boundary=TIP,
        t=0.0,
        component_id=component_id,
    )


# ---------------------------------------------------------------------------
# Schedule
# ---------------------------------------------------------------------------

INTERVAL = 2.0**-5


@dataclass(frozen=True)
class SurgerySchedule:
    """Step-function surgery parameters on intervals [(i-1) 2^-5, i 2^-5).

    h may be given explicitly per interval or derived as delta*r/2; the
    curvature threshold is Theta = 2 D h^-2.  delta0 and h0 guard the
    pinching-preservation lemma; theta_frac is the cap-persistence horizon
    fraction of h^2.
    """

    r_steps: tuple
    delta_steps: tuple
    h_steps: tuple | None = None
    D: float = 10.5
    w0: float = 0.1
    W0: float = 5.0
    delta0: float = 0.02
    h0: float = 0.2
    theta_frac: float = 0.9
    window_cap: float | None = 5.0
    discard_floor: float = 0.5

    def __post_init__(self):
        if not self.r_steps or not self.delta_steps:
            raise ValueError("schedule needs at least one interval")
        for name in ("r_steps", "delta_steps", "h_steps"):
            seq = getattr(self, name)
            if seq is None:
                continue
            arr = tuple(float(v) for v in seq)
            object.__setattr__(self, name, arr)
            if any(v <= 0 for v in arr):
                raise ValueError(f"{name} must be positive")
            if any(b > a * (1 + 1e-12) for a, b in zip(arr, arr[1:])):
                raise ValueError(f"{name} must be non-increasing")
        if self.D <= 10:
            raise ValueError("D must exceed 10")
        if not 0 < self.theta_frac < 1.5:
            raise ValueError("theta_frac must lie in (0, 3/2)")
        if self.delta0 <= 0 or self.h0 <= 0:
            raise ValueError("delta0 and h0 must be positive")
        for i in range(max(len(self.r_steps), len(self.delta_steps),
                           len(self.h_steps or ()))):
            if not self.h(i * INTERVAL) < self.delta(i * INTERVAL) * self.r(i * INTERVAL):
                raise ValueError("schedule violates h < delta * r")

    @staticmethod
    def _lookup(steps, t):
        idx = min(int(max(t, 0.0) / INTERVAL), len(steps) - 1)
        return steps[idx]

    def r(self, t: float) -> float:
        return self._lookup(self.r_steps, t)

    def delta(self, t: float) -> float:
        return self._lookup(self.delta_steps, t)

    def h(self, t: float) -> float:
        if self.h_steps is not None:
            return self._lookup(self.h_steps, t)
        return 0.5 * self.delta(t) * self.r(t)

    def theta(self, t: float) -> float:
        return 2.0 * self.D / self.h(t) ** 2


@dataclass(frozen=True)
class SurgeryEvent:
    """Record of one singular time on one pre-surgery component."""

    time: float
    component_id: str
    certificates: tuple
    pairing_tags: tuple
    pre_R_max: float
    pre_R_min: float
    pre_pic_min: float
    post_R_max: float
    post_R_min: float
    post_pic_min: float
    created: tuple  # (component_id, gamma_label, tip-pairing tags)
    removed: tuple = ()  # (component_id, label) discarded at this time
    closing_note: str = "log-tail closing replaced by smooth arc"

    def __post_init__(self):
        if len(set(self.pairing_tags)) != len(self.pairing_tags):
            raise ValueError("pairing tags must be unique per cut")


# ---------------------------------------------------------------------------
# Cutting
# ---------------------------------------------------------------------------

_RESHAPE_Z = 4.0  # the conformal bending spans z in [0, 4] per side

_tag_counter = itertools.count()


def _fresh_tag(time: float) -> str:
    return f"cut-{next(_tag_counter)}@{time:.9f}"


def find_cutoff_necks(
    state: FlowState,
    sched: SurgerySchedule,
    band: float = 2.0,
) -> list[NeckCertificate]:
    """Maximal disjoint collection of certified strong delta-necks at the
    surgery scale.

    Scans nodes whose scalar curvature lies within a factor `band` of h^-2,
    certifies them (quality delta(t), window capped per the schedule),
    upgrades to strong, and greedily extracts a disjoint set preferring the
    best quality.
    """
    t = state.t
    h = sched.h(t)
    delta = sched.delta(t)
    geo = state.geometry
    target = 1.0 / (h * h)
    idx = np.where((geo.R >= target / band) & (geo.R <= target * band))[0]
    certified: list[NeckCertificate] = []
    for i in idx:
        cert = neck_check(state, int(i), delta, sched.window_cap)
        if isinstance(cert, NeckCertificate):
            up = strong_neck_check(state, cert, eps=delta)
            if isinstance(up, NeckCertificate):
                certified.append(up)
    certified.sort(key=lambda c: c.eps_actual)
    chosen: list[NeckCertificate] = []
    s = geo.s
    for cert in certified:
        half = (cert.window + _RESHAPE_Z) * cert.scale
        if all(
            abs(s[cert.center] - s[c.center]) > half + (c.window + _RESHAPE_Z) * c.scale
            for c in chosen
        ):
            chosen.append(cert)
    chosen.sort(key=lambda c: c.center)
    return chosen


def _cap_piece(cap: CapProfile, h: float, psi_old_interp, s_cut: float, direction: int):
    """Dense (arclength-from-tip, psi) arrays of one glued cap at scale h.

    direction = +1 when the retained segment lies at s > s_cut, -1 otherwise.
    Region A (z in [3, 4], including the closing) comes from the standard cap
    curve; region B (z in [0, 3]) blends the old metric into the standard
    cylinder under the conformal factor e^{-2f}.
    """
    z3_u = float(np.interp(3.0, cap._z_desc[::-1], cap._u_at_z[::-1]))
    mask = cap.u_arc <= z3_u
    u_a = cap.u_arc[mask] * h
    psi_a = cap.psi_unit[mask] * h

    z_b = np.linspace(3.0, 0.0, 240)
    s_old = s_cut + direction * (4.0 - z_b) * h
    psi_old = psi_old_interp(s_old)
    f_b = cap.f(z_b)
    bump = 1.0 - _smoothstep(z_b - 2.0)
    psi_b = np.exp(-f_b) * np.sqrt(bump * psi_old**2 + (1.0 - bump) * 6.0 * h * h)
    ds_b = np.exp(-f_b) * h * (-np.diff(z_b, prepend=z_b[0]))
    u_b = u_a[-1] + np.cumsum(ds_b)
    return np.concatenate([u_a, u_b]), np.concatenate([psi_a, psi_b])


def _old_psi_interp(profile: WarpedProfile, geo: GeometryArrays):
    """Monotone-cubic interpolant of the old profile over (unwrapped) s."""
    s = geo.s
    if profile.is_periodic:
        total = geo.total_length
        s_ext = np.concatenate([s - total, s, s + total])
        p_ext = np.concatenate([profile.psi] * 3)
        return PchipInterpolator(s_ext, p_ext)
    return PchipInterpolator(s, profile.psi)


def _resample_segment(
    s_pts: np.ndarray,
    psi_pts: np.ndarray,
    template: WarpedProfile,
    n_new: int,
    left_kind: str,
    right_kind: str,
    component_id: str,
    t: float,
) -> WarpedProfile:
    total = float(s_pts[-1] - s_pts[0])
    interp = PchipInterpolator(s_pts, psi_pts)
    s_new = np.linspace(s_pts[0], s_pts[-1], n_new)
    psi_new = np.asarray(interp(s_new))
    if left_kind == TIP:
        psi_new[0] = 0.0
    if right_kind == TIP:
        psi_new[-1] = 0.0
    return WarpedProfile(
        x=(s_new - s_new[0]) / total,
        phi=np.full(n_new, total),
        psi=np.maximum(psi_new, 0.0),
        cross_section=template.cross_section,
        left_boundary=left_kind,
        right_boundary=right_kind,
        t=t,
        component_id=component_id,
    )


def pinching_margins(geo: GeometryArrays, consts: PinchingConstants, t: float,
                     periodic: bool) -> float:
    """Worst pinching margin over the nodes (vectorised warped form).

    For warped metrics a1 = c1 = (K_mix + K_sph)/2 = a3 = c3 and
    b3 = |K_mix - K_sph|/2, so the inequalities collapse to scalars per node.
    """
    sl = slice(0, geo.R.size) if periodic else slice(1, geo.R.size - 1)
    a1 = 0.5 * (geo.K_mix + geo.K_sph)[sl]
    b3 = 0.5 * np.abs(geo.K_mix - geo.K_sph)[sl]
    top = np.maximum(a1, b3)
    sa = a1 + consts.rho
    margins = [np.min(sa)]
    if np.min(sa) > 0:
        margins.append(np.min(consts.Psi * sa - top))
        bound = 1.0 + consts.L * np.exp(consts.P * t) / np.maximum(np.log(sa), consts.S)
        margins.append(np.min(bound - b3 / sa))
    return float(min(margins))


def _segment_bounds(certs, geo, profile):
    """Cut arclengths and the resulting segment list.

    Each segment is (s_lo, s_hi, left_cut_or_None, right_cut_or_None); for a
    periodic component the segment may wrap (s_hi > total).
    """
    s = geo.s
    cuts = [float(s[c.center]) for c in certs]
    if profile.is_periodic:
        total = geo.total_length
        segs = []
        for k, c in enumerate(cuts):
            nxt = cuts[(k + 1) % len(cuts)]
            hi = nxt if nxt > c else nxt + total
            segs.append((c, hi, certs[k], certs[(k + 1) % len(certs)]))
        return segs
    segs = []
    lo, left_cut = float(s[0]), None
    for k, c in enumerate(cuts):
        segs.append((lo, c, left_cut, certs[k]))
        lo, left_cut = c, certs[k]
    segs.append((lo, float(s[-1]), left_cut, None))
    return segs


def perform_surgery(
    state: FlowState,
    certs,
    cap: CapProfile,
    sched: SurgerySchedule,
    consts: PinchingConstants | None = None,
    id_prefix: str | None = None,
) -> tuple[list[FlowState], SurgeryEvent]:
    """Cut the component at the certified neck centres and glue caps.

    Every certificate must be strong, of quality at most delta(t), and of
    scale at most h0 while delta(t) <= delta0 (the pinching-preservation
    guards).  Postconditions enforced as hard errors: every successor keeps
    R_max <= Theta(t)/2 and satisfies the pinching inequalities (positive
    isotropic margin when no constants are given) -- their failure falsifies
    the schedule, not the run.
    """
    if isinstance(certs, NeckCertificate):
        certs = [certs]
    if not certs:
        raise ValueError("need at least one certificate")
    profile, geo = state.profile, state.geometry
    t0 = state.t
    delta_t = sched.delta(t0)
    if delta_t > sched.delta0 + 1e-15:
        raise SurgeryError(f"delta(t)={delta_t} exceeds delta0={sched.delta0}")
    for c in certs:
        if not c.strong:
            raise SurgeryError("surgery requires strong neck certificates")
        if c.eps_actual > delta_t + 1e-15:
            raise SurgeryError(
                f"certificate quality {c.eps_actual:.4g} exceeds delta={delta_t:.4g}"
            )
        if c.scale > sched.h0 + 1e-15:
            raise SurgeryError(f"neck scale {c.scale:.4g} exceeds h0={sched.h0:.4g}")

    certs = sorted(certs, key=lambda c: c.center)
    pre_R_max = state.stats["R_max"]
    pre_R_min = state.stats["R_min"]
    pre_pic = state.stats["pic_min"]
    interp = _old_psi_interp(profile, geo)
    tags = {id(c): _fresh_tag(t0) for c in certs}
    ds_parent = (geo.total_length / profile.n) if profile.is_periodic else float(
        geo.s[1] - geo.s[0]
    )

    successors: list[FlowState] = []
    created = []
    prefix = id_prefix or profile.component_id
    for k, (s_lo, s_hi, left_cut, right_cut) in enumerate(_segment_bounds(certs, geo, profile)):
        pieces_s = []
        pieces_psi = []
        pos = 0.0
        if left_cut is not None:
            h = left_cut.scale
            u, p = _cap_piece(cap, h, interp, s_lo, +1)
            pieces_s.append(u)
            pieces_psi.append(p)
            pos = u[-1]
            interior_lo = s_lo + _RESHAPE_Z * h
        else:
            interior_lo = s_lo
        if right_cut is not None:
            interior_hi = s_hi - _RESHAPE_Z * right_cut.scale
        else:
            interior_hi = s_hi
        if interior_hi <= interior_lo:
            raise SurgeryError("cut reshaping zones overlap; necks too close")
        s_int = np.linspace(interior_lo, interior_hi,
                            max(9, int(np.ceil((interior_hi - interior_lo) / ds_parent)) + 1))
        pieces_s.append(pos + (s_int - interior_lo))
        pieces_psi.append(np.asarray(interp(s_int)))
        pos = pieces_s[-1][-1]
        if right_cut is not None:
            h = right_cut.scale
            u, p = _cap_piece(cap, h, interp, s_hi, -1)
            pieces_s.append(pos + (u[-1] - u[::-1]))
            pieces_psi.append(p[::-1])

        s_all = np.concatenate(pieces_s)
        psi_all = np.concatenate(pieces_psi)
        keep = np.concatenate([[True], np.diff(s_all) > 1e-13])
        s_all, psi_all = s_all[keep], psi_all[keep]
        length = s_all[-1] - s_all[0]
        # Resolve the finest glued cap with several nodes per curvature scale.
        ds_target = ds_parent
        for c in (left_cut, right_cut):
            if c is not None:
                ds_target = min(ds_target, c.scale / 6.0)
        n_new = int(np.clip(np.ceil(length / ds_target) + 1, 65, 6 * profile.n))
        comp_id = f"{prefix}.{k}"
        new_profile = _resample_segment(
            s_all, psi_all, profile, n_new,
            TIP if left_cut is not None or profile.left_boundary == TIP else profile.left_boundary,
            TIP if right_cut is not None or profile.right_boundary == TIP else profile.right_boundary,
            comp_id, t0,
        )
        successors.append(FlowState(new_profile))
        created.append(
            (
                comp_id,
                profile.cross_section.group_label,
                tuple(
                    tags[id(c)] for c in (left_cut, right_cut) if c is not None
                ),
            )
        )

    post_R_max = max(s.stats["R_max"] for s in successors)
    post_R_min = min(s.stats["R_min"] for s in successors)
    post_pic = min(s.stats["pic_min"] for s in successors)
    # The curvature-drop condition R_max <= Theta/2 applies to what remains
    # after the covered components are removed; see check_curvature_drop.
    for succ in successors:
        if consts is not None:
            worst = pinching_margins(succ.geometry, consts, t0, succ.profile.is_periodic)
            if worst <= 0:
                raise SurgeryError(
                    f"pinching violated on {succ.profile.component_id} "
                    f"(worst margin {worst:.4g})"
                )
        elif succ.stats["pic_min"] <= 0:
            raise SurgeryError(
                f"isotropic margin nonpositive on {succ.profile.component_id}"
            )

    event = SurgeryEvent(
        time=t0,
        component_id=profile.component_id,
        certificates=tuple(certs),
        pairing_tags=tuple(tags[id(c)] for c in certs),
        pre_R_max=pre_R_max,
        pre_R_min=pre_R_min,
        pre_pic_min=pre_pic,
        post_R_max=post_R_max,
        post_R_min=post_R_min,
        post_pic_min=post_pic,
        created=tuple(created),
    )
    return successors, event


def check_curvature_drop(kept, sched: SurgerySchedule, t: float) -> float:
    """Hard postcondition of a completed singular time: R_max(g+) <= Theta/2.

    `kept` is the post-removal component list; returns the achieved R_max.
    """
    if not kept:
        return 0.0
    post = max(s.stats["R_max"] for s in kept)
    theta = sched.theta(t)
    if post > theta / 2.0:
        raise SurgeryError(
            f"post-surgery R_max={post:.4g} exceeds Theta/2={theta / 2:.4g}: "
            "the schedule configuration is falsified"
        )
    return post


def piece_label(profile: WarpedProfile) -> str:
    """Diffeomorphism label decidable from the boundary structure."""
    if profile.is_periodic:
        return f"mapping-torus({profile.cross_section.group_label})"
    if profile.cross_section.is_trivial:
        return "S4"
    return f"S4/{profile.cross_section.group_label}-suspension"


def schedule_and_discard(
    states,
    sched: SurgerySchedule,
    params: CanonicalNbhdParams,
    neck_eps: float = 0.25,
) -> tuple[list[FlowState], list[tuple[FlowState, str]]]:
    """Split components into kept and discarded.

    A component is discarded when every node is covered by a canonical
    neighbourhood (certified necks counting as coverage) and its curvature
    lives at or above the surgery scale: R_min >= discard_floor * h(t)^-2.
    The curvature floor separates high-curvature covered pieces (removed by
    the surgery process) from components that still carry low-curvature
    regions and must keep flowing.
    """
    kept, discarded = [], []
    for st in states:
        t = st.t
        floor = sched.discard_floor / sched.h(t) ** 2
        if st.stats["R_min"] >= floor:
            cls = classify_component(st, params, neck_eps, sched.window_cap)
            covered = all(
                lab != "none" or plain or exc
                for lab, plain, exc in zip(cls.labels, cls.plain_neck, cls.excused)
            )
            if covered:
                discarded.append((st, piece_label(st.profile)))
                continue
        kept.append(st)
    return kept, discarded


@dataclass(frozen=True)
class CapPersistenceReport:
    """Deviation of a fresh surgery cap from the flowed standard solution."""

    sup_dev: float
    horizon: float  # rescaled time actually compared
    tolerance: float
    scathed: bool = False

    @property
    def ok(self) -> bool:
        return self.scathed or self.sup_dev <= self.tolerance


def cap_persistence_check(
    state: FlowState,
    h: float,
    t0: float,
    side: str,
    sched: SurgerySchedule,
    A: float = 10.0,
    scathed: bool = False,
) -> CapPersistenceReport:
    """Compare the rescaled cap region against the standard solution.

    The ball of rescaled radius A around the fresh tip, rescaled by h^-2 in
    space and time from the surgery time t0, is matched against the
    independently flowed standard cap at the same rescaled times; the report
    carries the sup deviation of psi-hat and passes at tolerance 1/A.  A
    scathed region (hit by another singular time before the horizon) is a
    valid outcome, not a failure.
    """
    if scathed:
        return CapPersistenceReport(0.0, 0.0, 1.0 / A, scathed=True)
    t1 = min(state.t, t0 + sched.theta_frac * h * h)
    horizon = max(t1 - t0, 0.0) / (h * h)
    std = standard_solution(horizon=min(sched.theta_frac, 1.4))
    std_times = np.array([t for t, _ in std])
    u_hat = np.linspace(0.0, A, 160)

    sup_dev = 0.0
    snaps = state.history_window(t0, t1)
    for snap in snaps[:: max(1, len(snaps) // 24)]:
        tau = (snap.t - t0) / (h * h)
        k = int(np.argmin(np.abs(std_times - tau)))
        if abs(std_times[k] - tau) > 0.05:
            continue
        std_profile = std[k][1]
        std_s = std_profile.arclength()
        psi_std = np.interp(u_hat, std_s, std_profile.psi)
        if side == "left":
            psi_here = np.interp(u_hat * h, snap.s, snap.psi) / h
        else:
            send = snap.s[-1]
            psi_here = np.interp(send - u_hat[::-1] * h, snap.s, snap.psi)[::-1] / h
        sup_dev = max(sup_dev, float(np.max(np.abs(psi_here - psi_std))))
    return CapPersistenceReport(sup_dev, horizon, 1.0 / A)
