"""Runtime verifiers of the geometric conditions the flow must sustain.

Necks are certified by rescaling to unit scalar curvature and comparing
against the round cylinder (fibre radius sqrt(6)); strong necks additionally
match the trailing history against the shrinking-cylinder law
psi_hat^2(tau) = 6 - 4 tau over one backward curvature time.  Canonical
neighbourhood classification, the kappa-noncollapsing monitor and the
surgical minima comparison live here as well.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow import FlowState
from .geometry import TIP, ball_volume

__all__ = [
    "NeckCertificate",
    "Refusal",
    "CanonicalNbhdParams",
    "NoncollapseParams",
    "neck_check",
    "strong_neck_check",
    "ComponentClassification",
    "classify_component",
    "canonical_nbhd_classify",
    "derivative_estimates_check",
    "noncollapse_check",
    "MinimaReport",
    "surgical_minima_monitor",
]

SQRT6 = np.sqrt(6.0)


@dataclass(frozen=True)
class NeckCertificate:
    """A certified (possibly strong) neck around a centre node."""

    component_id: str
    center: int
    scale: float  # h with R(center) = h^-2
    eps_actual: float
    gamma_label: str
    gamma_order: int
    strong: bool = False
    t_window: tuple[float, float] | None = None
    window: float = 0.0  # half-width actually checked, in rescaled units

    def __post_init__(self):
        if self.eps_actual < 0:
            raise ValueError("eps_actual must be nonnegative")
        if self.strong:
            t0, t1 = self.t_window
            if t1 - t0 < self.scale**2 * (1 - 1e-9):
                raise ValueError("strong certificate must cover one rescaled backward unit")


@dataclass(frozen=True)
class Refusal:
    """Why a check declined to certify; `insufficient_history` is recoverable."""

    reason: str
    node: int | None = None
    insufficient_history: bool = False

    def __bool__(self):
        return False


@dataclass(frozen=True)
class CanonicalNbhdParams:
    """Neck quality and structure constant of the canonical neighbourhood
    definition; the classifier itself takes its practical desk-scale neck
    tolerance separately (see classify_component)."""

    eps0: float = 5.0e-5
    C0: float | None = None

    def __post_init__(self):
        if not 0 < self.eps0 < 1e-4:
            raise ValueError("eps0 must lie in (0, 1e-4)")
        if self.C0 is None:
            object.__setattr__(self, "C0", 100.0 / self.eps0)
        if self.C0 < 100.0 / self.eps0:
            raise ValueError("C0 must be at least 100/eps0")


@dataclass(frozen=True)
class NoncollapseParams:
    kappa: float = 1.0
    scale_cap: float = 1.0

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")


def _window_mask(state: FlowState, center: int, width: float):
    """Node mask of |s - s_center| <= width, None if it exits through a tip."""
    geo = state.geometry
    s = geo.s
    profile = state.profile
    if profile.is_periodic:
        total = geo.total_length
        if 2 * width >= total:
            return None
        d = np.abs(s - s[center])
        d = np.minimum(d, total - d)
        return d <= width
    if s[center] - width < s[0] or s[center] + width > s[-1]:
        return None
    return np.abs(s - s[center]) <= width


def neck_check(
    state: FlowState,
    center: int,
    eps: float,
    window_cap: float | None = None,
) -> NeckCertificate | Refusal:
    """Certify the region around `center` as an eps-neck.

    Rescaling lengths by 1/h with h = R(center)^{-1/2}, the checks over the
    rescaled window (-W, W), W = min(1/eps, window_cap), are

        |psi / (sqrt(6) h) - 1| <= eps,   |psi_s| <= eps,
        |h psi_ss| / sqrt(6)    <= eps,

    a second-order proxy for closeness to the unit-curvature cylinder.  The
    achieved quality is the worst of the three.  Refuses when the window
    exits the component through a tip or curvature at the centre is not
    positive.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    profile = state.profile
    if not profile.is_periodic and not 0 < center < profile.n - 1:
        return Refusal("centre must be an interior node", node=center)
    geo = state.geometry
    r_c = geo.R[center]
    if r_c <= 0:
        return Refusal("nonpositive scalar curvature at centre", node=center)
    h = float(1.0 / np.sqrt(r_c))
    width = 1.0 / eps if window_cap is None else min(1.0 / eps, window_cap)
    mask = _window_mask(state, center, width * h)
    if mask is None:
        return Refusal("rescaled window exits the component", node=center)

    dev = np.abs(profile.psi[mask] / (SQRT6 * h) - 1.0)
    slope = np.abs(geo.psi_s[mask])
    curv = np.abs(h * geo.psi_ss[mask]) / SQRT6
    eps_actual = float(max(dev.max(), slope.max(), curv.max()))
    if eps_actual > eps:
        which = ("profile", "slope", "curvature")[
            int(np.argmax([dev.max(), slope.max(), curv.max()]))
        ]
        return Refusal(
            f"{which} deviation {eps_actual:.4g} exceeds eps={eps:.4g}", node=center
        )
    cs = profile.cross_section
    return NeckCertificate(
        component_id=profile.component_id,
        center=center,
        scale=h,
        eps_actual=eps_actual,
        gamma_label=cs.group_label,
        gamma_order=cs.order,
        strong=False,
        window=width,
    )


def _history_psi_at(snapshot, s_points: np.ndarray) -> np.ndarray:
    """Interpolate a stored snapshot's psi at the requested arclengths."""
    if snapshot.periodic:
        total = snapshot.total_length
        sp = np.mod(s_points, total)
        s_ext = np.concatenate([snapshot.s, [total]])
        p_ext = np.concatenate([snapshot.psi, [snapshot.psi[0]]])
        return np.interp(sp, s_ext, p_ext)
    return np.interp(s_points, snapshot.s, snapshot.psi)


def strong_neck_check(
    state: FlowState, cert: NeckCertificate, eps: float | None = None
) -> NeckCertificate | Refusal:
    """Upgrade a neck certificate to strong by checking the backward history.

    Each stored snapshot in [t - h^2, t], rescaled by h^-2 in space and time,
    must match the shrinking-cylinder law psi_hat^2(tau) = 6 - 4 tau within
    eps (default: the certificate's requested quality) at every node of the
    window.  Refuses distinctly when the history does not reach back one
    rescaled unit: the caller may simply continue flowing.
    """
    if eps is None:
        eps = max(cert.eps_actual, 1e-12)
    h = cert.scale
    t1 = state.t
    t0 = t1 - h * h
    if not state.history_covers(t0):
        return Refusal("insufficient history for the backward window",
                       node=cert.center, insufficient_history=True)
    geo = state.geometry
    s_c = geo.s[cert.center]
    width = cert.window * h
    mask = _window_mask(state, cert.center, width)
    if mask is None:
        return Refusal("rescaled window exits the component", node=cert.center)
    s_points = geo.s[mask]
    if state.profile.is_periodic:
        total = geo.total_length
        d = s_points - s_c
        d = (d + total / 2) % total - total / 2
        s_rel = d
    else:
        s_rel = s_points - s_c

    snaps = state.history_window(t0, t1)
    if len(snaps) < 2:
        return Refusal("history too sparse over the backward window",
                       node=cert.center, insufficient_history=True)
    worst = 0.0
    for snap in snaps:
        tau = (snap.t - t1) / (h * h)
        # The centre keeps its arclength offset from the component start to
        # within the window tolerance over one curvature time.
        psi_then = _history_psi_at(snap, s_c + s_rel)
        psi_hat2 = (psi_then / h) ** 2
        dev = float(np.max(np.abs(psi_hat2 - (6.0 - 4.0 * tau)))) / 6.0
        worst = max(worst, dev)
    if worst > eps:
        return Refusal(
            f"backward history deviates from the shrinking cylinder by {worst:.4g}",
            node=cert.center,
        )
    return NeckCertificate(
        component_id=cert.component_id,
        center=cert.center,
        scale=cert.scale,
        eps_actual=max(cert.eps_actual, worst),
        gamma_label=cert.gamma_label,
        gamma_order=cert.gamma_order,
        strong=True,
        t_window=(t0, t1),
        window=cert.window,
    )


@dataclass
class ComponentClassification:
    """Per-node canonical-neighbourhood classification of one component.

    labels[i] is one of 'strong_neck', 'cap', 'closed_spherical', 'none';
    excused[i] marks nodes whose only failure is a backward history that is
    too young (the condition may hold after more flowing).  plain_neck[i]
    records centres certified as (not necessarily strong) necks: these carry
    the coverage used by the discard classification.
    """

    labels: list
    excused: np.ndarray
    plain_neck: np.ndarray

    @property
    def fully_covered(self) -> bool:
        return all(lab != "none" for lab in self.labels)


def classify_component(
    state: FlowState,
    params: CanonicalNbhdParams,
    neck_eps: float | None = None,
    window_cap: float | None = 5.0,
) -> ComponentClassification:
    """Classify every node of a component.

    neck_eps is the practical neck tolerance used on the grid (the formal
    eps0 < 1e-4 of the canonical neighbourhood definition is unattainable by
    any discrete profile; the desk-scale proxy is recorded in the run
    configuration).  Classification order per node: strong neck, cap (a
    certified neck separates the node from a tip), closed spherical orbifold
    (positive sectional curvature everywhere, above the C0 floor).
    """
    if neck_eps is None:
        neck_eps = 0.25
    profile = state.profile
    geo = state.geometry
    n = profile.n

    plain = np.zeros(n, dtype=bool)
    strong_ok = np.zeros(n, dtype=bool)
    strong_young = np.zeros(n, dtype=bool)
    for i in range(n):
        cert = neck_check(state, i, neck_eps, window_cap)
        if isinstance(cert, NeckCertificate):
            plain[i] = True
            up = strong_neck_check(state, cert, eps=neck_eps)
            if isinstance(up, NeckCertificate):
                strong_ok[i] = True
            elif up.insufficient_history:
                strong_young[i] = True

    # Cap rule: a certified neck centre lies strictly between the node and
    # the far end, on the side away from a tip, within the C0 scale bracket.
    cap = np.zeros(n, dtype=bool)
    if not profile.is_periodic:
        s = geo.s
        with np.errstate(divide="ignore", invalid="ignore"):
            bracket = 2.0 * params.C0 / np.sqrt(np.maximum(geo.R, 1e-300))
        if profile.left_boundary == TIP and plain.any():
            last_cert = np.maximum.accumulate(np.where(plain, np.arange(n), -1)[::-1])[::-1]
            cap |= (last_cert > np.arange(n)) & ((s - s[0]) <= bracket)
        if profile.right_boundary == TIP and plain.any():
            first_cert = np.maximum.accumulate(np.where(plain, np.arange(n), -1))
            cap |= (first_cert < np.arange(n)) & (first_cert >= 0) & ((s[-1] - s) <= bracket)

    min_sect = np.minimum(geo.K_mix, geo.K_sph)
    spherical = bool(np.all(min_sect * (12.0 * params.C0) > geo.R))

    labels = []
    excused = np.zeros(n, dtype=bool)
    for i in range(n):
        if strong_ok[i]:
            labels.append("strong_neck")
        elif cap[i]:
            labels.append("cap")
        elif spherical:
            labels.append("closed_spherical")
        else:
            labels.append("none")
            if strong_young[i]:
                excused[i] = True
    return ComponentClassification(labels=labels, excused=excused, plain_neck=plain)


def canonical_nbhd_classify(
    state: FlowState,
    node: int,
    params: CanonicalNbhdParams,
    neck_eps: float | None = None,
    window_cap: float | None = 5.0,
) -> str:
    """Classification of a single node; 'none' is a valid answer."""
    if state.geometry.R[node] <= 0:
        return "none"
    cls = classify_component(state, params, neck_eps, window_cap)
    return cls.labels[node]


def derivative_estimates_check(state: FlowState, node: int, C: float) -> bool:
    """|grad R| < C R^{3/2} and |dR/dt| < C R^2 at the node, from finite
    differences in space and the two most recent steps in time."""
    geo = state.geometry
    r = geo.R[node]
    if r <= 0:
        return False
    n = state.profile.n
    lo, hi = max(0, node - 1), min(n - 1, node + 1)
    grad = abs(geo.R[hi] - geo.R[lo]) / (geo.s[hi] - geo.s[lo])
    if grad >= C * r**1.5:
        return False
    prev = state.prev_geometry
    if prev is None or state.prev_t is None or state.t == state.prev_t:
        raise ValueError("need at least two snapshots for the time derivative")
    if prev.R.size == geo.R.size:
        rdot = abs(r - prev.R[node]) / (state.t - state.prev_t)
    else:
        rdot = abs(r - np.interp(geo.s[node], prev.s, prev.R)) / (state.t - state.prev_t)
    return bool(rdot < C * r * r)


def noncollapse_check(
    state: FlowState,
    params: NoncollapseParams,
    samples: int = 64,
    rng: np.random.Generator | None = None,
) -> tuple[float, int, int]:
    """Worst volB(x, r)/r^4 over sampled (node, r <= scale_cap) pairs.

    A pair is admitted only when the trailing parabolic window [t - r^2, t]
    is covered by an unscathed history and |Rm| <= r^-2 holds on the ball
    now (the profile history stores psi only; curvature along the window is
    bounded by the monitored running maximum).  Returns (worst ratio,
    admitted count, skipped count); the monitor passes if worst >= kappa.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    profile = state.profile
    geo = state.geometry
    n = profile.n
    interior = np.arange(1, n - 1) if not profile.is_periodic else np.arange(n)
    nodes = rng.choice(interior, size=min(samples, interior.size), replace=False)
    radii = np.exp(rng.uniform(np.log(1e-2), np.log(params.scale_cap), size=nodes.size))

    worst = np.inf
    admitted = skipped = 0
    abs_rm = np.maximum(np.abs(geo.K_mix), np.abs(geo.K_sph))
    for node, r in zip(nodes, radii):
        if not state.history_covers(state.t - r * r):
            skipped += 1
            continue
        mask = _window_mask(state, int(node), r)
        if mask is None:
            mask = np.ones(n, dtype=bool)  # ball clipped at tips: whole slab
        if np.max(abs_rm[mask]) > 1.0 / (r * r):
            skipped += 1
            continue
        vol = ball_volume(profile, int(node), float(r))
        worst = min(worst, vol / r**4)
        admitted += 1
    return float(worst), admitted, skipped


@dataclass(frozen=True)
class MinimaReport:
    """Minima on the two sides of a singular time, and whether they rose."""

    R_min_before: float
    R_min_after: float
    pic_min_before: float
    pic_min_after: float
    tolerance: float = 1e-8

    @property
    def ok(self) -> bool:
        tol_r = self.tolerance * max(1.0, abs(self.R_min_before))
        tol_p = self.tolerance * max(1.0, abs(self.pic_min_before))
        return (
            self.R_min_after >= self.R_min_before - tol_r
            and self.pic_min_after >= self.pic_min_before - tol_p
        )


def _component_minima(states) -> tuple[float, float]:
    r_min = np.inf
    pic_min = np.inf
    for st in states:
        geo = st.geometry
        r_min = min(r_min, float(np.min(geo.R)))
        if st.profile.is_periodic:
            margin = geo.K_mix + geo.K_sph
        else:
            margin = (geo.K_mix + geo.K_sph)[1:-1]
        pic_min = min(pic_min, float(np.min(margin)))
    return r_min, pic_min


def surgical_minima_monitor(before, after, tolerance: float = 1e-8) -> MinimaReport:
    """Compare R_min and the isotropic margin across one singular time.

    `before` and `after` are iterables of FlowState (the components on each
    side).  For warped metrics (a1+a2)_min and (c1+c2)_min coincide, both
    equal to the minimum of K_mix + K_sph.
    """
    rb, pb = _component_minima(before)
    ra, pa = _component_minima(after)
    return MinimaReport(
        R_min_before=rb, R_min_after=ra,
        pic_min_before=pb, pic_min_after=pa,
        tolerance=tolerance,
    )
