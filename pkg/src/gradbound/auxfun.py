"""Auxiliary profiles for gradient-bound certificates.

Three ingredients, each a numerical object with tabulated values and exact
pointwise evaluators:

* ``ChiSpec``: an admissible growth weight ``chi(t) = max(1, c t^alpha)``
  with sub-linear exponent, finite reciprocal tail integral.
* ``PhiProfile``: the convex penalty profile defined by
  ``int_1^{phi'(t)} ds / (s chi(s)) = K1 t`` with
  ``K1 = int_1^inf ds / (s chi(s))``; ``phi`` blows up as t -> 1.
* ``PsiProfile`` / ``LocalizationProfile``: the barrier ``psi'' = K3 psi
  chi(psi)^2``, ``psi(0) = 1``, ``psi'(0) = 0``, calibrated so it blows up
  at abscissa 1, and the radial localization weight ``C(x)`` built from it,
  together with the measured curvature constant ``K2(R)``.

Profiles are tabulated on ``[0, 1 - eps_blow]`` and never extrapolated past
the table end; evaluation beyond it raises ``ProfileSaturationError`` (the
``*_checked`` variants return a saturation mask instead).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize


class ChiError(ValueError):
    """Raised for weights outside the admissible family."""


class CalibrationError(RuntimeError):
    """Raised when the barrier constant cannot be calibrated."""


class ProfileSaturationError(ValueError):
    """Raised when a profile is evaluated beyond its tabulated domain."""


# ---------------------------------------------------------------------------
# growth weights
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChiSpec:
    """Growth weight ``chi(t) = max(1, scale * t**alpha)``.

    ``alpha`` must lie in (0, 1) and ``scale >= 1`` so that ``chi >= 1``,
    ``chi(t) <= scale * t**alpha`` for t >= 1, and the reciprocal tail
    integral converges.
    """

    alpha: float
    scale: float = 1.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.maximum(1.0, self.scale * np.power(np.maximum(t, 0.0), self.alpha))
        return out if out.ndim else float(out)

    @property
    def k_chi(self) -> float:
        """Smallest K with chi(t) <= K t^alpha for t >= 1."""
        return self.scale


def validate_chi(chi: ChiSpec) -> dict:
    """Check admissibility and return {k_chi, tail_integral_bound, monotone}.

    The tail bound is computed by quadrature of ``1/(t chi(t))`` on
    ``[1, inf)``; for this family it equals ``1/(scale*alpha)`` and the
    remainder past T is ``T**-alpha / (scale*alpha)``.
    """
    problems = []
    if not (0.0 < chi.alpha < 1.0):
        problems.append(f"alpha must lie in (0, 1), got {chi.alpha}")
    if chi.scale < 1.0:
        problems.append(f"scale must be >= 1, got {chi.scale}")
    if problems:
        raise ChiError("; ".join(problems))

    tail, _ = integrate.quad(lambda t: 1.0 / (t * chi(t)), 1.0, np.inf)
    ts = np.logspace(-6, 6, 1025)
    vals = chi(ts)
    monotone = bool(np.all(np.diff(vals) >= -1e-15))
    return {"k_chi": chi.k_chi, "tail_integral_bound": tail, "monotone": monotone}


# ---------------------------------------------------------------------------
# penalty profile phi
# ---------------------------------------------------------------------------


def _dphi_closed(t, alpha):
    # c = 1 solves the defining relation in closed form.
    return np.power(1.0 - np.asarray(t, dtype=float), -1.0 / alpha)


def _dphi_invert(chi: ChiSpec, k1: float, t):
    """Invert int_1^x ds/(s chi(s)) = k1*t for x, elementwise.

    On [1, inf) the weight is exactly scale*s**alpha, so the integral has
    the antiderivative (1 - x**-alpha)/(scale*alpha); each node is solved
    by a bracketed root find on xi = x**-alpha in (0, 1].
    """
    a, c = chi.alpha, chi.scale
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty_like(t)
    for i, ti in enumerate(t):
        target = k1 * ti
        f = lambda xi: (1.0 - xi) / (c * a) - target
        if target <= 0.0:
            out[i] = 1.0
            continue
        xi = optimize.brentq(f, 1e-300, 1.0, xtol=1e-300, rtol=8.9e-16)
        out[i] = xi ** (-1.0 / a)
    return out


@dataclass
class PhiProfile:
    """Tabulated penalty profile with phi(0) = 0, phi'(0) = 1.

    ``phi'`` is evaluated pointwise from the defining relation; ``phi`` is
    accumulated by composite Simpson over the node table and corrected by a
    local Simpson panel at evaluation time, so values between nodes carry
    quadrature accuracy rather than interpolation accuracy.
    """

    chi: ChiSpec
    k1: float
    eps_blow: float
    nodes: np.ndarray = field(repr=False)
    phi_nodes: np.ndarray = field(repr=False)
    dphi_nodes: np.ndarray = field(repr=False)

    @property
    def t_end(self) -> float:
        return float(self.nodes[-1])

    def dphi_at(self, t):
        t = np.asarray(t, dtype=float)
        self._check_domain(t)
        if self.chi.scale == 1.0:
            out = _dphi_closed(t, self.chi.alpha)
        else:
            out = _dphi_invert(self.chi, self.k1, t).reshape(t.shape)
        return out if out.ndim else float(out)

    def phi_at(self, t):
        t = np.asarray(t, dtype=float)
        self._check_domain(t)
        tq = np.atleast_1d(t)
        idx = np.clip(np.searchsorted(self.nodes, tq, side="right") - 1,
                      0, len(self.nodes) - 1)
        a = self.nodes[idx]
        w = tq - a
        mid = a + 0.5 * w
        fa = self.dphi_nodes[idx]
        out = self.phi_nodes[idx] + (w / 6.0) * (
            fa + 4.0 * self._dphi_raw(mid) + self._dphi_raw(tq))
        out = out.reshape(t.shape)
        return out if out.ndim else float(out)

    def d2phi_at(self, t):
        # differentiating the defining relation: phi'' = K1 phi' chi(phi')
        dp = self.dphi_at(t)
        return self.k1 * dp * self.chi(dp)

    def dphi_lower_bound(self, t):
        """Closed lower bound (k1 (1-t) k_chi alpha)^(-1/alpha)."""
        t = np.asarray(t, dtype=float)
        a = self.chi.alpha
        return np.power(self.k1 * (1.0 - t) * self.chi.k_chi * a, -1.0 / a)

    def saturates(self, t) -> np.ndarray:
        return np.asarray(t, dtype=float) > self.t_end + 1e-12

    def kernel_table(self, n: int = 8193) -> tuple[float, float, np.ndarray]:
        """Uniform lookup table (t0, dt, values) for the scan kernels."""
        ts = np.linspace(0.0, self.t_end, n)
        return 0.0, float(ts[1] - ts[0]), np.asarray(self.phi_at(ts))

    def _dphi_raw(self, t):
        if self.chi.scale == 1.0:
            return _dphi_closed(t, self.chi.alpha)
        return _dphi_invert(self.chi, self.k1, t)

    def _check_domain(self, t):
        t = np.atleast_1d(t)
        if np.any(t < -1e-12):
            raise ValueError("profile argument must be nonnegative")
        if np.any(t > self.t_end + 1e-12):
            raise ProfileSaturationError(
                f"phi evaluated past its table end {self.t_end}")


def build_phi(chi: ChiSpec, eps_blow: float = 1e-3,
              n_nodes: int = 4097) -> PhiProfile:
    """Tabulate the penalty profile on [0, 1 - eps_blow]."""
    validate_chi(chi)
    if not (0.0 < eps_blow < 0.5):
        raise ValueError("eps_blow must lie in (0, 0.5)")
    k1, _ = integrate.quad(lambda s: 1.0 / (s * chi(s)), 1.0, np.inf)

    nodes = np.linspace(0.0, 1.0 - eps_blow, n_nodes)
    if chi.scale == 1.0:
        dphi = _dphi_closed(nodes, chi.alpha)
        dmid = _dphi_closed(0.5 * (nodes[:-1] + nodes[1:]), chi.alpha)
    else:
        dphi = _dphi_invert(chi, k1, nodes)
        dmid = _dphi_invert(chi, k1, 0.5 * (nodes[:-1] + nodes[1:]))
    h = np.diff(nodes)
    panels = (h / 6.0) * (dphi[:-1] + 4.0 * dmid + dphi[1:])
    phi = np.concatenate([[0.0], np.cumsum(panels)])
    return PhiProfile(chi=chi, k1=k1, eps_blow=eps_blow,
                      nodes=nodes, phi_nodes=phi, dphi_nodes=dphi)


# ---------------------------------------------------------------------------
# barrier profile psi
# ---------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL32_X, _GL32_W = np.polynomial.legendre.leggauss(32)


def _speed_coeffs(chi: ChiSpec, k3: float) -> tuple[float, float]:
    a_pow = 2.0 + 2.0 * chi.alpha
    fac = 2.0 * k3 * chi.scale * chi.scale / a_pow
    return a_pow, fac


def _speed(chi: ChiSpec, k3: float, psi):
    """First integral of the barrier ODE: psi' = F(psi) with
    F(tau)^2 = 2 K3 int_1^tau s chi(s)^2 ds (closed form for this family)."""
    a_pow, fac = _speed_coeffs(chi, k3)
    psi = np.asarray(psi, dtype=float)
    out = np.sqrt(fac * np.maximum(np.power(psi, a_pow) - 1.0, 0.0))
    return out if out.ndim else float(out)


def _time_to_reach(chi: ChiSpec, k3: float, psi_hi: float) -> float:
    """Travel time int_1^psi_hi dtau / F(tau) (substituted at the
    square-root degeneracy tau = 1 + w^2)."""
    a_pow, fac = _speed_coeffs(chi, k3)
    w_hi = math.sqrt(psi_hi - 1.0)

    def g(w):
        tau = 1.0 + w * w
        return 2.0 * w / np.sqrt(fac * (np.power(tau, a_pow) - 1.0))

    # split at w = min(1, w_hi): the integrand is analytic but varies on
    # unit scale, and quad wants finite smooth panels
    w_mid = min(1.0, w_hi)
    half = 0.5 * w_mid
    val = float(np.sum(_GL32_W * g(half * (_GL32_X + 1.0)))) * half
    if w_hi > w_mid:
        extra, _ = integrate.quad(g, w_mid, w_hi, limit=200)
        val += extra
    return val


def _tail_time(chi: ChiSpec, k3: float, psi_lo: float) -> float:
    """Remaining travel time int_psi_lo^inf dtau / F(tau), by the expansion
    of 1/F in powers of tau^-a_pow (psi_lo must be large)."""
    a_pow, fac = _speed_coeffs(chi, k3)
    a = chi.alpha
    amp = 1.0 / math.sqrt(fac)
    u = psi_lo ** (-a_pow)
    t1 = psi_lo ** (-a) / a
    t2 = psi_lo ** (-(a + a_pow)) / (2.0 * (a + a_pow))
    t3 = 0.375 * psi_lo ** (-(a + 2 * a_pow)) / (a + 2 * a_pow)
    del u
    return amp * (t1 + t2 + t3)


def blowup_abscissa_quadrature(chi: ChiSpec, k3: float,
                               psi_split: float = 1e10) -> float:
    """Blow-up abscissa t* = int_1^inf dtau / F(tau) by quadrature."""
    if k3 <= 0.0:
        raise ValueError("k3 must be positive")
    return _time_to_reach(chi, k3, psi_split) + _tail_time(chi, k3, psi_split)


def blowup_abscissa_ode(chi: ChiSpec, k3: float,
                        psi_cap: float = 1e9) -> float:
    """Blow-up abscissa by adaptive integration of psi' = F(psi).

    Independent cross-check of the quadrature route: integrates the first
    integral of the ODE with RK45 from a series start past the degenerate
    point psi = 1, stops at psi_cap, and adds the analytic remainder.
    """
    delta0 = 1e-8
    psi0 = 1.0 + delta0
    t0 = _time_to_reach(chi, k3, psi0)

    def rhs(_t, y):
        return [_speed(chi, k3, y[0])]

    def hit_cap(_t, y):
        return y[0] - psi_cap

    hit_cap.terminal = True
    hit_cap.direction = 1.0
    horizon = 10.0 * blowup_abscissa_quadrature(chi, k3)
    sol = integrate.solve_ivp(rhs, (t0, horizon), [psi0], method="RK45",
                              rtol=1e-10, atol=1e-12, events=hit_cap)
    if sol.t_events[0].size == 0:
        raise CalibrationError("barrier failed to reach cap before horizon")
    return float(sol.t_events[0][0]) + _tail_time(chi, k3, psi_cap)


@dataclass
class PsiProfile:
    """Tabulated barrier: psi'' = K3 psi chi(psi)^2, psi(0)=1, psi'(0)=0.

    Extended by the constant 1 for negative arguments (the first integral
    admits the constant branch). Values between nodes use cubic Hermite
    interpolation with the exact node slopes F(psi).
    """

    chi: ChiSpec
    k3: float
    eps_blow: float
    t_blow: float
    calibrated: bool
    nodes: np.ndarray = field(repr=False)
    psi_nodes: np.ndarray = field(repr=False)
    dpsi_nodes: np.ndarray = field(repr=False)

    @property
    def t_end(self) -> float:
        return float(self.nodes[-1])

    def speed(self, psi):
        return _speed(self.chi, self.k3, psi)

    def psi_at(self, t):
        vals, sat = self.psi_at_checked(t)
        if np.any(sat):
            raise ProfileSaturationError(
                f"psi evaluated past its table end {self.t_end}")
        return vals if np.asarray(t).ndim else float(vals)

    def psi_at_checked(self, t):
        """Values with a saturation mask; saturated entries are +inf."""
        t = np.asarray(t, dtype=float)
        tq = np.atleast_1d(t).astype(float)
        sat = tq > self.t_end * (1.0 + 1e-14)
        out = np.ones_like(tq)
        inside = (~sat) & (tq > 0.0)
        if np.any(inside):
            ti = tq[inside]
            idx = np.clip(np.searchsorted(self.nodes, ti, side="right") - 1,
                          0, len(self.nodes) - 2)
            t0, t1 = self.nodes[idx], self.nodes[idx + 1]
            h = t1 - t0
            s = (ti - t0) / h
            s2, s3 = s * s, s * s * s
            out[inside] = ((2 * s3 - 3 * s2 + 1) * self.psi_nodes[idx]
                           + (s3 - 2 * s2 + s) * h * self.dpsi_nodes[idx]
                           + (-2 * s3 + 3 * s2) * self.psi_nodes[idx + 1]
                           + (s3 - s2) * h * self.dpsi_nodes[idx + 1])
        out[sat] = np.inf
        return out.reshape(t.shape) if t.ndim else out[0], \
            sat.reshape(t.shape) if t.ndim else bool(sat[0])

    def dpsi_at(self, t):
        # consistent with the first integral at every argument
        return self.speed(self.psi_at(t))

    def d2psi_at(self, t):
        psi = self.psi_at(t)
        chi_v = self.chi(psi)
        return self.k3 * psi * chi_v * chi_v


def build_psi(chi: ChiSpec, k3: float, eps_blow: float = 1e-3,
              dt_abs: float = 3e-4, dt_tail: float = 2e-4) -> PsiProfile:
    """Tabulate the barrier on [0, min(1 - eps_blow, just-below-blow-up)].

    The node ladder is generated from the first integral in its exact
    integral form: psi places the nodes (geometric near the degenerate
    start, graded in distance-to-blow-up near the end) and each t-increment
    is an 8-point Gauss panel of d(tau)/F(tau), so node values carry
    quadrature accuracy. Slopes are the exact F(psi).
    """
    validate_chi(chi)
    if k3 <= 0.0:
        raise ValueError("k3 must be positive")
    t_blow = blowup_abscissa_quadrature(chi, k3)
    t_table_end = min(1.0 - eps_blow, t_blow * (1.0 - 1e-5))

    a_pow, fac = _speed_coeffs(chi, k3)
    delta0 = 1e-8
    psis = [1.0 + delta0]
    t_approx = _time_to_reach(chi, k3, psis[0])
    t_start = t_approx
    # scalar stepping loop; exact t-values are recomputed vectorized below
    while t_approx < t_table_end:
        p = psis[-1]
        f = math.sqrt(fac * (p ** a_pow - 1.0))
        s_left = max(t_blow - t_approx, 1e-9)
        dt = min(dt_abs, dt_tail * s_left)
        dpsi = min(f * dt, 0.04 * (p - 1.0), 0.05 * p)
        psis.append(p + dpsi)
        t_approx += dpsi / f
    psi_arr = np.asarray(psis)

    lo, hi = psi_arr[:-1], psi_arr[1:]
    halfw = 0.5 * (hi - lo)
    mids = 0.5 * (hi + lo)
    taus = mids[:, None] + halfw[:, None] * _GL_X[None, :]
    inv_f = 1.0 / np.sqrt(fac * (np.power(taus, a_pow) - 1.0))
    dts = halfw * (inv_f @ _GL_W)
    t_arr = t_start + np.concatenate([[0.0], np.cumsum(dts)])

    nodes = np.concatenate([[0.0], t_arr])
    psi_nodes = np.concatenate([[1.0], psi_arr])
    dpsi_nodes = np.concatenate([[0.0], _speed(chi, k3, psi_arr)])
    keep = nodes <= t_table_end * (1.0 + 1e-12)
    keep[0] = True
    nodes, psi_nodes, dpsi_nodes = nodes[keep], psi_nodes[keep], dpsi_nodes[keep]

    calibrated = (1.0 - eps_blow) <= t_blow <= 1.0
    return PsiProfile(chi=chi, k3=k3, eps_blow=eps_blow, t_blow=t_blow,
                      calibrated=calibrated, nodes=nodes,
                      psi_nodes=psi_nodes, dpsi_nodes=dpsi_nodes)


def calibrate_k3(chi: ChiSpec, eps_blow: float = 1e-3,
                 lo: float = 1e-3, hi: float = 1e6,
                 tol: float = 1e-6) -> float:
    """Bisect K3 so the barrier blows up at 1 - eps_blow/2.

    Larger K3 means earlier blow-up, so the abscissa is decreasing in K3;
    the target sits inside [1 - eps_blow, 1] with eps_blow/2 margin on both
    sides of the build_psi calibration window.
    """
    target = 1.0 - 0.5 * eps_blow
    t_lo = blowup_abscissa_quadrature(chi, lo)
    t_hi = blowup_abscissa_quadrature(chi, hi)
    if not (t_hi < target < t_lo):
        raise CalibrationError(
            f"target abscissa {target} not bracketed by k3 in [{lo}, {hi}]")
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        t_mid = blowup_abscissa_quadrature(chi, mid)
        if abs(t_mid - target) <= tol * target:
            return mid
        if t_mid > target:
            lo = mid
        else:
            hi = mid
    raise CalibrationError("bisection failed to meet tolerance")


# ---------------------------------------------------------------------------
# localization weight C(x)
# ---------------------------------------------------------------------------


@dataclass
class LocalizationProfile:
    """Radial localization weight on the ball B(x0, 3R/4).

    C(x) = psi(4(|x - x0| - R/2)/R); the constant branch of the barrier
    makes C identically 1 for |x - x0| <= R/2 and C blows up at the
    3R/4 shell. ``k2`` is the measured curvature constant: the sampled
    supremum of |D^2 C|/(C chi(C)^2) and |DC|^2/(C^2 chi(C)^2).
    """

    x0: np.ndarray
    r_ball: float
    chi: ChiSpec
    psi: PsiProfile
    k2: float

    @property
    def dim(self) -> int:
        return int(self.x0.size)

    def s_of_r(self, r):
        return 4.0 * (np.asarray(r, dtype=float) - 0.5 * self.r_ball) / self.r_ball

    def radius_of(self, x):
        x = np.asarray(x, dtype=float)
        diff = x - self.x0
        if x.ndim == 1:
            return float(np.sqrt(np.dot(diff, diff)))
        return np.sqrt(np.sum(diff * diff, axis=-1))

    def value(self, x):
        vals, sat = self.value_checked(x)
        if np.any(sat):
            raise ProfileSaturationError("C(x) saturates near the 3R/4 shell")
        return vals

    def value_checked(self, x):
        r = self.radius_of(x)
        return self.psi.psi_at_checked(self.s_of_r(r))

    def value_at_radius(self, r):
        vals, sat = self.psi.psi_at_checked(self.s_of_r(r))
        if np.any(sat):
            raise ProfileSaturationError("C(x) saturates near the 3R/4 shell")
        return vals

    def grad(self, x):
        """DC(x) = psi'(s) (4/R) (x - x0)/r; zero on the constant region."""
        x = np.asarray(x, dtype=float)
        r = self.radius_of(x)
        if r <= 0.5 * self.r_ball or r == 0.0:
            return np.zeros_like(x)
        dpsi = self.psi.dpsi_at(self.s_of_r(r))
        return dpsi * (4.0 / self.r_ball) * (x - self.x0) / r

    def grad_norm_at_radius(self, r):
        r = np.asarray(r, dtype=float)
        s = self.s_of_r(r)
        dpsi = self.psi.speed(self.psi.psi_at(np.maximum(s, 0.0)))
        out = np.where(s > 0.0, dpsi * (4.0 / self.r_ball), 0.0)
        return out if out.ndim else float(out)

    def hess_norm_at_radius(self, r):
        """Spectral norm of D^2 C: max of radial psi''(s)(4/R)^2 and the
        tangential psi'(s)(4/R)/r (d >= 2 only)."""
        r = np.asarray(r, dtype=float)
        s = self.s_of_r(r)
        inside = s > 0.0
        psi = self.psi.psi_at(np.maximum(s, 0.0))
        chi_v = self.chi(psi)
        radial = self.psi.k3 * psi * chi_v * chi_v * (4.0 / self.r_ball) ** 2
        out = np.where(inside, radial, 0.0)
        if self.dim >= 2:
            tang = np.where(inside & (r > 0),
                            self.psi.speed(psi) * (4.0 / self.r_ball)
                            / np.maximum(r, 1e-300),
                            0.0)
            out = np.maximum(out, tang)
        return out if out.ndim else float(out)


def build_localization(x0, r_ball: float, chi: ChiSpec, psi: PsiProfile,
                       n_samples: int = 1024,
                       fd_step_scale: float = 1e-5) -> LocalizationProfile:
    """Assemble the localization weight and measure K2(R).

    K2 is the supremum over a fixed radial sample of the two curvature
    ratios, with derivatives taken by central differences at step
    fd_step_scale * (domain length 3R/2). The sample grid lives in the
    scale-free variable s, so K2 scales exactly like R^-2 across builds.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if r_ball <= 0.0:
        raise ValueError("R must be positive")
    prof = LocalizationProfile(x0=x0, r_ball=r_ball, chi=chi, psi=psi, k2=0.0)

    h = fd_step_scale * 1.5 * r_ball
    h_s = 4.0 * h / r_ball
    s_max = psi.t_end - max(1e-3, 4.0 * h_s)
    s_grid = np.linspace(-0.5, s_max, n_samples)
    r_grid = 0.5 * r_ball + 0.25 * r_ball * s_grid

    c0 = prof.value_at_radius(r_grid)
    cp = prof.value_at_radius(r_grid + h)
    cm = prof.value_at_radius(r_grid - h)
    g1 = (cp - cm) / (2.0 * h)
    g2 = (cp - 2.0 * c0 + cm) / (h * h)

    hess = np.abs(g2)
    if x0.size >= 2:
        hess = np.maximum(hess, np.abs(g1) / np.maximum(r_grid, 1e-300))
    chi_c = chi(c0)
    ratio1 = hess / (c0 * chi_c * chi_c)
    ratio2 = (g1 / (c0 * chi_c)) ** 2
    prof.k2 = float(np.max(np.maximum(ratio1, ratio2)))
    return prof
