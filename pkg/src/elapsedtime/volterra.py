"""Delayed and convolution Volterra equations, comparison checks and
super-solution certificates.

Two scalar integral equations govern how the firing-rate deviation can grow:

    u(t) = c1 u(t - d) + c2 int_0^t e^{-lam (t - s)} u(s - d) ds + f(t)
    u(t) = (k * u)(t) + f(t)

Both have nonnegative coefficients, so a function satisfying the relation
with ">=" (an upper solution) bounds the true solution from above. The
checks below evaluate the relation with exactly the discretization the
marching solvers use, so the comparison argument carries over step by step.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.signal import fftconvolve

from .errors import DegenerateConstants, ValidationError
from .model import DelayKernel

CERTIFICATE_SLACK = 1.01
C4_HORIZON = 1e3
C4_STEP = 1e-2
# allowed round-off in the convolution check (relative to max |candidate|)
CHECK_TOL = 1e-12


def _tabulate(f, t):
    if callable(f):
        return np.asarray(np.broadcast_to(f(t), t.shape), dtype=float).copy()
    arr = np.asarray(f, dtype=float)
    if arr.shape != t.shape:
        raise ValidationError(f"tabulated function has {arr.size} samples, expected {t.size}")
    return arr.copy()


# ---------------------------------------------------------------------------
# Problems and marching solvers
# ---------------------------------------------------------------------------


@dataclass
class DelayedVolterraProblem:
    """u(t) = c1 u(t-d) + c2 int_0^t e^{-lam(t-s)} u(s-d) ds + f(t), u = u0 on [-d, 0).

    ``f`` is sampled on t_k = k dt, k = 0..N; ``u0`` on -d, -d+dt, ..., 0
    (its value at t = 0 is superseded by the equation). Either may be a
    callable, sampled at construction when ``T`` is given.
    """

    c1: float
    c2: float
    d: float
    lam: float
    f: np.ndarray
    u0: np.ndarray
    dt: float
    T: Optional[float] = None

    def __post_init__(self):
        for name in ("c1", "c2"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be finite and >= 0")
        if not (self.d > 0 and self.lam > 0 and self.dt > 0):
            raise ValidationError("d, lam and dt must be > 0")
        m = int(round(self.d / self.dt))
        if m < 1 or abs(m * self.dt - self.d) > 1e-9 * self.d:
            raise ValidationError(f"d={self.d} must be an integer multiple of dt={self.dt}")
        self.m = m
        if callable(self.f):
            if self.T is None:
                raise ValidationError("T is required when f is a callable")
            n = int(round(self.T / self.dt))
            self.f = _tabulate(self.f, np.arange(n + 1) * self.dt)
        self.f = np.asarray(self.f, dtype=float)
        self.u0 = _tabulate(self.u0, (np.arange(m + 1) - m) * self.dt)
        if self.f.ndim != 1 or self.f.size < 2:
            raise ValidationError("f needs at least two samples")
        if not (np.all(np.isfinite(self.f)) and np.all(np.isfinite(self.u0))):
            raise ValidationError("f and u0 must be finite")
        self.T = (self.f.size - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        """Full time grid -d, ..., T matching the marched output."""
        return (np.arange(self.m + self.f.size) - self.m) * self.dt


def _delayed_rhs(p: DelayedVolterraProblem, u: np.ndarray, k: int, memory: float) -> float:
    # u is indexed from t = -d, so u(t_k - d) is u[k]
    return p.c1 * u[k] + p.c2 * memory + p.f[k]


def march_delayed(problem: DelayedVolterraProblem) -> np.ndarray:
    """Solve on [-d, T]; returns samples at ``problem.times``.

    The memory term is accumulated as I_{k+1} = e^{-lam dt} (I_k + dt u(t_k - d)),
    a left-rectangle rule in the variable s, exact for the exponential factor.
    """
    p = problem
    m, n = p.m, p.f.size
    u = np.empty(m + n)
    u[:m] = p.u0[:m]
    decay = math.exp(-p.lam * p.dt)
    memory = 0.0
    for k in range(n):
        u[m + k] = _delayed_rhs(p, u, k, memory)
        memory = decay * (memory + p.dt * u[k])
    return u


def _check_result(slack: np.ndarray, side: str, tol: float):
    side = side.lower()
    if side not in ("upper", "lower"):
        raise ValidationError("side must be 'upper' or 'lower'")
    margin = float(np.min(slack if side == "upper" else -slack))
    return margin >= -tol, margin


def check_comparison_discrete(problem: DelayedVolterraProblem, candidate, side: str = "upper"):
    """Evaluate the delayed relation on ``candidate``; returns ``(passes, margin)``.

    An upper candidate needs v >= u0 on [-d, 0) and v >= RHS(v) on [0, T];
    the margin is the smallest slack (negative when violated). The memory
    term uses the same recursion as :func:`march_delayed`.
    """
    p = problem
    m, n = p.m, p.f.size
    v = _tabulate(candidate, p.times)
    slack = np.empty(m + n)
    slack[:m] = v[:m] - p.u0[:m]
    decay = math.exp(-p.lam * p.dt)
    memory = 0.0
    for k in range(n):
        slack[m + k] = v[m + k] - _delayed_rhs(p, v, k, memory)
        memory = decay * (memory + p.dt * v[k])
    return _check_result(slack, side, 0.0)


@dataclass
class ConvolutionVolterraProblem:
    """u(t) = int_0^t k(t - s) u(s) ds + f(t) with k >= 0, sampled at spacing dt."""

    k: np.ndarray
    f: np.ndarray
    dt: float

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        if not self.dt > 0:
            raise ValidationError("dt must be > 0")
        if self.k.ndim != 1 or self.k.shape != self.f.shape or self.k.size < 2:
            raise ValidationError("k and f must be 1-D arrays of equal length >= 2")
        if not (np.all(np.isfinite(self.k)) and np.all(np.isfinite(self.f))):
            raise ValidationError("k and f must be finite")
        if np.any(self.k < 0):
            raise ValidationError("the kernel k must be nonnegative")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.f.size) * self.dt


def _history_sum(k_rev: np.ndarray, u: np.ndarray, n: int, dt: float) -> float:
    """Trapezoid sum over j < n of w_j k(t_n - t_j) u_j; k_rev[-1 - i] = k_i."""
    if n == 0:
        return 0.0
    size = k_rev.size
    s = float(np.dot(k_rev[size - 1 - n:size - 1], u[:n]))
    return dt * (s - 0.5 * k_rev[size - 1 - n] * u[0])


def march_convolution(problem: ConvolutionVolterraProblem) -> np.ndarray:
    """Trapezoid marching, implicit in the diagonal term."""
    p = problem
    kmax = float(np.max(p.k))
    if p.dt * kmax >= 1.0:
        raise ValidationError(f"dt * max k = {p.dt * kmax:.3g} must be < 1")
    k_rev = p.k[::-1].copy()
    diag = 1.0 - 0.5 * p.dt * p.k[0]
    u = np.empty(p.f.size)
    u[0] = p.f[0]
    for n in range(1, p.f.size):
        u[n] = (p.f[n] + _history_sum(k_rev, u, n, p.dt)) / diag
    return u


def check_comparison_convolution(problem: ConvolutionVolterraProblem, candidate, side: str = "upper"):
    """Slack of v >= k * v + f (trapezoid, diagonal included) at every grid time.

    Round-off up to ``CHECK_TOL * max|v|`` is tolerated, since the marched
    solution only satisfies the relation to that level.
    """
    p = problem
    v = _tabulate(candidate, p.times)
    k_rev = p.k[::-1].copy()
    slack = np.empty(v.size)
    slack[0] = v[0] - p.f[0]
    for n in range(1, v.size):
        rhs = p.f[n] + _history_sum(k_rev, v, n, p.dt) + 0.5 * p.dt * p.k[0] * v[n]
        slack[n] = v[n] - rhs
    return _check_result(slack, side, CHECK_TOL * max(1.0, float(np.max(np.abs(v)))))


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------


@dataclass
class SupersolutionCertificate:
    """v(t) = A e^{-mu t} (exponential) or A / (1 + t^mu) (algebraic).

    ``A`` is None when the connectivity bound fails; ``margin`` is then the
    (negative) gap ell_bound - ell, otherwise the smallest slack of the
    defining inequalities over the time net.
    """

    form: str
    kind: str
    A: Optional[float]
    mu: float
    constants_used: dict
    admissible: bool
    margin: float
    ell_bound: float
    net: list = field(default_factory=list, repr=False)

    def evaluate(self, t):
        if self.A is None:
            raise ValidationError("inadmissible certificate has no super-solution")
        t = np.asarray(t, dtype=float)
        if self.form == "exponential":
            return self.A * np.exp(-self.mu * t)
        return self.A / (1.0 + np.maximum(t, 0.0) ** self.mu)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("net")
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def proof_constants(C0: float, s_sup: float, tv0: float, rate_dev0: float) -> dict:
    """C1 = 2 C0 |S|, C2 = C0 |S| |n0 - n*|_TV, C3 = |r0 - r*|_inf."""
    return {"C1": 2.0 * C0 * s_sup, "C2": C0 * s_sup * tv0, "C3": float(rate_dev0)}


def _need(constants, *names):
    missing = [n for n in names if n not in constants]
    if missing:
        raise ValidationError(f"missing certificate constants: {missing}")
    vals = {}
    for n in names:
        v = float(constants[n])
        if not math.isfinite(v) or v < 0:
            raise ValidationError(f"constant {n} must be finite and >= 0")
        vals[n] = v
    return vals


def _time_net(horizon: float, n: int = 2001) -> np.ndarray:
    return np.concatenate([[0.0], np.geomspace(1e-3, horizon, n - 1)])


def _discrete_delay_certificate(constants: dict) -> SupersolutionCertificate:
    c = _need(constants, "ell", "lam", "C1", "C2", "C3", "d")
    ell, lam, C1, C2, C3, d = (c[k] for k in ("ell", "lam", "C1", "C2", "C3", "d"))
    if lam <= 0 or d <= 0:
        raise DegenerateConstants("discrete-delay certificate needs lam > 0 and d > 0")
    mu = float(constants.get("mu", lam / 2.0 if d <= 1.0 else lam / (d + 1.0)))
    if not 0 < mu < lam:
        raise DegenerateConstants(f"mu={mu} must lie in (0, lam={lam})")
    gap = lam - mu
    bound = math.exp(-mu * d) * gap / (gap + C1)
    used = dict(c, mu=mu)
    if not ell < bound:
        return SupersolutionCertificate("exponential", "discrete_delay", None, mu, used, False, bound - ell, bound)
    denom = gap - ell * math.exp(mu * d) * (gap + C1)
    A = CERTIFICATE_SLACK * max(C3, C2 * gap / denom)
    t = _time_net(50.0 / gap)
    growth = ell * math.exp(mu * d)
    slack = A * (1.0 - growth - C1 * growth * (-np.expm1(-gap * t)) / gap) - C2 * np.exp(-gap * t)
    margin = float(min(slack.min(), A - C3))
    return SupersolutionCertificate("exponential", "discrete_delay", A, mu, used, margin >= 0, margin, bound,
                                    net=t.tolist())


def _exp_conv(c_alpha, beta, lam, t):
    """(C_alpha e^{-beta .} * e^{-lam .})(t)."""
    if abs(lam - beta) < 1e-12:
        return c_alpha * t * np.exp(-beta * t)
    return c_alpha * (np.exp(-beta * t) - np.exp(-lam * t)) / (lam - beta)


def _distributed_exp_certificate(constants: dict) -> SupersolutionCertificate:
    c = _need(constants, "ell", "lam", "C1", "C2", "C3", "c_alpha", "beta")
    ell, lam, C1, C2, C3, ca, beta = (c[k] for k in ("ell", "lam", "C1", "C2", "C3", "c_alpha", "beta"))
    if lam <= 0 or beta <= 0 or ca <= 0:
        raise DegenerateConstants("distributed certificate needs lam, beta, C_alpha > 0")
    if beta == lam:
        raise DegenerateConstants("beta == lam: the amplitude bound divides by |lam - beta|")
    mu = float(constants.get("mu", min(lam, beta) / 2.0))
    if not 0 < mu < min(lam, beta):
        raise DegenerateConstants(f"mu={mu} must lie in (0, min(lam, beta))")
    gl, gb = lam - mu, beta - mu
    bound = (gb / ca) * (gl / (gl + C1))
    used = dict(c, mu=mu)
    if not ell < bound:
        return SupersolutionCertificate("exponential", "distributed_exp", None, mu, used, False, bound - ell, bound)
    A = CERTIFICATE_SLACK * ca * (C3 / beta + C2 / abs(lam - beta)) * (gb * gl / (gb * gl - ell * ca * (gl + C1)))
    # defining inequality with alpha replaced by its bound C_alpha e^{-beta s}
    t = _time_net(50.0 / min(gl, gb))
    g_term = np.exp(mu * t) * (C3 * ca / beta * np.exp(-beta * t) + C2 * _exp_conv(ca, beta, lam, t))
    first = ca * (-np.expm1(-gb * t)) / gb
    if gl != gb:
        second = first - ca * (np.exp(-gb * t) - np.exp(-gl * t)) / (gl - gb)
    else:
        second = first - ca * t * np.exp(-gl * t)
    slack = A - g_term - ell * A * first - ell * A * C1 / gl * second
    margin = float(slack.min())
    return SupersolutionCertificate("exponential", "distributed_exp", A, mu, used, margin >= 0, margin, bound,
                                    net=t.tolist())


def build_exponential_certificate(kind: str, constants: dict) -> SupersolutionCertificate:
    """Exponential super-solution for the discrete-delay or exponential-kernel case.

    ``kind`` is ``"discrete_delay"`` (needs ell, lam, C1, C2, C3, d) or
    ``"distributed_exp"`` (needs ell, lam, C1, C2, C3, c_alpha, beta). An
    optional ``mu`` overrides the default decay rate.
    """
    kind = kind.lower().replace("-", "_")
    if kind == "discrete_delay":
        return _discrete_delay_certificate(constants)
    if kind in ("distributed_exp", "exponential"):
        return _distributed_exp_certificate(constants)
    raise ValidationError(f"unknown certificate kind {kind!r}")


def _trap_conv(a: np.ndarray, b: np.ndarray, h: float) -> np.ndarray:
    """Trapezoid approximation of int_0^t a(t - s) b(s) ds for a, b >= 0.

    FFT round-off can dip slightly below zero; those values are clipped.
    """
    full = fftconvolve(a, b)[: a.size]
    return np.maximum(h * (full - 0.5 * a * b[0] - 0.5 * a[0] * b), 0.0)


def algebraic_c4(kernel: DelayKernel, lam: float, horizon: float = C4_HORIZON, step: float = C4_STEP):
    """Largest of the four weighted quantities bounded by C4, over [0, horizon].

    Returns ``(C4, parts)`` where ``parts`` maps each quantity to the
    arrays evaluated on the net, for reuse in the slack computation.
    """
    if kernel.beta is None or kernel.beta <= 1:
        raise DegenerateConstants("algebraic certificate needs beta > 1")
    mu = kernel.beta - 1.0
    t = np.arange(int(round(horizon / step)) + 1) * step
    weight = 1.0 + t ** mu
    alpha = kernel.evaluate(t)
    expo = np.exp(-lam * t)
    inv = 1.0 / weight
    e_part = _trap_conv(expo, inv, step)
    parts = {
        "tail": weight * kernel.tail(t),
        "alpha_exp": weight * _trap_conv(alpha, expo, step),
        "alpha_inv": weight * _trap_conv(inv, alpha, step),
        "alpha_exp_inv": weight * _trap_conv(alpha, e_part, step),
    }
    return float(max(np.max(v) for v in parts.values())), dict(parts, t=t)


def build_algebraic_certificate(constants: dict, kernel: Optional[DelayKernel] = None) -> SupersolutionCertificate:
    """Algebraic super-solution A / (1 + t^mu), mu = beta - 1.

    Needs ell, lam, C1, C2, C3, c_alpha, beta. The kernel defaults to
    (beta - 1)(1 + s)^{-beta} scaled to the given C_alpha bound.
    """
    c = _need(constants, "ell", "lam", "C1", "C2", "C3", "c_alpha", "beta")
    ell, lam, C1, C2, C3, beta = (c[k] for k in ("ell", "lam", "C1", "C2", "C3", "beta"))
    if beta <= 1:
        raise DegenerateConstants("algebraic certificate needs beta > 1")
    if lam <= 0:
        raise DegenerateConstants("algebraic certificate needs lam > 0")
    if kernel is None:
        from .model import algebraic_kernel
        kernel = algebraic_kernel(beta)
    C4, parts = algebraic_c4(kernel, lam)
    mu = beta - 1.0
    bound = 1.0 / (C4 * (1.0 + C1))
    used = dict(c, mu=mu, C4=C4)
    if not ell < bound:
        return SupersolutionCertificate("algebraic", "algebraic", None, mu, used, False, bound - ell, bound)
    A = CERTIFICATE_SLACK * C4 * (C2 + C3) / (1.0 - ell * C4 * (1.0 + C1))
    slack = (A - C3 * parts["tail"] - C2 * parts["alpha_exp"]
             - ell * A * parts["alpha_inv"] - ell * A * C1 * parts["alpha_exp_inv"])
    margin = float(slack.min())
    return SupersolutionCertificate("algebraic", "algebraic", A, mu, used, margin >= 0, margin, bound)


def delayed_problem_for(cert: SupersolutionCertificate, T: float, dt: float) -> DelayedVolterraProblem:
    """The delayed problem whose upper solution the discrete-delay certificate claims."""
    c = cert.constants_used
    return DelayedVolterraProblem(
        c1=c["ell"], c2=c["C1"] * c["ell"], d=c["d"], lam=c["lam"],
        f=lambda t: c["C2"] * np.exp(-c["lam"] * t), u0=lambda t: np.full_like(t, c["C3"]),
        dt=dt, T=T,
    )


def convolution_problem_for(cert: SupersolutionCertificate, T: float, dt: float,
                            alpha: Optional[Callable] = None,
                            tail: Optional[Callable] = None) -> ConvolutionVolterraProblem:
    """k = ell (alpha + C1 alpha * e^{-lam .}), f = C3 tail + C2 alpha * e^{-lam .}.

    ``alpha`` defaults to the worst case allowed by the constants: C_alpha
    e^{-beta s} for exponential certificates, (beta - 1)(1 + s)^{-beta} for
    algebraic ones. ``tail(t)`` is int_t^inf alpha.
    """
    c = cert.constants_used
    t = np.arange(int(round(T / dt)) + 1) * dt
    if alpha is None:
        ca, beta = c["c_alpha"], c["beta"]
        if cert.form == "exponential":
            alpha = lambda s: ca * np.exp(-beta * s)  # noqa: E731
            tail = lambda s: ca / beta * np.exp(-beta * s)  # noqa: E731
        else:
            alpha = lambda s: (beta - 1.0) * (1.0 + s) ** (-beta)  # noqa: E731
            tail = lambda s: (1.0 + s) ** (1.0 - beta)  # noqa: E731
    if tail is None:
        raise ValidationError("tail is required with a custom alpha")
    a = alpha(t)
    a_exp = _trap_conv(a, np.exp(-c["lam"] * t), dt)
    k = c["ell"] * (a + c["C1"] * a_exp)
    f = c["C3"] * tail(t) + c["C2"] * a_exp
    return ConvolutionVolterraProblem(k=k, f=f, dt=dt)


# ---------------------------------------------------------------------------
# Decay of convolutions
# ---------------------------------------------------------------------------


@dataclass
class DecayExponentFit:
    exponent: float
    r_squared: float
    window: tuple
    flagged: bool

    def to_dict(self) -> dict:
        return asdict(self)


def convolution_decay_exponent(f, g, T: float, dt: float = 0.01) -> DecayExponentFit:
    """Power-law decay exponent of h = f * g from a log-log fit on [T/10, T].

    ``f`` and ``g`` are callables or arrays sampled at spacing ``dt`` on
    [0, T]. The fit is flagged when R^2 < 0.99.
    """
    if T < 1e3:
        raise ValidationError("T must be >= 1000 for the asymptotic window")
    t = np.arange(int(round(T / dt)) + 1) * dt
    h = _trap_conv(_tabulate(f, t), _tabulate(g, t), dt)
    mask = (t >= T / 10.0) & (h > 0)
    if mask.sum() < 10:
        raise ValidationError("convolution vanishes on the fit window")
    x, y = np.log(t[mask]), np.log(h[mask])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return DecayExponentFit(float(-slope), r2, (T / 10.0, T), r2 < 0.99)
