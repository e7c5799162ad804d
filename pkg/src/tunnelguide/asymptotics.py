"""Asymptotic scattering model for resonant tunneling through two narrows.

All limit-problem data (tip coefficients, expansion coefficients, junction
and channel constants) are combined here into closed-form amplitudes
``s11``, ``s12`` for a given narrow size ``eps``, the complex resonance pole,
and the Lorentzian transmission profile of each spin channel.

Notation: ``E = eps^(2 mu1 + 1)``;

    gamma = (E^-1 - a alpha) / (A beta),
    delta = (alpha + a (beta^2 - alpha^2) E) / (A beta).

The matching conditions at the two narrows are

    gamma s11 + conj(gamma) = C1 c1 + C2 d1,
    delta s11 + conj(delta) = C1 (k^2 - k0^2) + C2 conj(b2),
    gamma s12 = (C1 c2 + C2 d2) exp(-i nu1 d),
    delta s12 = -C2 conj(b1) exp(-i nu1 d).

Channel constants ``a``, ``A`` and the expansion coefficients ``c_j``,
``d_j`` are evaluated at real ``k`` only; near the pole they are frozen at the
real part of ``k^2``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class AsymptoticModel:
    """Coefficients of one spin channel.

    Parameters
    ----------
    k0_sq, b1, b2 : resonator eigenvalue and tip coefficients.
    mu1, mu2 : cap exponents.
    alpha, beta : junction coefficients (identical narrows).
    d : distance between the tips.
    lam1_sq : first threshold of the cross-section.
    channel : callable ``k2 -> (a, A)`` at real ``k2``.
    expansion : callable ``k2 -> (c1, c2, d1, d2)`` or ``None``.  Leading
        order mode uses ``c_j = -conj(b1) b_j`` and ``d_j = 0``.
    spin : label of the channel.
    delta_small : small positive number in the remainder exponent.
    regime_threshold : warning level for ``eps^(2 mu1 + 1)``.
    """

    k0_sq: float
    b1: complex
    b2: complex
    mu1: float
    mu2: float
    alpha: float
    beta: float
    d: float
    lam1_sq: float
    channel: Callable
    expansion: Callable | None = None
    spin: str = "plus"
    delta_small: float = 0.1
    regime_threshold: float = 0.05

    def __post_init__(self):
        if self.beta == 0.0:
            raise ValueError("junction coefficient beta vanishes")
        if self.b1 == 0 or self.b2 == 0:
            raise ValueError("tip coefficient vanishes")

    @property
    def tau(self) -> float:
        """Remainder exponent ``min(2 - delta_small, mu2 - mu1)``."""
        return min(2.0 - self.delta_small, self.mu2 - self.mu1)

    def scale(self, eps: float) -> float:
        """``eps^(2 mu1 + 1)``."""
        return float(eps) ** (2.0 * self.mu1 + 1.0)

    def check_regime(self, eps: float) -> bool:
        """Warn and return ``False`` when ``eps^(2 mu1 + 1)`` exceeds the regime threshold."""
        E = self.scale(eps)
        if E > self.regime_threshold:
            warnings.warn(f"eps^(2mu1+1) = {E:.3g} exceeds {self.regime_threshold}: outside the asymptotic regime",
                          RuntimeWarning, stacklevel=2)
            return False
        return True

    def nu1(self, k2) -> float:
        k2 = float(np.real(k2))
        if k2 <= self.lam1_sq:
            raise ValueError("k^2 below the first threshold")
        return float(np.sqrt(k2 - self.lam1_sq))

    def coefficients(self, k2, mode: str = "leading") -> tuple:
        """``(c1, c2, d1, d2)`` at real ``k2``."""
        if mode == "leading":
            b1c = np.conj(self.b1)
            return (-b1c * self.b1, -b1c * self.b2, 0j, 0j)
        if mode == "full":
            if self.expansion is None:
                raise ValueError("full mode needs the regularized expansion")
            return tuple(complex(v) for v in self.expansion(float(np.real(k2))))
        raise ValueError("mode must be 'leading' or 'full'")

    def with_expansion(self, expansion) -> "AsymptoticModel":
        return replace(self, expansion=expansion)


def gamma_delta(model: AsymptoticModel, eps: float, k2: float | None = None) -> tuple:
    """``(gamma, delta)`` at narrow size ``eps``; channel constants at real ``k2`` (default ``k0^2``)."""
    k2 = model.k0_sq if k2 is None else float(np.real(k2))
    a, A = model.channel(k2)
    Ab = A * model.beta
    if Ab == 0:
        raise ValueError("A * beta vanishes")
    E = model.scale(eps)
    gamma = (1.0 / E - a * model.alpha) / Ab
    delta = (model.alpha + a * (model.beta ** 2 - model.alpha ** 2) * E) / Ab
    return complex(gamma), complex(delta)


@dataclass
class MatchingSolution:
    """Amplitudes from the matching conditions at one ``(k, eps)``."""

    k2: float
    eps: float
    s11: complex
    s12: complex
    C1: complex
    C2: complex
    residual: float
    detuning: float = 0.0

    @property
    def transmission(self) -> float:
        return abs(self.s12) ** 2

    @property
    def reflection(self) -> float:
        return abs(self.s11) ** 2

    @property
    def unitarity_defect(self) -> float:
        return self.reflection + self.transmission - 1.0


def _denominator(z, b1, b2, c, gamma, delta):
    c1, c2, d1, d2 = c
    b1c, b2c = np.conj(b1), np.conj(b2)
    return (-z * b1c * gamma ** 2 - (z * d2 - b1c * c1 - b2c * c2) * gamma * delta
            + (c1 * d2 - c2 * d1) * delta ** 2)


def _matching(model: AsymptoticModel, z: float, eps: float, mode: str, method: str, floor: float):
    """Matching solution at detuning ``z = k^2 - k0^2`` (real)."""
    k2 = model.k0_sq + z
    nu = model.nu1(k2)
    gamma, delta = gamma_delta(model, eps, k2)
    c = model.coefficients(k2, mode)
    c1, c2, d1, d2 = c
    b1c, b2c = np.conj(model.b1), np.conj(model.b2)
    phase = np.exp(-1j * nu * model.d)
    if method == "closed":
        D = _denominator(z, model.b1, model.b2, c, gamma, delta)
        if abs(D) < floor:
            raise ValueError("matching system degenerate at real k")
        s12 = 2j * b1c * c2 * phase / D
        C1 = (gamma * b1c + delta * d2) * s12 / (b1c * c2 * phase)
        C2 = -delta * s12 / (b1c * phase)
        s11 = (z * b1c * abs(gamma) ** 2 + (z * d2 - b2c * c2) * np.conj(gamma) * delta
               - b1c * c1 * gamma * np.conj(delta) - (c1 * d2 - c2 * d1) * abs(delta) ** 2) * s12 / (2j * b1c * c2 * phase)
    elif method == "linear":
        # unknowns (s11, s12, C1, C2)
        M = np.array([[gamma, 0, -c1, -d1],
                      [delta, 0, -z, -b2c],
                      [0, gamma, -c2 * phase, -d2 * phase],
                      [0, delta, 0, b1c * phase]], dtype=complex)
        rhs = np.array([-np.conj(gamma), -np.conj(delta), 0, 0], dtype=complex)
        if abs(np.linalg.det(M / np.abs(M).max(axis=1, keepdims=True))) < floor:
            raise ValueError("matching system degenerate at real k")
        s11, s12, C1, C2 = np.linalg.solve(M, rhs)
    else:
        raise ValueError("method must be 'linear' or 'closed'")
    eqs = [
        (gamma * s11 + np.conj(gamma), C1 * c1 + C2 * d1),
        (delta * s11 + np.conj(delta), C1 * z + C2 * b2c),
        (gamma * s12, (C1 * c2 + C2 * d2) * phase),
        (delta * s12, -C2 * b1c * phase),
    ]
    res = max(abs(l - r) / max(abs(l), abs(r), 1e-300) for l, r in eqs)
    return MatchingSolution(float(k2), float(eps), complex(s11), complex(s12), complex(C1), complex(C2), float(res),
                            float(z))


def matching_solve(model: AsymptoticModel, k2: float, eps: float, mode: str = "leading",
                   method: str = "linear", floor: float = 1e-300, detuning: float | None = None) -> MatchingSolution:
    """``s11``, ``s12``, ``C1``, ``C2`` at real ``k^2`` in the single-channel window.

    ``method="closed"`` evaluates the explicit solution formulas, which use the
    flux identity ``Im a = |A|^2``; ``method="linear"`` solves the four
    matching conditions directly and stays exact when computed channel
    constants satisfy the identity only approximately.  The residual is the
    largest relative defect of the four conditions.  Pass ``detuning``
    (``k^2 - k0^2``) instead of ``k2`` to resolve peaks narrower than the
    floating-point spacing of ``k^2``.
    """
    z = float(k2) - model.k0_sq if detuning is None else float(detuning)
    return _matching(model, z, eps, mode, method, floor)


@dataclass
class ResonancePole:
    """Complex pole ``k_p^2 = k_r^2 - i k_i^2`` of ``s12``."""

    k_r_sq: float
    k_i_sq: float
    trace: list = field(default_factory=list)
    leading: tuple = (np.nan, np.nan)
    residual: float = np.nan
    shift: float = 0.0

    @property
    def k_p_sq(self) -> complex:
        return complex(self.k_r_sq, -self.k_i_sq)


def leading_pole(model: AsymptoticModel, eps: float) -> tuple:
    """Leading-order ``(k_r^2, k_i^2)``: the power-law terms in ``eps`` alone."""
    E = model.scale(eps)
    s = abs(model.b1) ** 2 + abs(model.b2) ** 2
    _, A = model.channel(model.k0_sq)
    return (model.k0_sq - model.alpha * s * E, model.beta ** 2 * s * abs(A) ** 2 * E ** 2)


def resonance_pole(model: AsymptoticModel, eps: float, mode: str = "leading", tol: float = 1e-14,
                   maxiter: int = 200) -> ResonancePole:
    """Successive approximations for the pole of ``s12`` starting from ``k0^2``.

    Iterates ``z <- N(z) / M(z)`` with ``z = k^2 - k0^2``,
    ``N = (conj(b1) c1 + conj(b2) c2) gamma delta + (c1 d2 - c2 d1) delta^2``
    and ``M = conj(b1) gamma^2 + d2 gamma delta``; all coefficients are
    evaluated at ``Re(k0^2 + z)``.

    Raises
    ------
    ValueError
        "outside asymptotic regime" if the iteration does not contract or
        leaves the single-channel window.
    """
    b1c, b2c = np.conj(model.b1), np.conj(model.b2)
    z = 0j
    trace = [z]
    steps = []
    for _ in range(maxiter):
        k2 = model.k0_sq + z.real
        if k2 <= model.lam1_sq:
            raise ValueError("outside asymptotic regime: pole iteration left the single-channel window")
        gamma, delta = gamma_delta(model, eps, k2)
        c1, c2, d1, d2 = model.coefficients(k2, mode)
        num = (b1c * c1 + b2c * c2) * gamma * delta + (c1 * d2 - c2 * d1) * delta ** 2
        den = b1c * gamma ** 2 + d2 * gamma * delta
        z_new = complex(num / den)
        step = abs(z_new - z)
        steps.append(step)
        trace.append(z_new)
        z = z_new
        if len(steps) >= 3 and steps[-1] > steps[-2] > steps[-3] and steps[-1] > 1e-12 * max(abs(z), 1e-300):
            raise ValueError("outside asymptotic regime: pole iteration not contracting")
        if step <= tol * max(abs(z), 1e-300):
            break
    else:
        raise ValueError("outside asymptotic regime: pole iteration did not converge")
    k2 = model.k0_sq + z.real
    gamma, delta = gamma_delta(model, eps, k2)
    c = model.coefficients(k2, mode)
    D = _denominator(z, model.b1, model.b2, c, gamma, delta)
    scale = abs((b1c * c[0] + b2c * c[1]) * gamma * delta) + abs(z * b1c * gamma ** 2)
    return ResonancePole(float(model.k0_sq + z.real), float(-z.imag), trace, leading_pole(model, eps),
                         float(abs(D) / scale), float(z.real))


@dataclass
class PeakCharacteristics:
    """Lorentzian peak data of one channel."""

    k_r_sq: float
    T_max: float
    width: float
    q: float
    P: float
    shift: float = 0.0

    def lorentzian(self, offset, eps_power: float) -> np.ndarray:
        """Lorentzian transmission at ``k^2 = k_r^2 + offset`` given ``eps^(4 mu1 + 2)``."""
        offset = np.asarray(offset, dtype=float)
        return 1.0 / (0.25 * (self.q + 1.0 / self.q) ** 2 + (self.P * offset / eps_power) ** 2)


def peak_characteristics(model: AsymptoticModel, eps: float, mode: str = "leading",
                         pole: ResonancePole | None = None) -> PeakCharacteristics:
    """Peak position (from the pole), height ``4/(q + 1/q)^2`` and width of the Lorentzian."""
    pole = resonance_pole(model, eps, mode) if pole is None else pole
    _, A = model.channel(model.k0_sq)
    q = abs(model.b1) / abs(model.b2)
    P = 1.0 / (2.0 * abs(model.b1) * abs(model.b2) * model.beta ** 2 * abs(A) ** 2)
    e4 = model.scale(eps) ** 2
    return PeakCharacteristics(pole.k_r_sq, 4.0 / (q + 1.0 / q) ** 2, (q + 1.0 / q) * e4 / P, q, P, pole.shift)


@dataclass
class TransmissionProfile:
    """Sampled transmission: Lorentzian form and the matching-solution ``|s12|^2``.

    ``offset`` is ``k^2 - k_r^2`` for every sample, kept separately from
    ``k2`` because resonance widths can fall below the spacing of
    floating-point numbers near ``k^2``.
    """

    k2: np.ndarray
    offset: np.ndarray
    T_lorentz: np.ndarray
    T_full: np.ndarray
    peak: PeakCharacteristics
    pole: ResonancePole
    mode: str = "leading"

    def as_rows(self) -> list:
        return [dict(k2=float(k), offset=float(o), T_lorentz=float(a), T=float(b))
                for k, o, a, b in zip(self.k2, self.offset, self.T_lorentz, self.T_full)]


def transmission_profile(model: AsymptoticModel, eps: float, k2=None, mode: str = "leading", n: int = 201,
                         half_widths: float = 5.0) -> TransmissionProfile:
    """Transmission of one channel.

    ``T_lorentz`` is the Lorentzian approximation, ``T_full`` is ``|s12|^2``
    from the matching solution.  Without ``k2`` the grid is ``n`` points over
    ``k_r^2 +- half_widths * width``.
    """
    model.check_regime(eps)
    pole = resonance_pole(model, eps, mode)
    peak = peak_characteristics(model, eps, mode, pole)
    if k2 is None:
        offset = peak.width * np.linspace(-half_widths, half_widths, n)
        k2 = peak.k_r_sq + offset
    else:
        k2 = np.asarray(k2, dtype=float)
        offset = k2 - peak.k_r_sq
    T_l = peak.lorentzian(offset, model.scale(eps) ** 2)
    T_f = np.array([matching_solve(model, 0.0, eps, mode, detuning=peak.shift + o).transmission for o in offset])
    return TransmissionProfile(k2, offset, T_l, T_f, peak, pole, mode)


def peak_grid(peak: PeakCharacteristics, n: int = 201, half_widths: float = 5.0) -> np.ndarray:
    """Uniform ``k^2`` grid of ``n`` points over ``k_r^2 +- half_widths * width``."""
    return peak.k_r_sq + peak.width * np.linspace(-half_widths, half_widths, n)


@dataclass
class SpinCharacteristics:
    """Both spin channels on a common grid."""

    k2: np.ndarray
    T_plus: np.ndarray
    T_minus: np.ndarray
    polarization: np.ndarray
    separation: float
    resolvable: bool
    peak_plus: PeakCharacteristics
    peak_minus: PeakCharacteristics

    def as_rows(self) -> list:
        return [dict(k2=float(k), T_plus=float(p), T_minus=float(m), polarization=float(s))
                for k, p, m, s in zip(self.k2, self.T_plus, self.T_minus, self.polarization)]


def polarization(T_plus, T_minus) -> np.ndarray:
    """``(T+ - T-) / (T+ + T-)``; zero where both vanish."""
    tp, tm = np.asarray(T_plus, dtype=float), np.asarray(T_minus, dtype=float)
    total = tp + tm
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, (tp - tm) / np.where(total > 0, total, 1.0), 0.0)


def spin_characteristics(model_plus: AsymptoticModel, model_minus: AsymptoticModel, eps: float, k2,
                         mode: str = "leading", use: str = "lorentz") -> SpinCharacteristics:
    """Transmission of both channels, the polarization and the peak separation.

    ``use`` selects the Lorentzian (``"lorentz"``) or closed-form (``"full"``)
    transmission for the curves; peak positions always come from the poles.
    """
    if (model_plus.d, model_plus.alpha, model_plus.beta) != (model_minus.d, model_minus.alpha, model_minus.beta):
        raise ValueError("spin channels must share the geometry")
    prof_p = transmission_profile(model_plus, eps, k2, mode)
    prof_m = transmission_profile(model_minus, eps, k2, mode)
    tp = prof_p.T_lorentz if use == "lorentz" else prof_p.T_full
    tm = prof_m.T_lorentz if use == "lorentz" else prof_m.T_full
    sep = prof_p.peak.k_r_sq - prof_m.peak.k_r_sq
    resolvable = abs(sep) > max(prof_p.peak.width, prof_m.peak.width)
    return SpinCharacteristics(np.asarray(k2, dtype=float), tp, tm, polarization(tp, tm), float(sep), bool(resolvable),
                               prof_p.peak, prof_m.peak)


def full_vs_leading(model: AsymptoticModel, eps: float, offsets=(-1.0, -0.5, 0.0, 0.5, 1.0)) -> float:
    """Largest relative difference of ``|s12|`` between full and leading-order modes.

    Each mode is sampled at ``k_r^2 + t * width`` of its own peak, so the
    comparison measures the shape of the resonance rather than the small
    shift of its center.
    """
    vals = {}
    for mode in ("leading", "full"):
        pk = peak_characteristics(model, eps, mode)
        vals[mode] = np.array([abs(matching_solve(model, 0.0, eps, mode, detuning=pk.shift + t * pk.width).s12)
                               for t in offsets])
    return float(np.max(np.abs(vals["full"] - vals["leading"]) / np.abs(vals["leading"])))


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, dtype=float)), np.log(np.abs(np.asarray(y, dtype=float))), 1)[0])
