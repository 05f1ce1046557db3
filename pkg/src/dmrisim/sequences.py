"""Diffusion-encoding time profiles, b-values and gradient direction sets.

Units follow the rest of the package: time in µs, length in µm, gradient
amplitude in T/m, b-values in µs/µm² (numerically equal to s/mm²).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import OutOfRange, ValidationError, ZeroVector

#: Gyromagnetic ratio of the water proton in rad s^-1 T^-1.
GAMMA_SI = 2.67513e8
#: Same constant for gradients in T/m, time in µs and length in µm:
#: rad µs^-1 µm^-1 (T/m)^-1.
GAMMA = GAMMA_SI * 1e-6 * 1e-6

SEQUENCE_CODES = {1: "PGSE", 2: "OGSE_sin", 3: "OGSE_cos", 4: "dPGSE", 5: "piecewise"}


@dataclass(frozen=True)
class Sequence:
    """Base class for effective gradient profiles ``f(t)`` on ``[0, TE]``.

    Subclasses provide the closed-form profile, its running integral
    ``F(t)`` and the sorted list of times where ``f`` is not smooth.
    """

    delta: float
    Delta: float

    kind = "abstract"

    @property
    def echo_time(self) -> float:
        raise NotImplementedError

    @property
    def TE(self) -> float:
        return self.echo_time

    def breakpoints(self) -> np.ndarray:
        """Times in ``[0, TE]`` (ends included) bounding smooth pieces of ``f``."""
        raise NotImplementedError

    def _f(self, t):
        raise NotImplementedError

    def _F(self, t):
        raise NotImplementedError

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        te = self.echo_time
        tol = 1e-12 * max(te, 1.0)
        if np.any(t < -tol) or np.any(t > te + tol):
            raise OutOfRange(f"time outside [0, TE={te}]")
        return np.clip(t, 0.0, te)

    def f(self, t):
        """Profile value; at a breakpoint the right limit is returned."""
        t = self._check(t)
        out = self._f(t)
        return float(out) if np.ndim(out) == 0 else out

    def f_piece(self, t, a, b):
        """Profile on the smooth piece ``[a, b]``, continuously extended to ``b``."""
        t = min(max(float(t), a), b - 1e-12 * (b - a))
        return float(self._f(np.asarray(t)))

    def F(self, t):
        """Running integral ``F(t) = int_0^t f(s) ds``."""
        t = self._check(t)
        out = self._F(t)
        return float(out) if np.ndim(out) == 0 else out

    def integral_F2(self) -> float:
        """``int_0^TE F(t)^2 dt``; closed form where one exists."""
        return self.integral_F2_numeric()

    def integral_F2_numeric(self, rtol: float = 1e-12) -> float:
        bp = self.breakpoints()
        total = 0.0
        for a, b in zip(bp[:-1], bp[1:]):
            if b <= a:
                continue
            val, _ = integrate.quad(lambda s: self._F(np.asarray(s)) ** 2, a, b,
                                    epsabs=0.0, epsrel=rtol, limit=400)
            total += val
        return total

    def bvalue_no_gradient(self) -> float:
        """b-value per unit squared gradient amplitude (g = 1 T/m)."""
        return GAMMA ** 2 * self.integral_F2()

    def diffusion_time_factor(self) -> float:
        """Short-time sequence factor generalizing the finite-pulse ``C_{δ,Δ}``.

        Defined as ``3/(4 ∫F²) ∫_0^TE F(t) ∫_0^t F(s) (t-s)^(-1/2) ds dt``,
        which reduces to ``C_{δ,Δ}`` for PGSE.
        """
        return _sta_time_factor(self)


def _sta_time_factor(seq: Sequence) -> float:
    bp = seq.breakpoints()

    def inner(t):
        # substitute s = t - w^2 to remove the singular kernel
        if t <= 0.0:
            return 0.0
        root = math.sqrt(t)
        cuts = sorted({math.sqrt(t - p) for p in bp if 0.0 < p < t})
        val, _ = integrate.quad(lambda w: 2.0 * seq._F(np.asarray(t - w * w)), 0.0, root,
                                points=cuts or None, epsabs=0.0, epsrel=1e-10, limit=400)
        return val

    total = 0.0
    for a, b in zip(bp[:-1], bp[1:]):
        if b <= a:
            continue
        val, _ = integrate.quad(lambda t: seq._F(np.asarray(t)) * inner(t), a, b,
                                epsabs=0.0, epsrel=1e-10, limit=400)
        total += val
    return 0.75 * total / seq.integral_F2()


def _pulse_F(t, start, width):
    """Integral of the unit pulse on ``[start, start + width)`` up to ``t``."""
    return np.clip(t - start, 0.0, width)


def _in(t, a, b):
    return (t >= a) & (t < b)


@dataclass(frozen=True)
class PGSE(Sequence):
    kind = "PGSE"

    def __post_init__(self):
        if not 0 < self.delta <= self.Delta:
            raise ValidationError("PGSE requires 0 < delta <= Delta")

    @property
    def echo_time(self):
        return self.Delta + self.delta

    def breakpoints(self):
        return np.unique([0.0, self.delta, self.Delta, self.Delta + self.delta])

    def _f(self, t):
        d, D = self.delta, self.Delta
        return np.where(_in(t, 0.0, d), 1.0, 0.0) - np.where(_in(t, D, D + d), 1.0, 0.0)

    def _F(self, t):
        return _pulse_F(t, 0.0, self.delta) - _pulse_F(t, self.Delta, self.delta)

    def integral_F2(self):
        d, D = self.delta, self.Delta
        return d * d * (D - d / 3.0)


@dataclass(frozen=True)
class DoublePGSE(Sequence):
    """Two PGSE pairs, the second shifted by ``tau >= delta + Delta``."""

    tau: float = field(default=-1.0)
    kind = "dPGSE"

    def __post_init__(self):
        if not 0 < self.delta <= self.Delta:
            raise ValidationError("dPGSE requires 0 < delta <= Delta")
        if self.tau < 0:
            object.__setattr__(self, "tau", self.delta + self.Delta)
        if self.tau < self.delta + self.Delta - 1e-12:
            raise ValidationError("dPGSE requires tau >= delta + Delta")

    @property
    def echo_time(self):
        return self.tau + self.Delta + self.delta

    def breakpoints(self):
        d, D, tau = self.delta, self.Delta, self.tau
        return np.unique([0.0, d, D, D + d, tau, tau + d, tau + D, tau + D + d])

    def _f(self, t):
        d, D, tau = self.delta, self.Delta, self.tau
        out = np.zeros_like(t, dtype=float)
        for start, sign in ((0.0, 1.0), (D, -1.0), (tau, 1.0), (tau + D, -1.0)):
            out = out + sign * np.where(_in(t, start, start + d), 1.0, 0.0)
        return out

    def _F(self, t):
        d, D, tau = self.delta, self.Delta, self.tau
        return (_pulse_F(t, 0.0, d) - _pulse_F(t, D, d)
                + _pulse_F(t, tau, d) - _pulse_F(t, tau + D, d))


@dataclass(frozen=True)
class _OGSE(Sequence):
    """Two oscillating lobes of duration ``delta`` starting at 0 and ``Delta``."""

    nperiod: int = 1

    def __post_init__(self):
        if not 0 < self.delta <= self.Delta:
            raise ValidationError("OGSE requires 0 < delta <= Delta")
        if int(self.nperiod) != self.nperiod or self.nperiod < 1:
            raise ValidationError("OGSE requires an integer number of periods >= 1")

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.nperiod / self.delta

    @property
    def echo_time(self):
        return self.Delta + self.delta

    def breakpoints(self):
        return np.unique([0.0, self.delta, self.Delta, self.Delta + self.delta])


@dataclass(frozen=True)
class CosOGSE(_OGSE):
    kind = "OGSE_cos"

    def _f(self, t):
        w, d, D = self.omega, self.delta, self.Delta
        return (np.where(_in(t, 0.0, d), np.cos(w * t), 0.0)
                - np.where(_in(t, D, D + d), np.cos(w * (t - D)), 0.0))

    def _F(self, t):
        w, d, D = self.omega, self.delta, self.Delta
        a = np.clip(t, 0.0, d)
        b = np.clip(t - D, 0.0, d)
        return (np.sin(w * a) - np.sin(w * b)) / w

    def integral_F2(self):
        return self.delta / self.omega ** 2


@dataclass(frozen=True)
class SinOGSE(_OGSE):
    kind = "OGSE_sin"

    def _f(self, t):
        w, d, D = self.omega, self.delta, self.Delta
        return (np.where(_in(t, 0.0, d), np.sin(w * t), 0.0)
                - np.where(_in(t, D, D + d), np.sin(w * (t - D)), 0.0))

    def _F(self, t):
        w, d, D = self.omega, self.delta, self.Delta
        a = np.clip(t, 0.0, d)
        b = np.clip(t - D, 0.0, d)
        return ((1.0 - np.cos(w * a)) - (1.0 - np.cos(w * b))) / w


@dataclass(frozen=True)
class Piecewise(Sequence):
    """Profile interpolated linearly between samples ``(times[k], values[k])``.

    A repeated time stamp encodes a jump. The echo time is the last sample.
    """

    times: tuple = ()
    values: tuple = ()
    kind = "piecewise"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise ValidationError("piecewise profile needs matching 1-D samples (>= 2)")
        if t[0] != 0.0 or np.any(np.diff(t) < 0):
            raise ValidationError("piecewise sample times must start at 0 and be non-decreasing")
        object.__setattr__(self, "times", tuple(t))
        object.__setattr__(self, "values", tuple(v))
        # cumulative trapezoid; exact for the piecewise-linear interpolant
        cum = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (v[1:] + v[:-1]))])
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def from_samples(cls, times, values):
        return cls(delta=0.0, Delta=0.0, times=tuple(times), values=tuple(values))

    @property
    def echo_time(self):
        return self.times[-1]

    def breakpoints(self):
        return np.unique(np.asarray(self.times))

    def _locate(self, t):
        ts = np.asarray(self.times)
        # right-limit convention: the last sample with time <= t
        k = np.searchsorted(ts, t, side="right") - 1
        return np.clip(k, 0, ts.size - 2), ts

    def _f(self, t):
        t = np.asarray(t, dtype=float)
        k, ts = self._locate(t)
        vs = np.asarray(self.values)
        t0, t1 = ts[k], ts[k + 1]
        span = np.where(t1 > t0, t1 - t0, 1.0)
        w = np.where(t1 > t0, (t - t0) / span, 0.0)
        return vs[k] + w * (vs[k + 1] - vs[k])

    def _F(self, t):
        t = np.asarray(t, dtype=float)
        k, ts = self._locate(t)
        vs = np.asarray(self.values)
        f0 = vs[k]
        ft = self._f(t)
        return self._cum[k] + 0.5 * (t - ts[k]) * (f0 + ft)


def make_sequence(code, delta, Delta, nperiod=0, tau=None, samples=None) -> Sequence:
    """Build a sequence from the experiment-file code (1..5)."""
    code = int(code)
    if code == 1:
        return PGSE(delta, Delta)
    if code == 2:
        return SinOGSE(delta, Delta, nperiod=int(nperiod))
    if code == 3:
        return CosOGSE(delta, Delta, nperiod=int(nperiod))
    if code == 4:
        return DoublePGSE(delta, Delta, tau=-1.0 if tau is None else float(tau))
    if code == 5:
        if samples is None:
            raise ValidationError("piecewise sequence (code 5) needs profile samples")
        times, values = samples
        return Piecewise.from_samples(times, values)
    raise ValidationError(f"unknown sequence code {code}")


def profile_f(seq: Sequence, t):
    return seq.f(t)


def profile_F(seq: Sequence, t):
    return seq.F(t)


def bvalue(seq: Sequence, g) -> float:
    """b-value in µs/µm² for gradient amplitude ``g`` in T/m."""
    g = np.asarray(g, dtype=float)
    if np.any(g < 0):
        raise ValueError("gradient amplitude must be non-negative")
    out = seq.bvalue_no_gradient() * g ** 2
    return float(out) if out.ndim == 0 else out


def bvalue_numeric(seq: Sequence, g) -> float:
    """b-value from adaptive quadrature of ``∫F²`` regardless of closed forms."""
    return GAMMA ** 2 * float(g) ** 2 * seq.integral_F2_numeric()


def amplitude_from_b(seq: Sequence, b):
    b = np.asarray(b, dtype=float)
    if np.any(b < 0):
        raise ValueError("b-value must be non-negative")
    out = np.sqrt(b / seq.bvalue_no_gradient())
    return float(out) if out.ndim == 0 else out


def q_value(seq: Sequence, g) -> float:
    """Phase wavenumber rate ``γ g`` in rad µs^-1 µm^-1."""
    return GAMMA * float(g)


def direction_set(ngdir: int, explicit_dir=None) -> np.ndarray:
    """Unit gradient directions, shape ``(ngdir, 3)``.

    ``ngdir == 1`` normalizes ``explicit_dir``; larger counts return a
    spherical Fibonacci point set.
    """
    ngdir = int(ngdir)
    if ngdir < 1:
        raise ValueError("ngdir must be >= 1")
    if ngdir == 1:
        if explicit_dir is None:
            explicit_dir = (1.0, 0.0, 0.0)
        d = np.asarray(explicit_dir, dtype=float).reshape(3)
        norm = np.linalg.norm(d)
        if norm == 0.0:
            raise ZeroVector("gradient direction is the zero vector")
        return (d / norm)[None, :]
    k = np.arange(ngdir)
    z = 1.0 - (2.0 * k + 1.0) / ngdir
    r = np.sqrt(1.0 - z * z)
    phi = k * math.pi * (3.0 - math.sqrt(5.0))
    dirs = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


@dataclass
class GradientSpec:
    """Gradient directions and amplitudes of one experiment grid.

    ``amplitude_mode`` is ``"bvalues"`` (explicit list), ``"b_range"`` or
    ``"g_range"`` (``values = (min, max)`` spread over ``count`` points).
    """

    directions: np.ndarray
    amplitude_mode: str = "bvalues"
    values: tuple = (0.0,)
    count: int = 1
    const_q: bool = False

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.directions, dtype=float))
        norms = np.linalg.norm(d, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValidationError("gradient directions must be unit vectors")
        self.directions = d
        if self.amplitude_mode not in ("bvalues", "b_range", "g_range"):
            raise ValidationError(f"unknown amplitude mode {self.amplitude_mode!r}")
        if np.any(np.asarray(self.values, dtype=float) < 0):
            raise ValidationError("b-values and amplitudes must be non-negative")

    def amplitudes(self, sequences) -> list[np.ndarray]:
        """Gradient amplitudes (T/m) for each sequence of the experiment list."""
        out = []
        for i, seq in enumerate(sequences):
            if self.const_q and i > 0:
                out.append(out[0].copy())
                continue
            if self.amplitude_mode == "bvalues":
                out.append(np.asarray(amplitude_from_b(seq, np.asarray(self.values, float))))
            elif self.amplitude_mode == "b_range":
                bs = np.linspace(self.values[0], self.values[1], self.count)
                out.append(np.asarray(amplitude_from_b(seq, bs)))
            else:
                out.append(np.linspace(self.values[0], self.values[1], self.count))
        return [np.atleast_1d(a).astype(float) for a in out]
