"""Burst acquisition: trailing-edge trimming, PSK synchronization and FSK
timing/slicing. Everything here works on one extracted burst at a time."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, signal

from ..dsp import design_rrc, power_envelope
from ..errors import NoPeak, TooShort
from .config import BurstConfig
from .mapping import fsk_map

NOISE_VAR_FLOOR = 1e-9


@dataclass(frozen=True)
class SyncEstimate:
    cfo: float  # cycles/sample
    timing: float  # fractional sample offset of the symbol clock
    eq_tap: complex
    corr_peak: float
    preamble_index: int  # first sample of the burst waveform
    noise_var: float = 0.0

    def __post_init__(self):
        if not abs(self.cfo) < 0.125:
            raise ValueError("cfo outside the x4 estimator range")
        if self.corr_peak < 0:
            raise ValueError("corr_peak must be >= 0")

    def as_meta(self) -> dict:
        return {
            "cfo": self.cfo,
            "timing": self.timing,
            "eq_tap": self.eq_tap,
            "corr_peak": self.corr_peak,
            "preamble_index": self.preamble_index,
            "noise_var": self.noise_var,
        }


# -- CFO ---------------------------------------------------------------------

def _tone_power(z: np.ndarray, n: np.ndarray, f: float) -> float:
    return abs(np.dot(z, np.exp(-2j * np.pi * f * n)))


def tone_frequency(z, zero_pad: int = 4, refine: bool = True) -> float:
    """Frequency (cycles/sample) of the strongest tone in ``z``.

    Peak of a ``zero_pad``-times padded FFT, then a parabola through the
    three bins around it; with ``refine`` the exact periodogram is also
    maximized within one bin of that point.
    """
    z = np.asarray(z, dtype=np.complex128)
    if len(z) < 2:
        return 0.0
    nfft = zero_pad * len(z)
    mag = np.abs(np.fft.fft(z, nfft))
    k = int(np.argmax(mag))
    a, b, c = mag[k - 1], mag[k], mag[(k + 1) % nfft]
    denom = a - 2 * b + c
    frac = 0.5 * (a - c) / denom if denom != 0 else 0.0
    f = (k + float(np.clip(frac, -0.5, 0.5))) / nfft
    f = (f + 0.5) % 1.0 - 0.5
    if refine:
        n = np.arange(len(z))
        res = optimize.minimize_scalar(
            lambda x: -_tone_power(z, n, x),
            bounds=(f - 1 / nfft, f + 1 / nfft),
            method="bounded",
            options={"xatol": 1e-10},
        )
        if -res.fun >= _tone_power(z, n, f):
            f = float(res.x)
    return float((f + 0.5) % 1.0 - 0.5)


def estimate_cfo(samples, refine: bool = True) -> float:
    """x4 periodogram CFO estimate for QPSK; unambiguous for |cfo| < 0.125."""
    return tone_frequency(np.asarray(samples, dtype=np.complex128) ** 4, 4, refine) / 4


def _rotate(x: np.ndarray, f: float, n0: float = 0.0) -> np.ndarray:
    return x * np.exp(-2j * np.pi * f * (np.arange(len(x)) + n0))


# -- PSK synchronization -----------------------------------------------------

def matched_same(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Filter with the group delay removed; output aligned with the input."""
    d = (len(taps) - 1) // 2
    return np.convolve(x, taps)[d : d + len(x)]


def _preamble_correlation(y: np.ndarray, pre: np.ndarray, sps: int):
    ref = np.zeros((len(pre) - 1) * sps + 1, dtype=np.complex128)
    ref[::sps] = pre
    c = signal.correlate(y, ref, mode="valid")
    mask = (ref != 0).astype(np.float64)
    energy = signal.correlate(np.abs(y) ** 2, mask, mode="valid")
    return c, energy


def _equalize(r_pre, pre, taps: int):
    """Least-squares equalizer over the preamble. Returns (apply, eq_tap)."""
    if taps == 1:
        eq = complex(np.vdot(pre, r_pre) / np.vdot(pre, pre).real)
        if eq == 0:
            raise NoPeak("zero equalizer gain")
        return (lambda r: r / eq), eq
    c = (taps - 1) // 2
    n = len(pre)
    rows = []
    for k in range(n):
        idx = k + c - np.arange(taps)
        row = np.where((idx >= 0) & (idx < n), r_pre[np.clip(idx, 0, n - 1)], 0)
        rows.append(row)
    a = np.array(rows)
    w, *_ = np.linalg.lstsq(a, pre, rcond=None)
    if w[c] == 0:
        raise NoPeak("zero equalizer gain")

    def apply(r):
        return np.convolve(r, w)[c : c + len(r)]

    return apply, complex(1 / w[c])


def _preamble_residual(xr, pre, config: BurstConfig, t: float) -> float:
    """Least-squares misfit of the preamble when sampling at instant ``t``."""
    sps, k = config.sps, config.rrc_span * config.sps + 1
    m = int(np.floor(t))
    frac = t - m
    lo = max(m - k, 0)
    hi = min(m + (len(pre) - 1) * sps + k + 1, len(xr))
    h = design_rrc(sps, config.rrc_beta, config.rrc_span, offset=-frac).coefficients
    r = matched_same(xr[lo:hi], h)[m - lo :: sps][: len(pre)]
    if len(r) < len(pre):
        return np.inf
    c = np.vdot(pre, r)
    return float(np.vdot(r, r).real - abs(c) ** 2 / np.vdot(pre, pre).real)


def _refine_timing(xr, pre, config: BurstConfig, m0: int, delta: float) -> tuple[int, float]:
    """Polish the interpolated correlation peak by minimizing the preamble
    fit residual, which unlike the peak location is not biased by the
    preamble's autocorrelation sidelobes."""
    t0 = m0 + delta
    lo = max(t0 - 1.0, 0.0)
    res = optimize.minimize_scalar(
        lambda t: _preamble_residual(xr, pre, config, t),
        bounds=(lo, t0 + 1.0), method="bounded", options={"xatol": 1e-6},
    )
    t = float(res.x) if res.fun <= _preamble_residual(xr, pre, config, t0) else t0
    m = int(round(t))
    return m, t - m


def synchronize(samples, config: BurstConfig, search_len: int | None = None,
                refine: bool = True) -> tuple[np.ndarray, SyncEstimate]:
    """Recover 1-sample-per-symbol, equalized symbols from a raw burst.

    Returns the symbols from the first preamble symbol to the end of the
    input, and the estimate. Raises :class:`NoPeak` when the normalized
    preamble correlation stays under ``config.sync_corr_floor``.
    """
    sps = config.sps
    # undo the transmit pulse gain so eq_tap reports the channel gain alone
    x = np.asarray(samples, dtype=np.complex128).reshape(-1) / np.sqrt(sps)
    pre = config.preamble_symbols
    span = (len(pre) - 1) * sps + 1
    if len(x) < span:
        raise TooShort(f"burst of {len(x)} samples is shorter than the preamble")
    h = config.rrc().coefficients
    d = config.filter_delay

    # coarse CFO over the whole (matched-filtered) burst
    cfo_c = estimate_cfo(matched_same(x, h), refine)
    xr = _rotate(x, cfo_c)
    y = matched_same(xr, h)

    # timing
    c, energy = _preamble_correlation(y, pre, sps)
    if search_len is not None:
        c, energy = c[: max(1, search_len)], energy[: max(1, search_len)]
    mag = np.abs(c)
    m0 = int(np.argmax(mag))
    norm = np.sqrt(np.vdot(pre, pre).real * energy[m0])
    corr_peak = float(mag[m0] / norm) if norm > 0 else 0.0
    if not corr_peak >= config.sync_corr_floor:
        raise NoPeak(f"preamble correlation {corr_peak:.3f} below {config.sync_corr_floor}")
    delta = 0.0
    if 0 < m0 < len(mag) - 1:
        a, b, cc = mag[m0 - 1], mag[m0], mag[m0 + 1]
        den = a - 2 * b + cc
        if den < 0:
            delta = float(np.clip(0.5 * (a - cc) / den, -0.5, 0.5))
    if refine:
        m0, delta = _refine_timing(xr, pre, config, m0, delta)
    if delta != 0.0:
        y = matched_same(xr, design_rrc(sps, config.rrc_beta, config.rrc_span, offset=-delta).coefficients)

    # decimate from the first preamble symbol on
    r = y[m0::sps]
    npre = len(pre)
    if len(r) < npre:
        raise TooShort("burst ends inside the preamble")

    # fine CFO on the symbols, referenced to the burst's sample clock
    cfo_f = estimate_cfo(r, refine) / sps
    r = _rotate(r, cfo_f * sps, (m0 + delta) / sps)
    cfo = cfo_c + cfo_f

    apply, eq = _equalize(r[:npre], pre, config.eq_taps)
    z = apply(r)
    noise_var = max(float(np.mean(np.abs(z[:npre] - pre) ** 2)), NOISE_VAR_FLOOR)
    if not abs(cfo) < 0.125:
        raise NoPeak(f"cfo estimate {cfo:.4f} outside the x4 range")
    est = SyncEstimate(
        cfo=float(cfo),
        timing=delta,
        eq_tap=eq,
        corr_peak=corr_peak,
        preamble_index=m0 - d,
        noise_var=noise_var,
    )
    return z, est


# -- length detection ----------------------------------------------------------

def length_detect(samples, config: BurstConfig, window: int | None = None,
                  alpha: float | None = None, noise_floor: float | None = None):
    """Trim noise off the end of a burst using its power envelope.

    The reference level is the median envelope over one preamble span,
    starting where the envelope first reaches half its maximum. The burst
    is cut after the last sample whose envelope is at least ``alpha`` times
    that level, but never shorter than the preamble span. If ``noise_floor``
    is given and the reference is within ``1/alpha`` of it, the extraction is
    treated as noise and trimmed to the minimum.

    Returns ``(trimmed, meta)`` with ``trimmed_len`` and ``short_burst``.
    """
    x = np.asarray(samples).reshape(-1)
    window = config.length_window if window is None else window
    alpha = config.length_alpha if alpha is None else alpha
    pre_span = len(config.preamble_symbols) * config.sps + 2 * config.filter_delay
    meta = {"trimmed_len": len(x), "short_burst": False}
    if len(x) < window or not np.any(x):
        return x.copy(), meta
    env = power_envelope(x, window)
    anchor = int(np.argmax(env >= 0.5 * env.max()))
    ref = float(np.median(env[anchor : anchor + pre_span]))
    floor_len = min(len(x), anchor + pre_span)
    if noise_floor is not None and ref < noise_floor / alpha:
        meta.update(trimmed_len=floor_len, short_burst=True)
        return x[:floor_len].copy(), meta
    above = np.flatnonzero(env >= alpha * ref)
    n = max(int(above[-1]) + 1, floor_len)
    meta["trimmed_len"] = n
    return x[:n].copy(), meta


# -- bit alignment ---------------------------------------------------------

def frame_align(soft_bits, config: BurstConfig) -> np.ndarray:
    """Drop the preamble and keep a whole number of coded blocks."""
    soft = np.asarray(soft_bits).reshape(-1)
    p, n = config.preamble_len, config.fec_n
    if len(soft) < p + n:
        raise TooShort(f"{len(soft)} soft bits < preamble {p} + block {n}")
    body = soft[p:]
    return body[: len(body) // n * n].copy()


# -- FSK -------------------------------------------------------------------

def fsk_timing_and_slice(demod, config: BurstConfig, floor: float | None = None,
                         search_len: int | None = None):
    """Find the preamble in a demodulated FSK burst and slice every symbol
    from there on.

    Returns ``(bits, meta)``; meta holds ``start``, ``score`` (normalized
    correlation in [-1, 1]) and ``llr`` (soft values, positive for bit 0).
    ``search_len`` limits the candidate start indices.
    """
    x = np.asarray(demod, dtype=np.float64).reshape(-1)
    floor = config.fsk_corr_floor if floor is None else floor
    ref = fsk_map(config.preamble_bits, config.sps)
    if len(x) < len(ref):
        raise TooShort("burst shorter than the preamble")
    x = x - x.mean()
    c = signal.correlate(x, ref, mode="valid")
    energy = signal.correlate(x * x, np.ones(len(ref)), mode="valid")
    score = c / np.sqrt(np.maximum(energy, 1e-300) * len(ref))
    if search_len is not None:
        score = score[: max(1, search_len)]
    start = int(np.argmax(score))
    best = float(score[start])
    if not best >= floor:
        raise NoPeak(f"FSK preamble score {best:.3f} below {floor}")
    centres = np.arange(start + config.sps // 2, len(x), config.sps)
    soft = x[centres]
    bits = (soft > 0).astype(np.uint8)
    return bits, {"start": start, "score": best, "llr": -soft}
