"""
Superheterodyne detection chain.

The LO (field E_LO) and the signal (E_SIG, offset by delta_f) add to a
microwave field whose envelope beats at delta_f. With delta_f far below the
EIT bandwidth the atoms follow adiabatically, so the probe signal is the
steady-state response to the instantaneous envelope
|E_LO + E_SIG exp(i theta)|, theta = 2 pi delta_f t + delta_phi.
Its first harmonic is the IF tone seen by the spectrum analyzer.
"""

import dataclasses
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import signal as sps
from scipy.linalg import expm
from scipy.optimize import brentq
from scipy.special import gammaincinv

from . import atomphys as ap
from .calib import TWO_PI, rabi_from_field
from .errors import (ApproximationInvalid, DurationTooShort, LinearRegionNotFound,
                     NoInteriorMax, SignalOutOfRange)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseModel:
    """Detector noise referred to optical power.

    Attributes
    ----------
    nep : float
        White noise-equivalent power, W/sqrt(Hz) (one-sided).
    flicker_corner : float
        1/f corner frequency (Hz); 0 disables the 1/f part.
    rin : float
        Relative intensity noise of the detected probe, 1/sqrt(Hz).
    """

    nep: float = 0.0
    flicker_corner: float = 0.0
    rin: float = 0.0

    def __post_init__(self):
        if min(self.nep, self.flicker_corner, self.rin) < 0:
            raise ValueError("noise parameters must be >= 0")


@dataclass(frozen=True)
class HeterodyneScenario:
    """Receiver plus microwave fields, noise and detector scaling.

    ``detected_power`` is the probe power on the photodiode that
    corresponds to a normalised signal of 1; together with
    ``responsivity`` it converts the a.u. signal into volts.
    """

    receiver: object
    e_lo: float
    e_sig: float = 0.0
    delta_f: float = 150e3
    delta_phi: float = 0.0
    noise: NoiseModel = NoiseModel()
    responsivity: float = 1.0
    detected_power: float = 1e-6
    load: float = 50.0
    phase_samples: int = 32
    max_beat_fraction: float = 0.1

    def __post_init__(self):
        if not self.e_lo > 0:
            raise ValueError("E_LO must be > 0")
        if self.e_sig < 0:
            raise ValueError("E_SIG must be >= 0")
        if self.delta_f == 0:
            raise ValueError("delta_f must be non-zero")
        if not (self.responsivity > 0 and self.detected_power > 0 and self.load > 0):
            raise ValueError("responsivity, detected power and load must be > 0")
        if self.phase_samples < 8 or self.phase_samples % 2:
            raise ValueError("phase_samples must be even and >= 8")
        lo = rabi_from_field(self.e_lo, self.receiver.system.mu_mw)
        object.__setattr__(self, "receiver", self.receiver.at_lo(lo))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @property
    def gain(self):
        """Volts per unit of normalised signal."""
        return self.responsivity * self.detected_power


@dataclass(frozen=True)
class SmallSignal:
    amplitude: float
    phase: float
    modulation: float
    dc: float
    small_signal: bool = True


@dataclass
class IFTrace:
    sample_rate: float
    samples: np.ndarray = field(repr=False)
    delta_f: float = 0.0

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


@dataclass
class PowerSpectrum:
    frequency: np.ndarray = field(repr=False)
    power_dbm: np.ndarray = field(repr=False)
    rbw: float
    window: str
    load: float = 50.0
    segments: int = 1
    dof: float = 2.0


@dataclass(frozen=True)
class Metric:
    value: float
    unit: str
    provenance: str


@dataclass
class SweepResult:
    """One-dimensional sweep over E_LO or E_SIG (grid in V/m)."""

    variable: str
    grid: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    response_unit: str
    repeats: int
    snr: np.ndarray = None
    noise_dbm: np.ndarray = None
    metrics: dict = field(default_factory=dict)
    fit: dict = None


# --- small-signal response -------------------------------------------------

def eit_linewidth_hz(scn):
    rx = scn.receiver
    drv = rx.drives.replace(probe_rabi=rx.probe_rabi)
    return ap.eit_linewidth(rx.system, drv) / TWO_PI


def _check_beat(scn):
    width = eit_linewidth_hz(scn)
    if abs(scn.delta_f) > scn.max_beat_fraction * width:
        raise ApproximationInvalid(
            f"delta_f = {scn.delta_f:.4g} Hz exceeds {scn.max_beat_fraction:g} of the EIT width {width:.4g} Hz")


def envelope_rabi(scn, theta):
    """Microwave Rabi frequency of the beat envelope at phase ``theta``."""
    env = np.abs(scn.e_lo + scn.e_sig * np.exp(1j * np.asarray(theta)))
    return rabi_from_field(env, scn.receiver.system.mu_mw)


def small_signal_amplitude(scn):
    """First-harmonic IF amplitude (V) and phase of the quasi-static response.

    The envelope depends on theta only through cos(theta), so half of the
    phase samples are mirrored rather than recomputed.
    """
    _check_beat(scn)
    ok = scn.e_sig < scn.e_lo / 10
    if not ok:
        warnings.warn("E_SIG >= E_LO/10: outside the small-signal regime", RuntimeWarning)
    n = scn.phase_samples
    half = np.arange(n // 2 + 1)
    s_half = scn.receiver.signal(envelope_rabi(scn, TWO_PI * half / n))
    s = np.concatenate([s_half, s_half[-2:0:-1]])
    theta = TWO_PI * np.arange(n) / n
    c = 2.0 / n * np.sum(s * np.exp(-1j * theta))
    if scn.e_sig == 0:
        c = 0j
    phase = (np.angle(c) + scn.delta_phi) % TWO_PI
    return SmallSignal(scn.gain * abs(c), float(phase), float(abs(c)), float(np.mean(s)), ok)


def time_dependent_amplitude(scn, periods=3, steps=64):
    """Validation oracle: integrate the master equation through the beat.

    The envelope Rabi frequency is held constant over each of ``steps``
    intervals per period (midpoint value) and every velocity class is
    propagated with the exact matrix exponential. The first harmonic is
    projected from the final period.
    """
    if steps % 2:
        raise ValueError("steps must be even")
    rx = scn.receiver
    v, w = rx.nodes
    dt = 1.0 / (abs(scn.delta_f) * steps)
    drv = rx.drives.replace(probe_rabi=rx.probe_rabi, coupling_detuning=rx.lock_detuning)
    b = ap.liouvillian_parts(rx.system, drv)[1]
    props = {}

    def propagator(j):
        k = min(j, steps - 1 - j)
        if k not in props:
            om = float(envelope_rabi(scn, TWO_PI * (k + 0.5) / steps))
            a = ap.liouvillian_parts(rx.system, drv.replace(mw_rabi=om))[0]
            props[k] = expm((a[None] + v[:, None, None] * b[None]) * dt)
        return props[k]

    a0 = ap.liouvillian_parts(rx.system, drv.replace(mw_rabi=float(envelope_rabi(scn, 0.0))))[0]
    x = ap._solve_states(a0[None], b, v)[0]
    samples = []
    for p in range(periods):
        for j in range(steps):
            if p == periods - 1:
                samples.append(ap.real_to_coherence(x) @ w)
            x = np.einsum("vij,vj->vi", propagator(j), x)
    s = rx.transmission_from_coherence(np.array(samples)) / rx.reference
    theta = TWO_PI * np.arange(steps) / steps
    c = 2.0 / steps * np.sum(s * np.exp(-1j * theta))
    phase = (np.angle(c) + scn.delta_phi) % TWO_PI
    return SmallSignal(scn.gain * abs(c), float(phase), float(abs(c)), float(np.mean(s)),
                       scn.e_sig < scn.e_lo / 10)


# --- noise and traces ------------------------------------------------------

def noise_psd(scn, f, dc=None):
    """One-sided detector-voltage PSD (V^2/Hz) at frequency ``f``."""
    nz = scn.noise
    dc = 1.0 if dc is None else dc
    white = (scn.responsivity * nz.nep) ** 2 + (scn.gain * dc * nz.rin) ** 2
    if nz.flicker_corner > 0:
        return white * (1 + nz.flicker_corner / np.abs(f))
    return white * np.ones_like(np.asarray(f, dtype=float))


def synthesize_trace(scn, sample_rate=2e6, duration=2.0, seed=None, tone=None):
    """Detector voltage: IF tone plus seeded noise (AC coupled, no DC term).

    ``tone`` may carry a precomputed :class:`SmallSignal` to avoid
    re-solving the atomic response.
    """
    df = abs(scn.delta_f)
    if not sample_rate > 4 * df:
        raise ValueError("sample rate must exceed 4 delta_f")
    if duration * df < 100:
        raise ValueError("duration must cover at least 100 beat periods")
    tone = small_signal_amplitude(scn) if tone is None else tone
    n = int(round(sample_rate * duration))
    t = np.arange(n) / sample_rate
    x = tone.amplitude * np.cos(TWO_PI * scn.delta_f * t + tone.phase)
    white = noise_psd(scn, df, tone.dc) if scn.noise.flicker_corner == 0 else (
        (scn.responsivity * scn.noise.nep) ** 2 + (scn.gain * tone.dc * scn.noise.rin) ** 2)
    if np.any(white > 0):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal(n) * math.sqrt(float(white) * sample_rate / 2)
        if scn.noise.flicker_corner > 0:
            f = np.fft.rfftfreq(n, 1 / sample_rate)
            shape = np.zeros_like(f)
            shape[1:] = np.sqrt(1 + scn.noise.flicker_corner / f[1:])
            z = np.fft.irfft(np.fft.rfft(z) * shape, n)
        x = x + z
    return IFTrace(sample_rate, x, scn.delta_f)


# --- spectrum analyzer -----------------------------------------------------

@lru_cache(maxsize=16)
def gaussian_window(n, enbw_bins):
    """Gaussian window whose equivalent noise bandwidth is ``enbw_bins`` bins."""

    def enbw(std):
        w = sps.windows.gaussian(n, std, sym=False)
        return n * np.sum(w**2) / np.sum(w) ** 2 - enbw_bins

    std = brentq(enbw, n / 200, n, xtol=1e-10 * n)
    return sps.windows.gaussian(n, std, sym=False)


def _welch_dof(win, step, k):
    """Equivalent chi-square degrees of freedom of a Welch average."""
    norm = np.sum(win**2) ** 2
    acc = 0.0
    for j in range(1, k):
        lag = j * step
        if lag >= win.size:
            break
        rho = np.sum(win[:-lag] * win[lag:]) ** 2 / norm
        acc += (1 - j / k) * rho
    return 2 * k / (1 + 2 * acc)


def spectrum_analyzer(trace, rbw, load=50.0, segments_overlap=0.5):
    """Welch-averaged power spectrum in dBm with Gaussian RBW filter.

    Segments are 2/rbw long, so bins are spaced rbw/2 and the window ENBW
    is exactly two bins (= rbw). A sinusoid reads its true power; white
    noise reads PSD * rbw.
    """
    if not rbw > 0:
        raise ValueError("rbw must be > 0")
    fs = trace.sample_rate
    nper = int(round(2 * fs / rbw))
    if trace.samples.size < nper:
        raise DurationTooShort(f"trace of {trace.duration:.4g} s is shorter than 2/rbw = {2 / rbw:.4g} s")
    win = gaussian_window(nper, rbw * nper / fs)
    step = nper - int(round(segments_overlap * nper))
    f, pxx = sps.welch(trace.samples, fs, window=win, nperseg=nper, noverlap=nper - step,
                       detrend=False, scaling="spectrum")
    k = 1 + (trace.samples.size - nper) // step
    with np.errstate(divide="ignore"):
        dbm = 10 * np.log10(np.maximum(pxx / load, 1e-300) / 1e-3)
    return PowerSpectrum(f, dbm, rbw, f"gaussian(enbw={rbw:g} Hz, nperseg={nper})", load, k,
                         _welch_dof(win, step, k))


def _peak_dbm(spec, f_signal):
    sel = np.flatnonzero(np.abs(spec.frequency - f_signal) <= spec.rbw)
    if sel.size == 0:
        raise SignalOutOfRange(f"no bins within one RBW of {f_signal} Hz")
    i = sel[np.argmax(spec.power_dbm[sel])]
    p = spec.power_dbm
    if 0 < i < p.size - 1:
        # parabola through the log-power peak; exact for a Gaussian window
        a, b, c = p[i - 1], p[i], p[i + 1]
        den = a - 2 * b + c
        if den < 0:
            d = 0.5 * (a - c) / den
            if abs(d) <= 1:
                return b - 0.25 * (a - c) * d, spec.frequency[i] + d * (spec.frequency[1] - spec.frequency[0])
    return p[i], spec.frequency[i]


def _noise_dbm(spec, f_signal):
    off = np.abs(spec.frequency - f_signal)
    sel = (off >= 10 * spec.rbw) & (off <= 100 * spec.rbw)
    if np.count_nonzero(sel) < 10:
        raise SignalOutOfRange("noise annulus (10-100 RBW) falls outside the spectrum")
    med = np.median(10 ** (spec.power_dbm[sel] / 10))
    # chi-square median bias for the Welch-averaged estimate
    half = spec.dof / 2
    bias = gammaincinv(half, 0.5) / half
    return 10 * np.log10(med / bias)


@dataclass(frozen=True)
class ToneMeasurement:
    snr_db: float
    signal_dbm: float
    noise_dbm: float
    frequency: float


def measure_tone(spec, f_signal):
    if not spec.frequency[0] <= f_signal <= spec.frequency[-1]:
        raise SignalOutOfRange(f"{f_signal} Hz outside [{spec.frequency[0]}, {spec.frequency[-1]}] Hz")
    sig, f = _peak_dbm(spec, f_signal)
    noise = _noise_dbm(spec, f_signal)
    return ToneMeasurement(float(sig - noise), float(sig), float(noise), float(f))


def measure_snr(spec, f_signal):
    """Peak within +-RBW of ``f_signal`` over the median sideband noise, dB."""
    return measure_tone(spec, f_signal).snr_db


def tone_dbm(amplitude, load=50.0):
    with np.errstate(divide="ignore"):
        return 10 * np.log10(np.maximum(np.asarray(amplitude) ** 2 / 2 / load, 1e-300) / 1e-3)


def floor_dbm(scn, rbw, dc=1.0):
    """Analytic noise reading (dBm) at delta_f for a given RBW."""
    with np.errstate(divide="ignore"):
        return float(10 * np.log10(max(noise_psd(scn, abs(scn.delta_f), dc) * rbw / scn.load, 1e-300) / 1e-3))


# --- calibration of the noise scale ----------------------------------------

def anchor_noise(scn, field, floor=-107.0, rbw=1.0):
    """Set the white noise and tone scale from a (floor dBm, field) pair.

    The noise is chosen so the analyzer floor reads ``floor`` at ``rbw`` and
    the detected power so that a signal of ``field`` reads the same level
    (SNR = 1). Returns the updated scenario.
    """
    p_floor = 1e-3 * 10 ** (floor / 10)
    sv = p_floor * scn.load / rbw
    nep = math.sqrt(sv) / scn.responsivity
    if scn.noise.flicker_corner > 0:
        nep /= math.sqrt(1 + scn.noise.flicker_corner / abs(scn.delta_f))
    mod = small_signal_amplitude(scn.replace(e_sig=field)).modulation
    p_det = math.sqrt(2 * scn.load * p_floor) / (scn.responsivity * mod)
    return scn.replace(noise=dataclasses.replace(scn.noise, nep=nep, rin=0.0), detected_power=p_det)


# --- sweeps ----------------------------------------------------------------

def _pmap(fn, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def point_seed(master, index, repeat):
    return np.random.SeedSequence([int(master), int(index), int(repeat)])


def _measured_points(scn_at, grid, repeats, seed, rbw, sample_rate, duration, workers):
    """Run the full synthesis + analyzer chain ``repeats`` times per grid point."""

    def one(i):
        scn = scn_at(grid[i])
        tone = small_signal_amplitude(scn)
        sig, snr, noise = [], [], []
        for r in range(repeats):
            tr = synthesize_trace(scn, sample_rate, duration, point_seed(seed, i, r), tone)
            m = measure_tone(spectrum_analyzer(tr, rbw, scn.load), abs(scn.delta_f))
            sig.append(m.signal_dbm)
            snr.append(m.snr_db)
            noise.append(m.noise_dbm)
        return np.array(sig), np.array(snr), np.array(noise), tone

    return _pmap(one, range(len(grid)), workers)


def _parabolic_vertex(x, y):
    a, b, _ = np.polyfit(x, y, 2)
    return -b / (2 * a) if a < 0 else x[1]


def sweep_lo(scn, grid, repeats=1, measured=None, seed=0, rbw=1.0, sample_rate=2e6,
             duration=2.0, workers=1):
    """IF amplitude versus E_LO, normalised to its maximum, with the optimum.

    ``measured`` selects the analyzer pipeline (default: only if noise is
    configured); otherwise the small-signal amplitude is used directly.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size < 5 or np.any(np.diff(grid) <= 0):
        raise ValueError("E_LO grid must be increasing with >= 5 points")
    if not scn.e_sig > 0:
        raise ValueError("the E_LO sweep needs a non-zero E_SIG")
    if measured is None:
        measured = scn.noise.nep > 0 or scn.noise.rin > 0
    scn_at = lambda e: scn.replace(e_lo=float(e))
    if measured:
        pts = _measured_points(scn_at, grid, repeats, seed, rbw, sample_rate, duration, workers)
        amp = np.array([np.sqrt(10 ** (p[0] / 10) * 1e-3 * scn.load * 2) for p in pts])
        mean, std = amp.mean(axis=1), amp.std(axis=1)
    else:
        mean = np.array(_pmap(lambda e: small_signal_amplitude(scn_at(e)).amplitude, grid, workers))
        std = np.zeros_like(mean)
        repeats = 1
    peak = mean.max()
    i = int(np.argmax(mean))
    res = SweepResult("E_LO", grid, mean / peak, std / peak, "P/P_max", repeats)
    if i == 0 or i == grid.size - 1:
        exc = NoInteriorMax(f"maximum at grid boundary E_LO = {grid[i]:.4g} V/m")
        exc.result = res
        raise exc
    e_opt = float(_parabolic_vertex(grid[i - 1:i + 2], mean[i - 1:i + 2]))
    res.metrics["optimum_e_lo"] = Metric(e_opt, "V/m", "derived")
    res.metrics["optimum_grid_e_lo"] = Metric(float(grid[i]), "V/m", "derived")
    res.metrics["peak_amplitude"] = Metric(float(peak), "V", "derived")
    return res


def _linear_run(x, y, ok, tol=1.0, min_len=4):
    """Longest run of consecutive usable points within ``tol`` dB of a unit slope."""
    best = None
    n = x.size
    for i in range(n):
        for j in range(n, i + min_len - 1, -1):
            if not np.all(ok[i:j]):
                continue
            d = y[i:j] - x[i:j]
            b = 0.5 * (d.max() + d.min())
            if np.max(np.abs(d - b)) <= tol:
                if best is None or j - i > best[1] - best[0]:
                    best = (i, j)
                break
    return best


def analyze_sig_sweep(grid, sig_dbm, snr_db, noise_dbm, rbw, cal=None, tol=1.0):
    """Linear fit, SNR = 1 intercept, sensitivity and dynamic range."""
    x = 20 * np.log10(grid)
    usable = snr_db >= 10
    run = _linear_run(x, sig_dbm, usable, tol)
    if run is None:
        raise LinearRegionNotFound("fewer than 4 consecutive points follow a unit log-log slope")
    i, j = run
    slope, icpt = np.polyfit(x[i:j], sig_dbm[i:j], 1)
    slope = float(np.clip(slope, 0.9, 1.1))
    icpt = float(np.mean(sig_dbm[i:j] - slope * x[i:j]))
    floor = float(np.mean(noise_dbm))
    e_min = 10 ** ((floor - icpt) / slope / 20)
    top = j - 1
    while top + 1 < grid.size and abs(sig_dbm[top + 1] - (slope * x[top + 1] + icpt)) <= tol:
        top += 1
    e_max = float(grid[top])
    metrics = {
        "slope": Metric(slope, "dB/dB", "fitted"),
        "intercept": Metric(icpt, "dBm at 1 V/m", "fitted"),
        "noise_floor": Metric(floor, "dBm", "derived"),
        "min_detectable_field": Metric(float(e_min), "V/m", "derived"),
        "sensitivity": Metric(float(e_min / math.sqrt(rbw)), "V/m/Hz^0.5", "derived"),
        "linear_max_field": Metric(e_max, "V/m", "derived"),
        "dynamic_range": Metric(float(20 * np.log10(e_max / e_min)), "dB", "derived"),
    }
    if cal is not None:
        from .calib import dbm_from_field
        metrics["dynamic_range_low"] = Metric(float(dbm_from_field(e_min, cal)), "dBm", "derived")
        metrics["dynamic_range_high"] = Metric(float(dbm_from_field(e_max, cal)), "dBm", "derived")
    fit = {"slope": slope, "intercept": icpt, "first": int(i), "last": int(j - 1)}
    return metrics, fit


def sweep_sig(scn, grid, repeats=1, seed=0, rbw=1.0, sample_rate=2e6, duration=2.0,
              measured=True, cal=None, workers=1):
    """Signal power and SNR versus E_SIG, with sensitivity and dynamic range.

    ``measured=False`` replaces the synthesized traces by the analytic tone
    power and noise floor, which is deterministic and fast.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size < 5 or np.any(np.diff(grid) <= 0) or grid[0] <= 0:
        raise ValueError("E_SIG grid must be positive and increasing")
    if grid[-1] / grid[0] < 1e3 * (1 - 1e-9):
        raise ValueError("E_SIG grid must span at least three decades")
    scn_at = lambda e: scn.replace(e_sig=float(e))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if measured:
            pts = _measured_points(scn_at, grid, repeats, seed, rbw, sample_rate, duration, workers)
            sig = np.array([p[0] for p in pts])
            snr = np.array([p[1] for p in pts])
            noise = np.array([p[2] for p in pts])
        else:
            tones = _pmap(lambda e: small_signal_amplitude(scn_at(e)), grid, workers)
            sig = np.array([[tone_dbm(t.amplitude, scn.load)] for t in tones])
            noise = np.array([[floor_dbm(scn, rbw, t.dc)] for t in tones])
            snr = sig - noise
            repeats = 1
    mean = sig.mean(axis=1)
    res = SweepResult("E_SIG", grid, mean, sig.std(axis=1), "dBm", repeats,
                      snr.mean(axis=1), noise.mean(axis=1))
    try:
        res.metrics, res.fit = analyze_sig_sweep(grid, mean, res.snr, res.noise_dbm, rbw, cal)
    except LinearRegionNotFound as exc:
        exc.result = res
        raise
    return res
