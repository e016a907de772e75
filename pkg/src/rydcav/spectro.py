"""
EIT-AT spectroscopy: coupling-detuning scans, Voigt doublet fitting and
extraction of the edge slope kappa.

Fits work in cyclic MHz (x = detuning / 2 pi / 1e6) so that kappa comes
out directly in a.u. per 2 pi MHz. Peak parameters are stored in SI
(rad/s) on the returned objects.
"""

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks, peak_widths
from scipy.special import wofz

from .calib import MHZ, field_from_rabi
from .errors import DataFormatError, DegenerateDoublet, FitDiverged, RydcavError

log = logging.getLogger(__name__)

KAPPA_UNIT = "2pi_au_per_MHz"
_FG = 2.0 * math.sqrt(2.0 * math.log(2.0))
_LN2 = math.log(2.0)
_SQRT2 = math.sqrt(2.0)
_TCH = (1.0, 2.69269, 2.42843, 4.47163, 0.07842, 1.0)


@dataclass
class SpectrumTrace:
    """Transmission versus coupling detuning (rad/s, strictly increasing)."""

    detuning: np.ndarray
    values: np.ndarray
    config: str = "free-space"
    source: str = "simulated"

    def __post_init__(self):
        self.detuning = np.asarray(self.detuning, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.detuning.shape != self.values.shape or self.detuning.ndim != 1:
            raise ValueError("detuning and values must be 1-D arrays of equal length")
        if self.detuning.size < 50:
            raise ValueError(f"a spectrum needs >= 50 points, got {self.detuning.size}")
        if np.any(np.diff(self.detuning) <= 0):
            raise ValueError("detuning grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("spectrum values must be finite")
        if self.config not in ("cavity", "free-space"):
            raise ValueError("config must be 'cavity' or 'free-space'")

    @property
    def detuning_mhz(self):
        return self.detuning / MHZ


@dataclass(frozen=True)
class VoigtPeak:
    """One peak; center and widths in rad/s, ``amplitude`` is the peak height."""

    center: float
    sigma: float
    gamma: float
    amplitude: float

    @property
    def fwhm(self):
        return _tch_width(_FG * self.sigma, 2 * self.gamma)


@dataclass
class VoigtDoubletFit:
    """Result of :func:`fit_voigt_doublet`."""

    peaks: tuple
    baseline: float
    slope: float
    x_ref: float
    kernel: str
    converged: bool
    iterations: int
    cost: float
    residual_rms: float
    params: np.ndarray = field(repr=False)
    covariance: np.ndarray = field(repr=False)

    def evaluate(self, detuning):
        """Fitted curve at detunings in rad/s."""
        return _model(self.params, np.asarray(detuning, float) / MHZ, self.x_ref, self.kernel,
                      self.slope_free)[0]

    @property
    def slope_free(self):
        return self.params.size == 10

    @property
    def splitting(self):
        """Peak separation (rad/s)."""
        return abs(self.peaks[1].center - self.peaks[0].center)


@dataclass(frozen=True)
class Kappa:
    value: float
    peak_index: int
    lock_detuning: float
    unit: str = KAPPA_UNIT

    @property
    def magnitude(self):
        return abs(self.value)


# --- line shapes -----------------------------------------------------------

def _tch_width(fg, fl):
    powers = [fg ** (5 - k) * fl**k for k in range(6)]
    return sum(c * p for c, p in zip(_TCH, powers)) ** 0.2


def _pv(x, c, sigma, gamma):
    """Unit-height TCH pseudo-Voigt and its partial derivatives.

    Returns (y, dy/dc, dy/dsigma, dy/dgamma).
    """
    fg, fl = _FG * sigma, 2.0 * gamma
    p = sum(co * fg ** (5 - k) * fl**k for k, co in enumerate(_TCH))
    f = p**0.2
    dp_dfg = sum(co * (5 - k) * fg ** (4 - k) * fl**k for k, co in enumerate(_TCH) if k < 5)
    dp_dfl = sum(co * k * fg ** (5 - k) * fl ** (k - 1) for k, co in enumerate(_TCH) if k > 0)
    df_dfg = dp_dfg / (5 * f**4)
    df_dfl = dp_dfl / (5 * f**4)
    r = fl / f
    eta = 1.36603 * r - 0.47719 * r**2 + 0.11116 * r**3
    deta_dr = 1.36603 - 2 * 0.47719 * r + 3 * 0.11116 * r**2
    u = x - c
    lor = 1.0 / (1.0 + (2 * u / f) ** 2)
    gau = np.exp(-4 * _LN2 * (u / f) ** 2)
    y = eta * lor + (1 - eta) * gau
    dy_dc = eta * lor**2 * 8 * u / f**2 + (1 - eta) * gau * 8 * _LN2 * u / f**2
    dy_df = eta * lor**2 * 8 * u**2 / f**3 + (1 - eta) * gau * 8 * _LN2 * u**2 / f**3
    dy_deta = lor - gau
    dr_dfg = -fl / f**2 * df_dfg
    dr_dfl = 1 / f - fl / f**2 * df_dfl
    dy_dfg = dy_df * df_dfg + dy_deta * deta_dr * dr_dfg
    dy_dfl = dy_df * df_dfl + dy_deta * deta_dr * dr_dfl
    return y, dy_dc, dy_dfg * _FG, dy_dfl * 2.0


def _pv_dx(x, c, sigma, gamma):
    return -_pv(x, c, sigma, gamma)[1]


def _voigt(x, c, sigma, gamma):
    """Unit-height exact Voigt profile (Faddeeva function) and partials."""
    s2 = sigma * _SQRT2
    z = (x - c + 1j * gamma) / s2
    z0 = 1j * gamma / s2
    w, w0 = wofz(z), wofz(z0)
    dw, dw0 = -2 * z * w + 2j / math.sqrt(math.pi), -2 * z0 * w0 + 2j / math.sqrt(math.pi)
    n0 = w0.real
    y = w.real / n0

    def part(dz, dz0):
        return ((dw * dz).real * n0 - w.real * (dw0 * dz0).real) / n0**2

    dy_dc = part(-1 / s2, 0.0)
    dy_ds = part(-z / sigma, -z0 / sigma)
    dy_dg = part(1j / s2, 1j / s2)
    return y, dy_dc, dy_ds, dy_dg


def _voigt_dx(x, c, sigma, gamma):
    return -_voigt(x, c, sigma, gamma)[1]


_KERNELS = {"pseudo-voigt": (_pv, _pv_dx), "voigt": (_voigt, _voigt_dx)}


def _unpack(p, slope_free):
    if slope_free:
        b0, b1, rest = p[0], p[1], p[2:]
    else:
        b0, b1, rest = p[0], 0.0, p[1:]
    return b0, b1, rest.reshape(2, 4)


def _model(p, x, x_ref, kernel, slope_free):
    """Doublet model and Jacobian in fit coordinates.

    Fit coordinates per peak: (center, ln sigma, ln gamma, ln amplitude).
    """
    prof = _KERNELS[kernel][0]
    b0, b1, peaks = _unpack(p, slope_free)
    y = b0 + b1 * (x - x_ref)
    cols = [np.ones_like(x)]
    if slope_free:
        cols.append(x - x_ref)
    for c, ls, lg, la in peaks:
        s, g, a = math.exp(ls), math.exp(lg), math.exp(la)
        v, dc, ds, dg = prof(x, c, s, g)
        y = y + a * v
        cols += [a * dc, a * ds * s, a * dg * g, a * v]
    return y, np.column_stack(cols)


# --- optimiser -------------------------------------------------------------

def _levenberg_marquardt(fun, p0, max_iter=500, ftol=1e-10, xtol=1e-8):
    """Damped Gauss-Newton with Marquardt diagonal scaling.

    ``fun(p)`` returns (residual, jacobian). Returns
    (p, cost, iterations, converged, jacobian).
    """
    p = np.array(p0, dtype=float)
    r, jac = fun(p)
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(jac))):
        raise FitDiverged("model is not finite at the initial guess")
    cost = 0.5 * r @ r
    lam = 1e-3
    for it in range(1, max_iter + 1):
        grad = jac.T @ r
        hess = jac.T @ jac
        diag = np.maximum(np.diag(hess), 1e-12 * max(np.max(np.diag(hess)), 1e-300))
        while True:
            try:
                step = np.linalg.solve(hess + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                step = np.full_like(p, np.nan)
            trial = p + step
            if np.all(np.isfinite(step)):
                r_new, jac_new = fun(trial)
                cost_new = 0.5 * r_new @ r_new if np.all(np.isfinite(r_new)) else np.inf
            else:
                cost_new = np.inf
            if cost_new <= cost:
                break
            lam *= 4.0
            if lam > 1e16:
                # no descent direction left: numerically at the minimum
                return p, cost, it, True, jac
        rel = (cost - cost_new) / max(cost, 1e-300)
        small_step = np.linalg.norm(step) < xtol * (np.linalg.norm(p) + xtol)
        p, r, jac, cost = trial, r_new, jac_new, cost_new
        lam = max(lam / 3.0, 1e-12)
        if rel < ftol or small_step or cost == 0.0:
            return p, cost, it, True, jac
    return p, cost, max_iter, False, jac


# --- initial guess ---------------------------------------------------------

def _auto_init(x, y):
    n = x.size
    win = max(3, int(round(0.05 * n)) | 1)
    ys = uniform_filter1d(y, win, mode="nearest")
    span = ys.max() - ys.min()
    if span <= 0:
        raise DegenerateDoublet("flat spectrum")
    idx, props = find_peaks(ys, prominence=0.0)
    if idx.size < 2:
        raise DegenerateDoublet(f"found {idx.size} peak(s); a doublet needs two")
    order = np.argsort(props["prominences"])[::-1][:2]
    idx, prom = idx[order], props["prominences"][order]
    if prom[1] < 0.05 * prom[0] or prom[1] < 0.02 * span:
        raise DegenerateDoublet("second peak is not resolved above the smoothing residue")
    idx = np.sort(idx)
    dx = np.mean(np.diff(x))
    widths = peak_widths(ys, idx, rel_height=0.5)[0] * dx
    sep = x[idx[1]] - x[idx[0]]
    widths = np.minimum(widths, sep)
    if sep < 0.5 * widths.mean():
        raise DegenerateDoublet("peak separation below half the mean width")
    base = ys.min()
    p = [base]
    for i, wdt in zip(idx, widths):
        f_each = max(wdt, 2 * dx) / 1.6355
        p += [x[i], math.log(f_each / _FG), math.log(f_each / 2), math.log(max(ys[i] - base, 1e-12))]
    return np.array(p)


# --- public API ------------------------------------------------------------

def scan_spectrum(receiver, grid, mw_rabi=None):
    """Normalised transmission versus coupling detuning ``grid`` (rad/s).

    ``mw_rabi`` defaults to the receiver's LO working point.
    """
    grid = np.asarray(grid, dtype=float)
    mw = receiver.lo_rabi if mw_rabi is None else mw_rabi
    try:
        values = receiver.signal(mw, grid)
    except RydcavError as exc:
        for d in grid:
            try:
                receiver.signal(mw, d)
            except RydcavError as inner:
                raise type(exc)(f"at coupling detuning {d / MHZ:.6g} MHz: {inner}") from inner
        raise
    return SpectrumTrace(grid, values, "cavity" if receiver.is_cavity else "free-space", "simulated")


def fit_voigt_doublet(trace, init=None, kernel="pseudo-voigt", slope=False, max_iter=500):
    """Fit two Voigt-like peaks plus a baseline to ``trace``.

    Parameters
    ----------
    trace : SpectrumTrace
    init : VoigtDoubletFit or array, optional
        Starting point; auto-initialised from the smoothed data if absent.
    kernel : {"pseudo-voigt", "voigt"}
    slope : bool
        Also fit a linear background.
    """
    if kernel not in _KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}")
    x = trace.detuning_mhz
    y = trace.values
    x_ref = float(0.5 * (x[0] + x[-1]))
    if init is None:
        p0 = _auto_init(x, y)
        if slope:
            p0 = np.insert(p0, 1, 0.0)
    else:
        p0 = np.array(init.params if isinstance(init, VoigtDoubletFit) else init, dtype=float)
        if p0.size != (10 if slope else 9):
            raise ValueError("init does not match the requested parameterisation")

    def fun(p):
        m, jac = _model(p, x, x_ref, kernel, slope)
        return m - y, jac

    with np.errstate(over="ignore", invalid="ignore"):
        p, cost, its, ok, jac = _levenberg_marquardt(fun, p0, max_iter)
    if not np.isfinite(cost):
        raise FitDiverged("fit cost is not finite")
    b0, b1, pk = _unpack(p, slope)
    pk = pk[np.argsort(pk[:, 0])]
    p = np.concatenate([[b0, b1] if slope else [b0], pk.ravel()])
    peaks = tuple(VoigtPeak(c * MHZ, math.exp(ls) * MHZ, math.exp(lg) * MHZ, math.exp(la))
                  for c, ls, lg, la in pk)
    resid = fun(p)[0]
    dof = max(1, x.size - p.size)
    cov = np.linalg.pinv(jac.T @ jac) * (2 * cost / dof)
    if not ok:
        warnings.warn(f"Voigt fit did not converge in {max_iter} iterations", RuntimeWarning)
    if any(not (x[0] <= pp.center / MHZ <= x[-1]) for pp in peaks):
        ok = False
        warnings.warn("fitted peak center lies outside the scanned grid", RuntimeWarning)
    fit = VoigtDoubletFit(peaks, float(b0), float(b1), x_ref, kernel, bool(ok), its, float(cost),
                          float(np.sqrt(np.mean(resid**2))), p, cov)
    if fit.splitting < 0.25 * (peaks[0].fwhm + peaks[1].fwhm):
        raise DegenerateDoublet("fitted peaks overlap: separation below half the mean width")
    return fit


def extract_kappa(fit, lock_detuning=0.0):
    """Edge slope of the single fitted peak nearest ``lock_detuning``.

    Analytic derivative of that peak's profile (baseline excluded), in
    transmission units per 2 pi MHz. The sign is kept.
    """
    if not fit.converged:
        warnings.warn("extracting kappa from a non-converged fit", RuntimeWarning)
    i = int(np.argmin([abs(p.center - lock_detuning) for p in fit.peaks]))
    pk = fit.peaks[i]
    dx = _KERNELS[fit.kernel][1]
    val = pk.amplitude * dx(lock_detuning / MHZ, pk.center / MHZ, pk.sigma / MHZ, pk.gamma / MHZ)
    return Kappa(float(val), i, float(lock_detuning))


def peak_curve(fit, index, detuning):
    """One fitted peak (without baseline) at detunings in rad/s."""
    pk = fit.peaks[index]
    x = np.asarray(detuning, float) / MHZ
    return pk.amplitude * _KERNELS[fit.kernel][0](x, pk.center / MHZ, pk.sigma / MHZ, pk.gamma / MHZ)[0]


def at_splitting_to_field(fit, sys):
    """LO field (V/m) implied by the fitted AT splitting."""
    if fit.splitting <= 0:
        raise DegenerateDoublet("zero splitting")
    return field_from_rabi(fit.splitting, sys.mu_mw)


def voigt_doublet(detuning, peaks, baseline=0.0, kernel="pseudo-voigt"):
    """Synthesize a doublet from :class:`VoigtPeak` objects (rad/s grid)."""
    x = np.asarray(detuning, float) / MHZ
    prof = _KERNELS[kernel][0]
    y = np.full_like(x, baseline)
    for p in peaks:
        y += p.amplitude * prof(x, p.center / MHZ, p.sigma / MHZ, p.gamma / MHZ)[0]
    return y


def read_spectrum_csv(path, config="free-space"):
    """Ingest a measured spectrum: header row, then ``detuning_MHz, transmission``.

    Lines starting with '#' are comments. Errors name the offending row
    (1-based line number in the file).
    """
    xs, ys = [], []
    header = None
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataFormatError(str(exc), path) from exc
    with fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#") or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise DataFormatError(f"expected 2 columns, found {len(row)}", path, lineno)
            if header is None:
                try:
                    float(row[0])
                    float(row[1])
                except ValueError:
                    header = [c.strip() for c in row]
                    continue
                raise DataFormatError("header row missing", path, lineno)
            try:
                xv, yv = float(row[0]), float(row[1])
            except ValueError:
                raise DataFormatError(f"non-numeric value {row!r}", path, lineno) from None
            if not (math.isfinite(xv) and math.isfinite(yv)):
                raise DataFormatError("non-finite value", path, lineno)
            if xs and xv <= xs[-1][0]:
                raise DataFormatError("detuning column is not strictly increasing", path, lineno)
            xs.append((xv, lineno))
            ys.append(yv)
    if header is None:
        raise DataFormatError("header row missing", path)
    if len(xs) < 50:
        raise DataFormatError(f"a spectrum needs >= 50 rows, got {len(xs)}", path)
    det = np.array([v for v, _ in xs]) * MHZ
    return SpectrumTrace(det, np.array(ys), config, "ingested")
