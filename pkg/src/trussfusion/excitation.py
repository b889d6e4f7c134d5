"""Base-excitation signal generators: chirp, band-limited noise, quakes.

All generators are deterministic given their seed and return ground
acceleration in m/s^2 at a fixed sample step.  The artificial earthquake
follows a non-stationary Kanai-Tajimi construction: filtered white noise
shaped by a rise/hold/decay envelope and rescaled to the target peak
ground acceleration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .validation import check_positive


@dataclass(eq=False)
class GroundMotion:
    dt: float
    accel: np.ndarray              # m/s^2
    direction: str = "x"           # excitation axis, "x" or "y"
    meta: dict = field(default_factory=dict)
    displacement: np.ndarray | None = None  # m, when analytically available

    def __post_init__(self):
        check_positive(self.dt, "dt")
        self.accel = np.asarray(self.accel, dtype=float)
        if not np.all(np.isfinite(self.accel)):
            raise ValueError("ground acceleration contains non-finite samples")
        if self.direction not in ("x", "y"):
            raise ValueError(f"direction must be 'x' or 'y', got {self.direction!r}")

    @property
    def times(self):
        return np.arange(self.accel.size) * self.dt

    @property
    def duration(self):
        return self.accel.size * self.dt

    def scaled(self, factor):
        """Amplitude-scaled copy (model-scale downscaling)."""
        disp = None if self.displacement is None else factor * self.displacement
        meta = dict(self.meta, amplitude_scale=float(factor))
        return GroundMotion(self.dt, factor * self.accel, self.direction, meta, disp)


def chirp(f0=0.1, f1=6.0, duration=10.0, amplitude=2e-3, dt=0.005,
          direction="x") -> GroundMotion:
    """Linear sine sweep displacement with analytic acceleration.

    s(t) = A sin(theta), theta = 2 pi (f0 t + r t^2 / 2), r = (f1-f0)/T;
    the acceleration is the exact second derivative
    A (theta'' cos(theta) - theta'^2 sin(theta)).
    """
    if not 0 < f0 < f1:
        raise ValueError(f"need 0 < f0 < f1, got f0={f0}, f1={f1}")
    check_positive(duration, "duration")
    check_positive(dt, "dt")
    check_positive(amplitude, "amplitude")
    t = np.arange(int(round(duration / dt)) + 1) * dt
    rate = (f1 - f0) / duration
    theta = 2.0 * np.pi * (f0 * t + 0.5 * rate * t ** 2)
    dtheta = 2.0 * np.pi * (f0 + rate * t)
    ddtheta = 2.0 * np.pi * rate
    disp = amplitude * np.sin(theta)
    accel = amplitude * (ddtheta * np.cos(theta) - dtheta ** 2 * np.sin(theta))
    meta = {"type": "chirp", "f0_hz": f0, "f1_hz": f1, "duration_s": duration,
            "amplitude_m": amplitude}
    return GroundMotion(dt, accel, direction, meta, displacement=disp)


def chirp_displacement_peaks(f0, f1, duration):
    """Times where the chirp displacement attains +-amplitude exactly.

    Solves theta(t) = pi/2 + m pi for all integer m with a root in
    [0, duration]; used to verify the sweep phase law independent of the
    sample grid.
    """
    rate = (f1 - f0) / duration
    theta_end = 2.0 * np.pi * (f0 * duration + 0.5 * rate * duration ** 2)
    peaks = []
    m = 0
    while True:
        target = (np.pi / 2.0 + m * np.pi) / (2.0 * np.pi)
        if 2.0 * np.pi * target > theta_end:
            break
        # f0 t + r t^2/2 = target  ->  t = (-f0 + sqrt(f0^2 + 2 r target)) / r
        disc = f0 ** 2 + 2.0 * rate * target
        t = (-f0 + np.sqrt(disc)) / rate
        if 0.0 <= t <= duration:
            peaks.append(t)
        m += 1
    return np.array(peaks)


def band_limited_noise(fs=1000.0, band=(0.5, 20.0), rms=1.0, duration=10.0,
                       seed=0, direction="x") -> GroundMotion:
    """Seeded white noise band-passed by cascaded first-order sections.

    Two high-pass and two low-pass bilinear-transform sections set the
    band edges; the realization is rescaled to the requested RMS.
    """
    lo, hi = band
    if not 0 < lo < hi:
        raise ValueError(f"band must satisfy 0 < lo < hi, got {band}")
    if hi >= fs / 2:
        raise ValueError(f"band upper edge {hi} must be below Nyquist {fs / 2}")
    check_positive(rms, "rms")
    check_positive(duration, "duration")
    from scipy.signal import lfilter

    rng = np.random.default_rng(seed)
    n = int(round(duration * fs)) + 1
    x = rng.standard_normal(n)

    K_lo = np.tan(np.pi * lo / fs)
    K_hi = np.tan(np.pi * hi / fs)
    hp = ([1.0 / (1.0 + K_lo), -1.0 / (1.0 + K_lo)],
          [1.0, (K_lo - 1.0) / (K_lo + 1.0)])
    lp = ([K_hi / (1.0 + K_hi), K_hi / (1.0 + K_hi)],
          [1.0, (K_hi - 1.0) / (K_hi + 1.0)])
    for _ in range(2):
        x = lfilter(*hp, x)
        x = lfilter(*lp, x)
    x *= rms / np.sqrt(np.mean(x ** 2))
    meta = {"type": "band_limited_noise", "fs_hz": fs, "band_hz": list(band),
            "rms_m_per_s2": rms, "duration_s": duration, "seed": int(seed)}
    return GroundMotion(1.0 / fs, x, direction, meta)


def kt_peak_frequency_ratio(zeta_g):
    """Peak location of the Kanai-Tajimi spectrum relative to omega_n.

    S(u) with u = omega/omega_n peaks at u* where a u*^4 + 2 u*^2 - 2 = 0
    for a = 4 zeta^2, giving u*^2 = (sqrt(1 + 2a) - 1)/a (u* -> 1 as
    zeta -> 0).
    """
    a = 4.0 * zeta_g ** 2
    if a == 0.0:
        return 1.0
    return float(np.sqrt((np.sqrt(1.0 + 2.0 * a) - 1.0) / a))


def kt_spectrum(f, f_n, zeta_g):
    """Analytic Kanai-Tajimi acceleration spectrum shape (unit intensity)."""
    u2 = (np.asarray(f, dtype=float) / f_n) ** 2
    a = 4.0 * zeta_g ** 2
    return (1.0 + a * u2) / ((1.0 - u2) ** 2 + a * u2)


def kanai_tajimi(duration=20.0, dominant_freq=4.0, freq_std=4.0,
                 target_pga=3.63, seed=0, dt=0.001, direction="x",
                 peak_calibrated=True) -> GroundMotion:
    """Non-stationary Kanai-Tajimi artificial ground acceleration.

    White noise drives the second-order ground filter

        xf'' + 2 zeta_g w_g xf' + w_g^2 xf = -w(t),
        a_g = 2 zeta_g w_g xf' + w_g^2 xf,

    the output is shaped by a quadratic-rise (15 %), hold, exponential-
    decay (35 %) envelope and rescaled so max |a_g| equals the target
    PGA exactly.

    ``freq_std`` is mapped to the ground-filter damping by reading it as
    the half-power bandwidth of the spectral peak: zeta_g = std/(2 f_dom).
    With ``peak_calibrated`` (default) the filter natural frequency is
    shifted by the analytic peak ratio so the spectrum peaks at
    ``dominant_freq`` itself rather than below it; the reference
    generator's exact parameterization is not published, so this
    calibrated reading is the documented choice.
    """
    check_positive(duration, "duration")
    check_positive(dominant_freq, "dominant_freq")
    check_positive(freq_std, "freq_std")
    check_positive(target_pga, "target_pga")
    check_positive(dt, "dt")

    zeta_g = freq_std / (2.0 * dominant_freq)
    omega_dom = 2.0 * np.pi * dominant_freq
    omega_n = omega_dom / kt_peak_frequency_ratio(zeta_g) if peak_calibrated else omega_dom

    rng = np.random.default_rng(seed)
    n = int(round(duration / dt)) + 1
    w = rng.standard_normal(n)

    # exact ZOH discretization of the 2-state ground filter
    import scipy.signal

    A = np.array([[0.0, 1.0], [-omega_n ** 2, -2.0 * zeta_g * omega_n]])
    B = np.array([[0.0], [-1.0]])
    C = np.array([[omega_n ** 2, 2.0 * zeta_g * omega_n]])
    D = np.array([[0.0]])
    Ad, Bd, Cd, Dd, _ = scipy.signal.cont2discrete((A, B, C, D), dt, method="zoh")
    _, a_g, _ = scipy.signal.dlsim((Ad, Bd, Cd, Dd, dt), w)
    a_g = np.asarray(a_g).ravel()

    t = np.arange(n) * dt
    envelope = _amin_ang_envelope(t, duration)
    a_g *= envelope
    peak = np.abs(a_g).max()
    if peak == 0.0:
        raise ValueError("degenerate earthquake realization (all zeros)")
    a_g *= target_pga / peak

    meta = {"type": "kanai_tajimi", "duration_s": duration,
            "dominant_freq_hz": dominant_freq, "freq_std_hz": freq_std,
            "target_pga_m_per_s2": target_pga, "seed": int(seed),
            "zeta_g": zeta_g, "filter_natural_freq_hz": omega_n / (2 * np.pi),
            "peak_calibrated": bool(peak_calibrated)}
    return GroundMotion(dt, a_g, direction, meta)


def _amin_ang_envelope(t, duration, rise_frac=0.15, decay_frac=0.35,
                       decay_floor=0.05):
    """Quadratic rise, hold, exponential decay to decay_floor at the end."""
    t1 = rise_frac * duration
    t2 = (1.0 - decay_frac) * duration
    c = np.log(1.0 / decay_floor) / (decay_frac * duration)
    env = np.ones_like(t)
    rise = t < t1
    env[rise] = (t[rise] / t1) ** 2
    decay = t > t2
    env[decay] = np.exp(-c * (t[decay] - t2))
    return env


# ---------------------------------------------------------------------------
# CSV + metadata sidecar I/O

def write_ground_motion(gm: GroundMotion, csv_path, meta_path=None):
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("t,accel\n")
        for ti, ai in zip(gm.times, gm.accel):
            fh.write(f"{ti:.17g},{ai:.17g}\n")
    if meta_path is not None:
        meta = dict(gm.meta, dt_s=gm.dt, direction=gm.direction,
                    n_samples=int(gm.accel.size))
        with open(meta_path, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


def read_ground_motion(csv_path, meta_path=None) -> GroundMotion:
    data = np.genfromtxt(csv_path, delimiter=",", names=True)
    t = np.atleast_1d(data["t"])
    accel = np.atleast_1d(data["accel"])
    if t.size < 2:
        raise ValueError(f"{csv_path} holds fewer than two samples")
    dt = float(t[1] - t[0])
    meta, direction = {}, "x"
    if meta_path is not None:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        direction = meta.get("direction", "x")
    return GroundMotion(dt, accel, direction, meta)
