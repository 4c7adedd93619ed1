"""Time-tag processing: synthetic clicks, G2 histograms, peak fit, key assembly.

Timestamps are integer ticks of the time-to-digital converter (81 ps).
Alice's heralding detectors are D0/D1 and Bob's are D2/D3. A heralded pair
is a joint count whose lag ``t_bob - t_alice`` lies within
``tau0 +/- 2 sigma`` of the G2 peak.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.special import ndtr, xlogy

TICK_PS = 81.0
DEFAULT_BIN_WIDTH = 1
DEFAULT_RANGE = 2048
DEFAULT_MIN_PEAK_COUNT = 50


class Detector(enum.IntEnum):
    D0 = 0
    D1 = 1
    D2 = 2
    D3 = 3


ALICE_DETECTORS = (Detector.D0, Detector.D1)
BOB_DETECTORS = (Detector.D2, Detector.D3)

# logical bit for each detector
ALICE_BIT = {Detector.D0: 0, Detector.D1: 1}
BOB_BIT = {Detector.D3: 0, Detector.D2: 1}
ALICE_DETECTOR_FOR_BIT = {0: Detector.D0, 1: Detector.D1}
BOB_DETECTOR_FOR_BIT = {0: Detector.D3, 1: Detector.D2}

# joint-count channels, (alice detector, bob detector)
PAIRS = {
    "d12": (Detector.D1, Detector.D2),
    "d03": (Detector.D0, Detector.D3),
    "d13": (Detector.D1, Detector.D3),
    "d02": (Detector.D0, Detector.D2),
}


class FitError(RuntimeError):
    """G2 peak fit failed (too few counts, no peak, or no convergence)."""


@dataclass
class DetectionStream:
    """Sorted click records of one party.

    ``origin`` holds the schedule position that produced each click, or -1
    for dark counts. It is generator bookkeeping and never serialized.
    """

    t: np.ndarray
    detector: np.ndarray
    index: np.ndarray
    origin: np.ndarray | None = None

    def __len__(self):
        return len(self.t)

    @classmethod
    def from_clicks(cls, t, detector, origin=None) -> "DetectionStream":
        t = np.asarray(t, dtype=np.int64)
        if np.any(t < 0):
            raise ValueError("timestamps must be non-negative")
        detector = np.asarray(detector, dtype=np.uint8)
        seq = np.arange(len(t))
        order = np.lexsort((seq, detector, t))
        origin = None if origin is None else np.asarray(origin, dtype=np.int64)[order]
        return cls(
            t=t[order].astype(np.uint64),
            detector=detector[order],
            index=np.arange(len(t), dtype=np.int64),
            origin=origin,
        )

    def public(self):
        """The part of the record that may be announced: ``(index, t)``."""
        return self.index.copy(), self.t.copy()

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "t_ticks", "detector"])
        for i, t, d in zip(self.index, self.t, self.detector):
            w.writerow([int(i), int(t), Detector(int(d)).name])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv_text())

    @classmethod
    def read_csv(cls, path) -> "DetectionStream":
        idx, ts, dets = [], [], []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["index", "t_ticks", "detector"]:
                raise ValueError(f"{path}: expected header index,t_ticks,detector")
            for row in reader:
                idx.append(int(row["index"]))
                ts.append(int(row["t_ticks"]))
                dets.append(Detector[row["detector"]].value)
        t = np.array(ts, dtype=np.int64)
        if np.any(np.diff(t) < 0):
            raise ValueError(f"{path}: records are not sorted by time")
        if idx != list(range(len(idx))):
            raise ValueError(f"{path}: index column must count up from 0")
        return cls(t.astype(np.uint64), np.array(dets, dtype=np.uint8), np.array(idx, dtype=np.int64))


@dataclass(frozen=True)
class CoincidenceWindow:
    tau0: float
    sigma: float
    half_width_multiplier: float = 2.0
    amplitude: float | None = None
    background: float | None = None
    residual: float | None = None

    def __post_init__(self):
        if not (self.sigma > 0):
            raise ValueError("window sigma must be positive")

    def lag_bounds(self) -> tuple[int, int]:
        """Inclusive integer lag range ``|lag - tau0| <= k sigma``."""
        hw = self.half_width_multiplier * self.sigma
        eps = 1e-9
        return math.ceil(self.tau0 - hw - eps), math.floor(self.tau0 + hw + eps)

    def contains(self, lag: int) -> bool:
        lo, hi = self.lag_bounds()
        return lo <= lag <= hi


@dataclass
class G2Histogram:
    """Lag histogram per joint-count channel.

    Bin ``k`` collects integer lags ``lag_lo[k] .. lag_lo[k] + bin_width - 1``;
    the bins tile ``[-range, +range]``.
    """

    bin_width: int
    range: int
    lag_lo: np.ndarray
    counts: dict = field(default_factory=dict)

    def channel(self, pair: str = "all") -> np.ndarray:
        if pair == "all":
            return sum(self.counts[p] for p in PAIRS)
        return self.counts[pair]

    def centers(self) -> np.ndarray:
        return self.lag_lo + (self.bin_width - 1) / 2.0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lag_ticks"] + [f"count_{p}" for p in PAIRS])
            for k, lag in enumerate(self.lag_lo):
                w.writerow([int(lag)] + [_fmt_count(self.counts[p][k]) for p in PAIRS])

    @classmethod
    def read_csv(cls, path) -> "G2Histogram":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["lag_ticks"] + [f"count_{p}" for p in PAIRS]:
                raise ValueError(f"{path}: unexpected histogram header")
            rows = [[float(x) for x in row] for row in reader]
        data = np.array(rows)
        lag_lo = data[:, 0].astype(np.int64)
        bw = int(lag_lo[1] - lag_lo[0]) if len(lag_lo) > 1 else 1
        counts = {p: data[:, i + 1] for i, p in enumerate(PAIRS)}
        return cls(bw, int(-lag_lo[0]), lag_lo, counts)


def _fmt_count(x) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def _bins(bin_width: int, range_ticks: int) -> np.ndarray:
    if bin_width < 1 or range_ticks < 0:
        raise ValueError("bin_width must be >= 1 and range >= 0")
    n_bins = -(-(2 * range_ticks + 1) // bin_width)
    return -range_ticks + bin_width * np.arange(n_bins, dtype=np.int64)


def pair_lags(t_a: np.ndarray, t_b: np.ndarray, range_ticks: int) -> np.ndarray:
    """All lags ``t_b - t_a`` with ``|lag| <= range_ticks`` (both inputs sorted)."""
    t_a = np.asarray(t_a, dtype=np.int64)
    t_b = np.asarray(t_b, dtype=np.int64)
    lo = np.searchsorted(t_b, t_a - range_ticks, side="left")
    hi = np.searchsorted(t_b, t_a + range_ticks, side="right")
    n = hi - lo
    if n.sum() == 0:
        return np.zeros(0, dtype=np.int64)
    a_rep = np.repeat(np.arange(len(t_a)), n)
    offsets = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
    return t_b[np.repeat(lo, n) + offsets] - t_a[a_rep]


def g2_histogram(
    alice: DetectionStream,
    bob: DetectionStream,
    bin_width: int = DEFAULT_BIN_WIDTH,
    range_ticks: int = DEFAULT_RANGE,
) -> G2Histogram:
    """Histogram of Bob-minus-Alice lags for the four joint-count channels."""
    lag_lo = _bins(bin_width, range_ticks)
    counts = {}
    for name, (da, db) in PAIRS.items():
        ta = alice.t[alice.detector == da]
        tb = bob.t[bob.detector == db]
        lags = pair_lags(ta, tb, range_ticks)
        counts[name] = np.bincount((lags + range_ticks) // bin_width, minlength=len(lag_lo)).astype(np.int64)
    return G2Histogram(bin_width, range_ticks, lag_lo, counts)


def _binned_gaussian(params, edges_lo, edges_hi, bin_width):
    mu, sigma, amp, bg = params
    mass = ndtr((edges_hi - mu) / sigma) - ndtr((edges_lo - mu) / sigma)
    return amp * mass + bg * bin_width


def _log_parabola_guess(x, c, peak, bg):
    """Initial (mu, sigma) from a parabola through log-counts near the peak."""
    above = c - bg
    top = above[peak]
    lo = peak
    while lo > 0 and above[lo - 1] > 0.1 * top:
        lo -= 1
    hi = peak
    while hi < len(c) - 1 and above[hi + 1] > 0.1 * top:
        hi += 1
    sel = slice(lo, hi + 1)
    if hi - lo >= 2:
        a, b, _ = np.polyfit(x[sel], np.log(np.maximum(above[sel], 1.0)), 2)
        if a < 0:
            return -b / (2 * a), math.sqrt(-1.0 / (2 * a))
    w = np.maximum(above[sel], 0)
    mu = float(np.sum(w * x[sel]) / np.sum(w))
    var = float(np.sum(w * (x[sel] - mu) ** 2) / np.sum(w))
    return mu, max(math.sqrt(var), 0.5)


def fit_gaussian_peak(
    hist: G2Histogram,
    pair: str = "all",
    min_peak_count: float = DEFAULT_MIN_PEAK_COUNT,
    half_width_multiplier: float = 2.0,
) -> CoincidenceWindow:
    """Fit a Gaussian peak plus flat background to one G2 channel.

    A parabola through the log-counts (floored at 1) seeds a Poisson
    maximum-likelihood fit of the bin-integrated Gaussian. Sigma is bounded below by the
    quantization width ``bin_width / sqrt(12)``.
    """
    c = np.asarray(hist.channel(pair), dtype=float)
    x = hist.centers()
    if c.size < 3:
        raise FitError("histogram too short to fit")
    peak = int(np.argmax(c))
    if c[peak] < min_peak_count:
        raise FitError(f"peak count {c[peak]:g} below minimum {min_peak_count:g}")
    bg = float(np.median(c))
    if c[peak] - bg < 5.0 * math.sqrt(bg + 1.0):
        raise FitError("no significant peak above background")

    bw = hist.bin_width
    sigma_min = bw / math.sqrt(12.0)
    mu0, s0 = _log_parabola_guess(x, c, peak, bg)
    s0 = max(s0, sigma_min * 1.01)
    amp0 = max(float(np.sum(c - bg)), 1.0)
    edges_lo = hist.lag_lo - 0.5
    edges_hi = edges_lo + bw

    def resid(p):
        # signed Poisson deviance residuals, so the fit is maximum likelihood
        m = np.maximum(_binned_gaussian(p, edges_lo, edges_hi, bw), 1e-300)
        dev = 2.0 * (m - c + xlogy(c, c / m))
        return np.sign(m - c) * np.sqrt(np.maximum(dev, 0.0))

    x_min, x_max = float(edges_lo[0]), float(edges_hi[-1])
    span = x_max - x_min
    p0 = np.array([np.clip(mu0, x_min, x_max), min(s0, span), amp0, max(bg / bw, 0.0)])
    try:
        sol = least_squares(
            resid,
            p0,
            bounds=([x_min, sigma_min, 0.0, 0.0], [x_max, span, np.inf, np.inf]),
            x_scale="jac",
            xtol=1e-15,
            ftol=1e-15,
            gtol=1e-15,
            max_nfev=2000,
        )
    except ValueError as exc:
        raise FitError(f"fit failed: {exc}") from exc
    if sol.status <= 0:
        raise FitError(f"fit did not converge: {sol.message}")
    mu, sigma, amp, b = sol.x
    if not (x_min < mu < x_max) or sigma >= 0.5 * span:
        raise FitError("fitted peak is not inside the histogram range")
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    return CoincidenceWindow(
        tau0=float(mu),
        sigma=float(sigma),
        half_width_multiplier=half_width_multiplier,
        amplitude=float(amp),
        background=float(b),
        residual=rms,
    )


def find_coincidences(alice: DetectionStream, bob: DetectionStream, window: CoincidenceWindow):
    """Greedy one-to-one matching of clicks inside the coincidence window.

    Alice's clicks are visited in time order and each takes the earliest
    unused Bob click with an in-window lag. Only public data (indexes and
    timestamps) are used. Returns a list of ``(index_a, index_b)``.
    """
    lo, hi = window.lag_bounds()
    t_a = alice.t.astype(np.int64)
    t_b = bob.t.astype(np.int64)
    starts = np.searchsorted(t_b, t_a + lo, side="left")
    out = []
    nxt = 0
    n_b = len(t_b)
    for i in range(len(t_a)):
        j = max(int(starts[i]), nxt)
        if j < n_b and t_b[j] - t_a[i] <= hi:
            out.append((int(alice.index[i]), int(bob.index[j])))
            nxt = j + 1
    return out


def public_transcript(coincidences, alice: DetectionStream, bob: DetectionStream):
    """Rows ``(index_a, t_a, index_b, t_b)``; detector identities are withheld."""
    return [(ia, int(alice.t[ia]), ib, int(bob.t[ib])) for ia, ib in coincidences]


def assemble_key(coincidences, alice: DetectionStream, bob: DetectionStream):
    """Private bit assignment: Alice D0->0, D1->1; Bob D3->0, D2->1."""
    a_bits = np.zeros(len(coincidences), dtype=np.uint8)
    b_bits = np.zeros(len(coincidences), dtype=np.uint8)
    for k, (ia, ib) in enumerate(coincidences):
        da = Detector(int(alice.detector[ia]))
        db = Detector(int(bob.detector[ib]))
        if da not in ALICE_BIT or db not in BOB_BIT:
            raise ValueError(f"coincidence {k} pairs detectors {da.name}/{db.name}")
        a_bits[k] = ALICE_BIT[da]
        b_bits[k] = BOB_BIT[db]
    return a_bits, b_bits


# -- synthetic data -------------------------------------------------------


def planted_schedule(alice_bits, bob_bits=None, spacing: int = 10_000, start: int = 5_000) -> np.ndarray:
    """Schedule rows ``(emission, alice_detector, bob_detector)`` for given keys."""
    alice_bits = np.asarray(alice_bits, dtype=np.uint8)
    bob_bits = alice_bits if bob_bits is None else np.asarray(bob_bits, dtype=np.uint8)
    n = len(alice_bits)
    sched = np.zeros((n, 3), dtype=np.int64)
    sched[:, 0] = start + spacing * np.arange(n)
    sched[:, 1] = np.where(alice_bits == 0, Detector.D0, Detector.D1)
    sched[:, 2] = np.where(bob_bits == 0, Detector.D3, Detector.D2)
    return sched


def heralded_schedule(n_steps: int, mean_pairs: float, step_ticks: int, rng: np.random.Generator, spacing: int = 10_000):
    """Random-bit schedule with a Poisson number of heralded pairs per wave-plate step.

    Returns ``(schedule, step_of_pair)``.
    """
    counts = rng.poisson(mean_pairs, size=n_steps)
    per_step_max = max(1, step_ticks // spacing - 1)
    if counts.max(initial=0) > per_step_max:
        raise ValueError("step_ticks too short for the requested pair rate")
    steps = np.repeat(np.arange(n_steps), counts)
    slot = np.concatenate([np.arange(c) for c in counts]) if counts.sum() else np.zeros(0, dtype=np.int64)
    bits = rng.integers(0, 2, size=len(steps), dtype=np.uint8)
    sched = planted_schedule(bits, spacing=spacing, start=0)
    sched[:, 0] = steps * step_ticks + spacing // 2 + slot * spacing
    return sched, steps


def generate_events(
    schedule,
    jitter_sigma: float = 0.0,
    delay: int = 1234,
    dark_rates=(0.0, 0.0, 0.0, 0.0),
    duration: int | None = None,
    seed: int = 0,
):
    """Synthetic click streams for Alice and Bob.

    Every scheduled pair produces an Alice click at ``emission + jitter`` and
    a Bob click at ``emission + delay + jitter`` (independent Gaussian jitter
    per side, rounded to ticks). Dark counts are Poisson with ``dark_rates``
    counts per tick for D0..D3, uniform over ``[0, duration)``.
    """
    sched = np.asarray(schedule, dtype=np.int64).reshape(-1, 3)
    if np.any(np.diff(sched[:, 0]) < 0):
        raise ValueError("schedule must be sorted by emission time")
    rates = np.asarray(dark_rates, dtype=float)
    if rates.shape != (4,) or np.any(rates < 0):
        raise ValueError("dark_rates needs four non-negative rates (D0..D3)")
    if duration is None:
        duration = int(sched[-1, 0] + delay + 5_000) if len(sched) else 0
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    n = len(sched)
    jit_a = np.rint(rng.normal(0.0, jitter_sigma, n)).astype(np.int64) if jitter_sigma > 0 else np.zeros(n, np.int64)
    jit_b = np.rint(rng.normal(0.0, jitter_sigma, n)).astype(np.int64) if jitter_sigma > 0 else np.zeros(n, np.int64)
    t_a = np.maximum(sched[:, 0] + jit_a, 0)
    t_b = np.maximum(sched[:, 0] + delay + jit_b, 0)

    def darks(dets):
        ts, ds = [], []
        for det in dets:
            k = rng.poisson(rates[det] * duration) if duration > 0 else 0
            ts.append(rng.integers(0, max(duration, 1), size=k))
            ds.append(np.full(k, det, dtype=np.uint8))
        return np.concatenate(ts), np.concatenate(ds)

    da_t, da_d = darks(ALICE_DETECTORS)
    db_t, db_d = darks(BOB_DETECTORS)
    origin = np.arange(n)
    alice = DetectionStream.from_clicks(
        np.concatenate([t_a, da_t]),
        np.concatenate([sched[:, 1].astype(np.uint8), da_d]),
        np.concatenate([origin, np.full(len(da_t), -1)]),
    )
    bob = DetectionStream.from_clicks(
        np.concatenate([t_b, db_t]),
        np.concatenate([sched[:, 2].astype(np.uint8), db_d]),
        np.concatenate([origin, np.full(len(db_t), -1)]),
    )
    return alice, bob


def schedule_bits(schedule):
    """Planted ``(alice_bits, bob_bits)`` encoded in a schedule."""
    sched = np.asarray(schedule, dtype=np.int64).reshape(-1, 3)
    a = np.array([ALICE_BIT[Detector(int(d))] for d in sched[:, 1]], dtype=np.uint8)
    b = np.array([BOB_BIT[Detector(int(d))] for d in sched[:, 2]], dtype=np.uint8)
    return a, b


def expected_accidentals(n_alice: int, n_bob: int, dark_alice: float, dark_bob: float, window: CoincidenceWindow) -> float:
    """Mean number of coincidences involving a dark click.

    ``dark_alice``/``dark_bob`` are total dark rates (per tick) of each side.
    """
    lo, hi = window.lag_bounds()
    width = hi - lo + 1
    return width * (n_alice * dark_bob + n_bob * dark_alice)


def dark_mismatch_bound(n_coincidences: int, accidentals: float) -> float:
    """Expected key mismatch rate when accidental pairs carry random bits."""
    if n_coincidences == 0:
        return 0.0
    return min(0.5, 0.5 * accidentals / n_coincidences)
