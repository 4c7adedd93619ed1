"""Monte Carlo BB84 with the decoherence-assisted sifting step.

Each round Alice picks a basis, a bit and a public decoherence setting; Bob
picks a basis and a setting. A round is kept when both the basis and the
setting agree. Outcome probabilities are computed exactly per distinct
round type and then sampled, so runs of millions of rounds stay cheap.

Randomness: round block ``b`` draws from ``SeedSequence(seed,
spawn_key=(0, b))`` and the QBER sample from ``spawn_key=(1,)``, so results
do not depend on how blocks are scheduled.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .attack import (
    BASIS_LABELS,
    HelstromUndefined,
    attacked_transmission,
    eve_conditional_state,
    eve_states_closed_form,
    helstrom_measurement,
)
from .channel import DEFAULT_D_VALUES, ChannelSetting, bob_reduced_state
from .qmath import KETS, GaussianMode, born_probability, clip_spectrum

BASES = ("HV", "DA")
BLOCK_SIZE = 8192

# bit -> polarization label per basis
BIT_LABELS = {"HV": ("H", "V"), "DA": ("D", "A")}


@dataclass(frozen=True)
class NoiseModel:
    """Detector-side imperfections applied to Bob's bit.

    A misaligned analyzer flips the bit with probability ``sin(theta)^2``;
    afterwards, with probability ``dark_count_prob`` the click is a dark
    count and the bit is replaced by a fair coin.
    """

    dark_count_prob: float = 0.0
    pol_misalignment: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.dark_count_prob <= 1.0):
            raise ValueError("dark_count_prob must lie in [0, 1]")
        if not np.isfinite(self.pol_misalignment):
            raise ValueError("pol_misalignment must be finite")

    @property
    def misalignment_flip(self) -> float:
        return float(np.sin(self.pol_misalignment) ** 2)

    def error_rate(self, channel_error: float = 0.0) -> float:
        """Bit error rate after noise for a channel with error ``channel_error``."""
        e = self.misalignment_flip
        q = channel_error * (1 - e) + (1 - channel_error) * e
        return (1 - self.dark_count_prob) * q + 0.5 * self.dark_count_prob

    @classmethod
    def calibrated(cls) -> "NoiseModel":
        """Defaults tuned to a 3.9 % baseline QBER with matched settings."""
        return CALIBRATED_NOISE


# 0.96 * sin^2(0.1412) + 0.02 = 0.0390
CALIBRATED_NOISE = NoiseModel(dark_count_prob=0.04, pol_misalignment=0.1412)


@dataclass(frozen=True)
class AttackConfig:
    """Entangling-probe strength ``S`` and an optional displacement override.

    With ``d=None`` the probe meets the qubit between Alice's and Bob's
    dephasers, i.e. at Alice's displacement for the round.
    """

    S: float
    d: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.S <= 1.0):
            raise ValueError("attack S must lie in [0, 1]")
        if self.d is not None and not np.isfinite(self.d):
            raise ValueError("attack displacement must be finite")


@dataclass(frozen=True)
class ProtocolConfig:
    n_rounds: int
    d_values: tuple = DEFAULT_D_VALUES
    mode: GaussianMode = field(default_factory=GaussianMode)
    attack: AttackConfig | None = None
    noise: NoiseModel = field(default_factory=NoiseModel)
    qber_sample_fraction: float = 1.0
    seed: int = 0
    # Bob's physical displacement for each public setting; equals d_values
    # unless a deliberately offset device is being scanned.
    bob_d_values: tuple | None = None
    discard_disclosed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "d_values", tuple(float(d) for d in self.d_values))
        if self.bob_d_values is not None:
            object.__setattr__(self, "bob_d_values", tuple(float(d) for d in self.bob_d_values))
        if int(self.n_rounds) != self.n_rounds or self.n_rounds < 1:
            raise ValueError("n_rounds must be a positive integer")
        if not self.d_values:
            raise ValueError("d_values must be nonempty")
        if not all(np.isfinite(self.d_values)):
            raise ValueError("d_values must be finite")
        if self.bob_d_values is not None and len(self.bob_d_values) != len(self.d_values):
            raise ValueError("bob_d_values must have one entry per public setting")
        if not (0.0 < self.qber_sample_fraction <= 1.0):
            raise ValueError("qber_sample_fraction must lie in (0, 1]")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def bob_displacements(self) -> tuple:
        return self.d_values if self.bob_d_values is None else self.bob_d_values

    def to_dict(self) -> dict:
        out = {
            "n_rounds": int(self.n_rounds),
            "d_values": list(self.d_values),
            "mode": {"w": self.mode.w, "q0": self.mode.q0},
            "attack": None if self.attack is None else asdict(self.attack),
            "noise": asdict(self.noise),
            "qber_sample_fraction": self.qber_sample_fraction,
            "seed": int(self.seed),
            "discard_disclosed": self.discard_disclosed,
        }
        if self.bob_d_values is not None:
            out["bob_d_values"] = list(self.bob_d_values)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ProtocolConfig":
        mode = data.get("mode") or {}
        attack = data.get("attack")
        noise = data.get("noise") or {}
        return cls(
            n_rounds=data["n_rounds"],
            d_values=tuple(data.get("d_values", DEFAULT_D_VALUES)),
            mode=GaussianMode(**mode),
            attack=None if attack is None else AttackConfig(**attack),
            noise=NoiseModel(**noise),
            qber_sample_fraction=data.get("qber_sample_fraction", 1.0),
            seed=data.get("seed", 0),
            bob_d_values=data.get("bob_d_values"),
            discard_disclosed=data.get("discard_disclosed", False),
        )


@dataclass(frozen=True)
class ProtocolRound:
    alice_basis: str
    alice_bit: int
    alice_d: float
    bob_basis: str
    bob_d: float
    bob_bit: int
    eve_bit: int | None = None
    alice_setting: int | None = None
    bob_setting: int | None = None

    @property
    def kept(self) -> bool:
        if self.alice_setting is not None and self.bob_setting is not None:
            same = self.alice_setting == self.bob_setting
        else:
            same = self.alice_d == self.bob_d
        return self.alice_basis == self.bob_basis and same


@dataclass
class RoundTable:
    """Column store of protocol rounds; indexing yields :class:`ProtocolRound`."""

    alice_basis: np.ndarray
    alice_bit: np.ndarray
    alice_setting: np.ndarray
    bob_basis: np.ndarray
    bob_setting: np.ndarray
    bob_bit: np.ndarray
    eve_bit: np.ndarray
    alice_d_values: tuple
    bob_d_values: tuple

    def __len__(self):
        return len(self.alice_bit)

    def __getitem__(self, i) -> ProtocolRound:
        eve = int(self.eve_bit[i])
        return ProtocolRound(
            alice_basis=BASES[self.alice_basis[i]],
            alice_bit=int(self.alice_bit[i]),
            alice_d=self.alice_d_values[self.alice_setting[i]],
            bob_basis=BASES[self.bob_basis[i]],
            bob_d=self.bob_d_values[self.bob_setting[i]],
            bob_bit=int(self.bob_bit[i]),
            eve_bit=None if eve < 0 else eve,
            alice_setting=int(self.alice_setting[i]),
            bob_setting=int(self.bob_setting[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def kept_mask(self) -> np.ndarray:
        return (self.alice_basis == self.bob_basis) & (self.alice_setting == self.bob_setting)


@dataclass
class Key:
    bits: np.ndarray
    round_indices: np.ndarray

    def __len__(self):
        return len(self.bits)

    def to_string(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)


@dataclass
class QberReport:
    total: int
    errors: int
    qber: float
    qber_hv: float
    qber_da: float
    ci95: float
    total_hv: int = 0
    errors_hv: int = 0
    total_da: int = 0
    errors_da: int = 0
    disclosed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @classmethod
    def empty(cls) -> "QberReport":
        nan = float("nan")
        return cls(0, 0, nan, nan, nan, nan)

    def to_dict(self) -> dict:
        def num(x):
            return None if x != x else float(x)

        return {
            "total": self.total,
            "errors": self.errors,
            "qber": num(self.qber),
            "qber_hv": num(self.qber_hv),
            "qber_da": num(self.qber_da),
            "ci95": num(self.ci95),
            "total_hv": self.total_hv,
            "errors_hv": self.errors_hv,
            "total_da": self.total_da,
            "errors_da": self.errors_da,
        }


@dataclass
class ProtocolResult:
    alice_key: Key
    bob_key: Key
    eve_key: Key | None
    report: QberReport
    rounds: RoundTable
    kept: np.ndarray

    @property
    def empty(self) -> bool:
        return len(self.kept) == 0

    def eve_agreement(self) -> dict:
        """Eve's agreement with Bob on kept rounds without a channel error, per basis."""
        if self.eve_key is None:
            return {}
        r = self.rounds
        out = {}
        for b, name in enumerate(BASES):
            idx = self.kept[(r.alice_basis[self.kept] == b)]
            clean = idx[r.alice_bit[idx] == r.bob_bit[idx]]
            n = len(clean)
            agree = int(np.sum(r.eve_bit[clean] == r.bob_bit[clean]))
            out[name] = {"n": n, "agree": agree, "rate": agree / n if n else float("nan")}
        return out


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(0, block))))


def qber_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(1,))))


def sample_measurement(rho, basis: str, rng: np.random.Generator, size=None):
    """Sample Bob's bit for state ``rho`` measured in ``basis`` (0 -> H or D)."""
    rho = clip_spectrum(rho)
    p0 = born_probability(rho, KETS[BIT_LABELS[basis][0]])
    u = rng.random(size)
    bits = (u >= p0).astype(np.uint8)
    return int(bits) if size is None else bits


def apply_noise(bits, noise: NoiseModel, rng: np.random.Generator):
    """Apply misalignment flips and dark-count randomization to ``bits``."""
    bits = np.asarray(bits, dtype=np.uint8)
    n = bits.shape
    flip = rng.random(n) < noise.misalignment_flip
    dark = rng.random(n) < noise.dark_count_prob
    coin = rng.integers(0, 2, size=n, dtype=np.uint8)
    out = bits ^ flip.astype(np.uint8)
    return np.where(dark, coin, out).astype(np.uint8)


def sift(rounds) -> np.ndarray:
    """Indices of rounds whose basis and public decoherence setting both match."""
    if isinstance(rounds, RoundTable):
        return np.flatnonzero(rounds.kept_mask)
    return np.array([i for i, r in enumerate(rounds) if r.kept], dtype=np.int64)


def estimate_qber(alice_key, bob_key, sample_fraction: float, rng: np.random.Generator, bases=None) -> QberReport:
    """Compare a random ``sample_fraction`` of positions of the two keys.

    ``bases`` (0 = HV, 1 = DA per position) enables the per-basis split.
    """
    a = np.asarray(getattr(alice_key, "bits", alice_key), dtype=np.uint8)
    b = np.asarray(getattr(bob_key, "bits", bob_key), dtype=np.uint8)
    if a.shape != b.shape:
        raise ValueError("keys must have equal length")
    if not (0.0 < sample_fraction <= 1.0):
        raise ValueError("sample_fraction must lie in (0, 1]")
    n = len(a)
    m = n if sample_fraction == 1.0 else int(round(sample_fraction * n))
    if m == 0:
        raise ValueError("QBER sample is empty")
    if m == n:
        pos = np.arange(n)
    else:
        pos = np.sort(rng.choice(n, size=m, replace=False))
    err = a[pos] != b[pos]
    errors = int(err.sum())
    q = errors / m

    def split(which):
        if bases is None:
            return 0, 0, float("nan")
        sel = np.asarray(bases)[pos] == which
        t, e = int(sel.sum()), int(err[sel].sum())
        return t, e, (e / t if t else float("nan"))

    t_hv, e_hv, q_hv = split(0)
    t_da, e_da, q_da = split(1)
    return QberReport(
        total=m,
        errors=errors,
        qber=q,
        qber_hv=q_hv,
        qber_da=q_da,
        ci95=1.96 * np.sqrt(q * (1 - q) / m),
        total_hv=t_hv,
        errors_hv=e_hv,
        total_da=t_da,
        errors_da=e_da,
        disclosed=pos,
    )


def _eve_measurements(config: ProtocolConfig):
    """Helstrom projectors per (basis, alice setting); None means a fair coin."""
    out = {}
    attack = config.attack
    for i, d_a in enumerate(config.d_values):
        d_eff = d_a if attack.d is None else attack.d
        states = eve_states_closed_form(attack.S, d_eff, config.mode)
        for basis in BASES:
            try:
                out[basis, i] = helstrom_measurement(*states.pair(basis))
            except HelstromUndefined:
                out[basis, i] = None
    return out


def outcome_table(config: ProtocolConfig) -> np.ndarray:
    """Joint outcome probabilities for every round type.

    Shape ``(2, 2, k, 2, k, 4)`` indexed by alice basis, alice bit, alice
    setting, bob basis, bob setting; the last axis is ``2 * bob_bit + eve_bit``.
    """
    k = len(config.d_values)
    table = np.zeros((2, 2, k, 2, k, 4))
    bob_d = config.bob_displacements
    eve_meas = _eve_measurements(config) if config.attack is not None else None
    for ab, a_basis in enumerate(BASES):
        for bit in (0, 1):
            ket = KETS[BIT_LABELS[a_basis][bit]]
            for i, d_a in enumerate(config.d_values):
                for j, d_b in enumerate(bob_d):
                    if eve_meas is None:
                        rho = bob_reduced_state(ket[0], ket[1], ChannelSetting(d_a, d_b), config.mode)
                        for bb, b_basis in enumerate(BASES):
                            p0 = born_probability(rho, KETS[BIT_LABELS[b_basis][0]])
                            table[ab, bit, i, bb, j] = [p0, 0.0, 1.0 - p0, 0.0]
                        continue
                    joint = attacked_transmission(ket, d_a, d_b, config.attack.S, config.mode, config.attack.d)
                    meas = eve_meas[a_basis, i]
                    for bb, b_basis in enumerate(BASES):
                        row = []
                        for b in (0, 1):
                            sigma = eve_conditional_state(joint, KETS[BIT_LABELS[b_basis][b]])
                            if meas is None:
                                pb = np.trace(sigma).real
                                row += [pb / 2, pb / 2]
                            else:
                                row += [np.trace(m @ sigma).real for m in meas]
                        row = np.clip(row, 0.0, None)
                        table[ab, bit, i, bb, j] = row / row.sum()
    return table


def _run_block(config: ProtocolConfig, cum: np.ndarray, block: int, n: int):
    rng = block_rng(config.seed, block)
    k = len(config.d_values)
    a_basis = rng.integers(0, 2, n, dtype=np.uint8)
    a_bit = rng.integers(0, 2, n, dtype=np.uint8)
    a_set = rng.integers(0, k, n, dtype=np.int64)
    b_basis = rng.integers(0, 2, n, dtype=np.uint8)
    b_set = rng.integers(0, k, n, dtype=np.int64)
    u = rng.random(n)
    rows = cum[a_basis, a_bit, a_set, b_basis, b_set]
    outcome = (u[:, None] >= rows[:, :3]).sum(axis=1)
    b_bit = (outcome // 2).astype(np.uint8)
    e_bit = (outcome % 2).astype(np.int8)
    b_bit = apply_noise(b_bit, config.noise, rng)
    return a_basis, a_bit, a_set, b_basis, b_set, b_bit, e_bit


def simulate_rounds(config: ProtocolConfig, workers: int = 1) -> RoundTable:
    table = outcome_table(config)
    cum = np.cumsum(table, axis=-1)
    sizes = [BLOCK_SIZE] * (config.n_rounds // BLOCK_SIZE)
    if config.n_rounds % BLOCK_SIZE:
        sizes.append(config.n_rounds % BLOCK_SIZE)

    def job(item):
        block, n = item
        return _run_block(config, cum, block, n)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, enumerate(sizes)))
    else:
        parts = [job(item) for item in enumerate(sizes)]
    cols = [np.concatenate(c) for c in zip(*parts)]
    a_basis, a_bit, a_set, b_basis, b_set, b_bit, e_bit = cols
    if config.attack is None:
        e_bit = np.full(len(e_bit), -1, dtype=np.int8)
    return RoundTable(
        alice_basis=a_basis,
        alice_bit=a_bit,
        alice_setting=a_set,
        bob_basis=b_basis,
        bob_setting=b_set,
        bob_bit=b_bit,
        eve_bit=e_bit,
        alice_d_values=config.d_values,
        bob_d_values=config.bob_displacements,
    )


def run_protocol(config: ProtocolConfig, workers: int = 1) -> ProtocolResult:
    """Run the full prepare / transmit / measure / sift / estimate pipeline."""
    rounds = simulate_rounds(config, workers=workers)
    kept = sift(rounds)
    if len(kept) == 0:
        empty = Key(np.zeros(0, dtype=np.uint8), kept)
        eve = empty if config.attack is not None else None
        return ProtocolResult(empty, empty, eve, QberReport.empty(), rounds, kept)

    bases = rounds.alice_basis[kept]
    report = estimate_qber(
        rounds.alice_bit[kept],
        rounds.bob_bit[kept],
        config.qber_sample_fraction,
        qber_rng(config.seed),
        bases=bases,
    )
    key_idx = kept
    if config.discard_disclosed:
        key_idx = np.delete(kept, report.disclosed)
    alice = Key(rounds.alice_bit[key_idx], key_idx)
    bob = Key(rounds.bob_bit[key_idx], key_idx)
    eve = None
    if config.attack is not None:
        eve = Key(rounds.eve_bit[key_idx].astype(np.uint8), key_idx)
    return ProtocolResult(alice, bob, eve, report, rounds, kept)


def expected_qber(config: ProtocolConfig, basis: str | None = None) -> float:
    """Exact QBER over kept rounds implied by :func:`outcome_table` and the noise."""
    table = outcome_table(config)
    k = len(config.d_values)
    bases = range(2) if basis is None else [BASES.index(basis)]
    errs = []
    for ab in bases:
        for bit in (0, 1):
            for s in range(k):
                p = table[ab, bit, s, ab, s]
                p_wrong = p[2:].sum() if bit == 0 else p[:2].sum()
                errs.append(config.noise.error_rate(p_wrong))
    return float(np.mean(errs))
