"""Reproducible problem instances: geometry, path loss, Rayleigh fading, powers.

Channel model: each entry is sqrt(PL(d)) * g with g ~ CN(0, 1) and
PL(d)[dB] = -30 - 10 * alpha * log10(d / 1 m), the usual -30 dB reference
gain at 1 m.  The BS-user direct link is blocked and never generated.

Determinism contract: a Scenario is a pure function of its config.  The
generator is numpy's default PCG64 seeded with config.seed, and the draw
order is fixed:

  1. user positions, one user at a time: radius factor sqrt(U), then angle
     2*pi*U (uniform over the user disk)
  2. RIS-BS matrix H: N*M standard normals for the real part, then N*M for
     the imaginary part, each scaled by 1/sqrt(2)
  3. user-RIS vectors h_r, one user at a time: N real then N imaginary
     standard normals, scaled by 1/sqrt(2)

Anything reading or writing scenario files relies on this order plus the
generator identity (PCG64), so both are part of the file-format contract.
"""

from dataclasses import dataclass, field, asdict

import numpy as np

REFERENCE_GAIN_DB = -30.0  # path-loss at 1 m


class ScenarioError(ValueError):
    """Invalid scenario configuration."""


def dbm_to_watts(x_dbm):
    """10^((x - 30)/10); 0 dBm is 1 mW."""
    x_dbm = float(x_dbm)
    if not np.isfinite(x_dbm):
        raise ScenarioError(f"non-finite dBm value: {x_dbm}")
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


def watts_to_dbm(x_w):
    if x_w <= 0:
        raise ScenarioError(f"non-positive power: {x_w}")
    return 10.0 * np.log10(x_w) + 30.0


def path_loss_linear(d, alpha):
    """Linear-scale path gain at distance d (meters), exponent alpha."""
    if d <= 0:
        raise ScenarioError(f"non-positive link distance: {d}")
    return 10.0 ** ((REFERENCE_GAIN_DB - 10.0 * alpha * np.log10(d)) / 10.0)


@dataclass(frozen=True)
class ScenarioConfig:
    """All knobs of one problem instance.  Defaults mirror the standard
    simulation setup: 8-antenna BS at the origin, 6-element RIS at
    (50, 10) m, 2 users in a 3 m disk around (50, 0) m."""

    M: int = 8                    # BS antennas
    N: int = 6                    # RIS elements
    K: int = 2                    # users
    bs_pos: tuple = (0.0, 0.0)    # meters
    ris_pos: tuple = (50.0, 10.0)
    user_center: tuple = (50.0, 0.0)
    user_radius: float = 3.0
    alpha_bs_ris: float = 2.4     # path-loss exponents
    alpha_ris_user: float = 2.2
    delta2_dbm: float = -80.0     # BS noise power
    sigma2_dbm: float = -70.0     # RIS thermal noise power
    pmax_user_dbm: float = 30.0   # per-user transmit power cap
    pmax_ris_dbm: float = 10.0    # active-RIS amplification budget
    rmin_bps: float = 1.0         # minimum rate, bits/s/Hz
    pc_dbm: float = -10.0         # per-element circuit power
    pdc_dbm: float = -5.0         # per-element DC biasing power (active)
    puser_circ_dbm: float = 5.0   # per-user circuit power
    pbs_dbm: float = 10.0         # BS circuit power
    seed: int = 0                 # 64-bit unsigned

    def validate(self):
        for name in ("M", "N", "K"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ScenarioError(f"{name} must be a positive integer, got {v!r}")
        if self.user_radius < 0:
            raise ScenarioError(f"user_radius must be >= 0, got {self.user_radius}")
        for name in ("alpha_bs_ris", "alpha_ris_user"):
            v = getattr(self, name)
            if not (1.5 <= v <= 6.0):
                raise ScenarioError(f"{name} must lie in [1.5, 6], got {v}")
        if not (0 <= int(self.seed) < 2**64):
            raise ScenarioError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        return self


@dataclass
class Scenario:
    """A concrete problem instance, all powers already in watts.

    H is the N x M RIS-to-BS channel and h_r is K x N (one user-to-RIS
    vector per row); path loss is folded into the entry amplitudes.
    """

    H: np.ndarray
    h_r: np.ndarray
    user_pos: np.ndarray
    delta2_w: float
    sigma2_w: float
    pmax_user_w: float
    pmax_ris_w: float
    rmin_bps: float
    pc_w: float
    pdc_w: float
    puser_circ_w: float
    pbs_w: float
    config: ScenarioConfig = field(repr=False)

    @property
    def M(self):
        return self.H.shape[1]

    @property
    def N(self):
        return self.H.shape[0]

    @property
    def K(self):
        return self.h_r.shape[0]

    @property
    def rmin_bar(self):
        """SINR threshold 2^rmin - 1 implied by the rate floor."""
        return 2.0 ** self.rmin_bps - 1.0


def _complex_normal(rng, shape):
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) / np.sqrt(2.0)


def gen_scenario(cfg: ScenarioConfig) -> Scenario:
    """Generate the instance for cfg.  Same config (seed included) gives a
    bit-identical Scenario."""
    cfg.validate()
    rng = np.random.default_rng(int(cfg.seed))

    center = np.asarray(cfg.user_center, dtype=float)
    user_pos = np.empty((cfg.K, 2))
    for k in range(cfg.K):
        radius = cfg.user_radius * np.sqrt(rng.uniform())
        angle = 2.0 * np.pi * rng.uniform()
        user_pos[k] = center + radius * np.array([np.cos(angle), np.sin(angle)])

    bs = np.asarray(cfg.bs_pos, dtype=float)
    ris = np.asarray(cfg.ris_pos, dtype=float)
    d_bs_ris = float(np.linalg.norm(ris - bs))
    pl_h = path_loss_linear(d_bs_ris, cfg.alpha_bs_ris)
    H = np.sqrt(pl_h) * _complex_normal(rng, (cfg.N, cfg.M))

    h_r = np.empty((cfg.K, cfg.N), dtype=np.complex128)
    for k in range(cfg.K):
        d_k = float(np.linalg.norm(user_pos[k] - ris))
        pl_k = path_loss_linear(d_k, cfg.alpha_ris_user)
        h_r[k] = np.sqrt(pl_k) * _complex_normal(rng, cfg.N)

    return Scenario(
        H=H,
        h_r=h_r,
        user_pos=user_pos,
        delta2_w=dbm_to_watts(cfg.delta2_dbm),
        sigma2_w=dbm_to_watts(cfg.sigma2_dbm),
        pmax_user_w=dbm_to_watts(cfg.pmax_user_dbm),
        pmax_ris_w=dbm_to_watts(cfg.pmax_ris_dbm),
        rmin_bps=float(cfg.rmin_bps),
        pc_w=dbm_to_watts(cfg.pc_dbm),
        pdc_w=dbm_to_watts(cfg.pdc_dbm),
        puser_circ_w=dbm_to_watts(cfg.puser_circ_dbm),
        pbs_w=dbm_to_watts(cfg.pbs_dbm),
        config=cfg,
    )


def config_to_dict(cfg: ScenarioConfig) -> dict:
    d = asdict(cfg)
    for key in ("bs_pos", "ris_pos", "user_center"):
        d[key] = list(d[key])
    return d


def config_from_dict(data: dict) -> ScenarioConfig:
    known = set(ScenarioConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ScenarioError(f"unknown config field: {sorted(unknown)[0]}")
    kwargs = dict(data)
    for key in ("bs_pos", "ris_pos", "user_center"):
        if key in kwargs:
            kwargs[key] = tuple(float(x) for x in kwargs[key])
    try:
        cfg = ScenarioConfig(**kwargs)
    except TypeError as exc:
        raise ScenarioError(f"bad config fields: {exc}") from exc
    return cfg.validate()
