"""Independent re-verification of accepted SOS certificates.

Every certificate that a construction relies on is recorded with the
inequality it claims (``target >= 0`` on a product of level sets or annuli).
The audit re-expands the certificate coefficient by coefficient and samples
the claim at points drawn inside its domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .poly import Polynomial
from .sos import SosCertificate, check_certificate

SAMPLE_COUNT = 10_000
SAMPLE_TOL = 1e-5
COEFF_TOL = 1e-6


@dataclass
class LevelBand:
    """lo <= V(x_block) <= hi for the variables of one block (lo == hi for a boundary)."""

    V: Polynomial
    var_indices: list[int]
    lo: float
    hi: float


@dataclass
class Claim:
    target: Polynomial
    domain: list[LevelBand]
    free_vars: list[int] = field(default_factory=list)  # sampled in a box, rarely used


@dataclass
class AuditRecord:
    label: str
    residual: float
    min_target: float
    samples: int

    @property
    def passed(self) -> bool:
        return self.residual <= COEFF_TOL and self.min_target >= -SAMPLE_TOL


def radial_level_points(V: Polynomial, idx: Sequence[int], levels: np.ndarray, rng: np.random.Generator,
                        r_max: float = 1e3) -> np.ndarray:
    """Points x (one per level) with V(x) = level along random directions.

    Each direction is scaled by bisection on the first crossing of the level,
    which assumes V grows along rays near the origin.
    """
    n = len(idx)
    k = len(levels)
    U = rng.normal(size=(k, n))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    cols = list(idx)

    def val(s):
        return V.evaluate_array(U * s[:, None], cols)

    hi = np.full(k, 1e-3)
    for _ in range(60):
        grow = (val(hi) < levels) & (hi < r_max)
        if not grow.any():
            break
        hi = np.where(grow, hi * 2.0, hi)
    lo = np.zeros(k)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        below = val(mid) < levels
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    s = np.where(levels > 0, 0.5 * (lo + hi), 0.0)
    return U * s[:, None]


def sample_domain(claim: Claim, n_universe: int, count: int, rng: np.random.Generator) -> np.ndarray:
    X = np.zeros((count, n_universe))
    for band in claim.domain:
        if band.hi == band.lo:
            levels = np.full(count, band.lo)
        else:
            levels = rng.uniform(band.lo, band.hi, size=count)
        X[:, band.var_indices] = radial_level_points(band.V, band.var_indices, levels, rng)
    return X


class CertificateRegistry:
    """Collects (label, certificate, claim) triples; ``audit`` checks them all."""

    def __init__(self, samples: int = SAMPLE_COUNT, seed: int = 0):
        self.entries: list[tuple[str, SosCertificate, Claim]] = []
        self.samples = samples
        self.seed = seed

    def add(self, label: str, cert: SosCertificate | None, claim: Claim) -> None:
        if cert is not None:
            self.entries.append((label, cert, claim))

    def __len__(self) -> int:
        return len(self.entries)

    def audit(self, samples: int | None = None) -> list[AuditRecord]:
        out = []
        for k, (label, cert, claim) in enumerate(self.entries):
            out.append(audit_one(label, cert, claim, samples or self.samples, self.seed + k))
        return out


def audit_one(label: str, cert: SosCertificate, claim: Claim, samples: int = SAMPLE_COUNT, seed: int = 0) -> AuditRecord:
    res = check_certificate(cert)
    rng = np.random.default_rng(seed)
    X = sample_domain(claim, len(claim.target.universe), samples, rng)
    vals = claim.target.evaluate_array(X)
    min_t = float(np.min(vals)) if len(vals) else math.inf
    return AuditRecord(label, res, min_t, samples)
