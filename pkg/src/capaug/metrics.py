"""Separation-quality metrics: SDR, SDRi, and SI-SDR, plus batch aggregation.

SDR here is the plain energy-ratio definition
``10*log10((sum s^2 + eps) / (sum (s - s_hat)^2 + eps))``, not the
projection-based BSSEval variant; the two differ and the choice matters when
comparing numbers across toolkits. SI-SDR first projects the estimate onto
the reference, which makes it invariant to positive rescaling of the
estimate. The library default is ``eps=0`` (exact, may yield infinities);
the evaluation harness passes ``eps=1e-8`` to keep aggregates finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .audio import Waveform

DEFAULT_CLAMP_DB = 60.0

Signal = Union[Waveform, np.ndarray, list]


@dataclass(frozen=True)
class MetricsTriple:
    sdr_db: float
    sdri_db: float
    si_sdr_db: float

    def clamped(self, clamp_db: float) -> "MetricsTriple":
        return MetricsTriple(
            sdr_db=_clamp(self.sdr_db, clamp_db),
            sdri_db=_clamp(self.sdri_db, clamp_db),
            si_sdr_db=_clamp(self.si_sdr_db, clamp_db),
        )


def _clamp(value: float, clamp_db: float) -> float:
    return min(max(value, -clamp_db), clamp_db)


def _samples(signal: Signal) -> np.ndarray:
    if isinstance(signal, Waveform):
        return signal.samples
    return np.asarray(signal, dtype=np.float64)


def _check_aligned(*signals: Signal) -> list[np.ndarray]:
    arrays = [_samples(s) for s in signals]
    lengths = {a.size for a in arrays}
    if len(lengths) != 1:
        raise ValueError(f"length mismatch: {sorted(lengths)}")
    rates = {s.sample_rate for s in signals if isinstance(s, Waveform)}
    if len(rates) > 1:
        raise ValueError(f"sample rate mismatch: {sorted(rates)}")
    return arrays


def sdr(estimate: Signal, reference: Signal, epsilon: float = 0.0) -> float:
    """Energy-ratio signal-to-distortion ratio in dB."""
    est, ref = _check_aligned(estimate, reference)
    ref_energy = float(np.sum(ref ** 2))
    err_energy = float(np.sum((ref - est) ** 2))
    if epsilon == 0.0:
        if ref_energy == 0.0:
            raise ValueError("zero-energy reference with epsilon=0")
        if err_energy == 0.0:
            return math.inf
    return 10.0 * math.log10((ref_energy + epsilon) / (err_energy + epsilon))


def sdri(estimate: Signal, mixture: Signal, reference: Signal,
         epsilon: float = 0.0) -> float:
    """SDR improvement of the estimate over the unprocessed mixture."""
    _check_aligned(estimate, mixture, reference)
    return sdr(estimate, reference, epsilon) - sdr(mixture, reference, epsilon)


def si_sdr(estimate: Signal, reference: Signal, epsilon: float = 0.0) -> float:
    """Scale-invariant SDR in dB.

    The reference is rescaled by ``<s_hat, s> / <s, s>`` before the energy
    ratio is formed, so any positive gain applied to the estimate cancels.
    An estimate orthogonal to the reference evaluates to -inf when eps=0.
    """
    est, ref = _check_aligned(estimate, reference)
    ref_energy = float(np.sum(ref ** 2))
    if ref_energy == 0.0:
        raise ValueError("zero-energy reference")
    alpha = float(np.dot(est, ref)) / ref_energy
    projection = alpha * ref
    target_energy = float(np.sum(projection ** 2))
    err_energy = float(np.sum((est - projection) ** 2))
    if epsilon == 0.0:
        if target_energy == 0.0:
            return -math.inf
        if err_energy == 0.0:
            return math.inf
    return 10.0 * math.log10((target_energy + epsilon) / (err_energy + epsilon))


def compute_triple(estimate: Signal, mixture: Signal, reference: Signal,
                   epsilon: float = 0.0) -> MetricsTriple:
    return MetricsTriple(
        sdr_db=sdr(estimate, reference, epsilon),
        sdri_db=sdri(estimate, mixture, reference, epsilon),
        si_sdr_db=si_sdr(estimate, reference, epsilon),
    )


def aggregate(triples: list[MetricsTriple],
              clamp_db: float = DEFAULT_CLAMP_DB) -> MetricsTriple:
    """Clamp per-clip values to [-clamp_db, clamp_db], then average.

    Clamping keeps a single perfect (infinite-dB) clip from dominating the
    mean; the clamp value is part of every report.
    """
    if not triples:
        raise ValueError("cannot aggregate an empty list")
    clamped = [t.clamped(clamp_db) for t in triples]
    n = len(clamped)
    return MetricsTriple(
        sdr_db=sum(t.sdr_db for t in clamped) / n,
        sdri_db=sum(t.sdri_db for t in clamped) / n,
        si_sdr_db=sum(t.si_sdr_db for t in clamped) / n,
    )
