"""Pluggable separators and waveform-domain weighted-sum ensembling.

Three separator kinds are supported:

* ``identity`` returns the mixture untouched (the null baseline);
* ``oracle_irm`` applies an ideal ratio mask built from the true stems, an
  upper-bound reference that needs the target/interference pair;
* ``external`` shells out to any command that reads a mixture WAV and a
  caption and writes an estimate WAV, which is how trained checkpoints plug in.
"""

from __future__ import annotations

import json
import logging
import shlex
import subprocess
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import StftParams, Waveform, istft, read_wav, stft, write_wav

logger = logging.getLogger(__name__)

MASK_EPS = 1e-12
DEFAULT_EXTERNAL_TIMEOUT_S = 120.0
EXTERNAL_PLACEHOLDERS = ("{MIXTURE}", "{CAPTION}", "{OUT}")
EXTERNAL_PROCESS_BOUND = 2

# caps concurrent external subprocesses across all callers in this process
_external_slots = threading.BoundedSemaphore(EXTERNAL_PROCESS_BOUND)

KIND_IDENTITY = "identity"
KIND_ORACLE_IRM = "oracle_irm"
KIND_EXTERNAL = "external"


class ExternalSeparatorError(RuntimeError):
    """External command failed, timed out, or produced unreadable output."""


@dataclass(frozen=True)
class SeparatorSpec:
    kind: str
    stft_params: StftParams = field(default_factory=StftParams)
    command_template: str = ""
    timeout_s: float = DEFAULT_EXTERNAL_TIMEOUT_S

    def __post_init__(self):
        if self.kind not in (KIND_IDENTITY, KIND_ORACLE_IRM, KIND_EXTERNAL):
            raise ValueError(f"unknown separator kind {self.kind!r}")
        if self.kind == KIND_EXTERNAL:
            missing = [p for p in EXTERNAL_PLACEHOLDERS if p not in self.command_template]
            if missing:
                raise ValueError(f"external command template is missing {missing}")

    def to_dict(self) -> dict:
        doc: dict = {"kind": self.kind}
        if self.kind == KIND_ORACLE_IRM:
            doc["stft"] = {"window_size": self.stft_params.window_size,
                           "hop": self.stft_params.hop}
        if self.kind == KIND_EXTERNAL:
            doc["command"] = self.command_template
            doc["timeout_s"] = self.timeout_s
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SeparatorSpec":
        kind = doc["kind"]
        kwargs: dict = {"kind": kind}
        if "stft" in doc:
            kwargs["stft_params"] = StftParams(**doc["stft"])
        if "command" in doc:
            kwargs["command_template"] = doc["command"]
        if "timeout_s" in doc:
            kwargs["timeout_s"] = doc["timeout_s"]
        return cls(**kwargs)

    @classmethod
    def from_json_file(cls, path) -> "SeparatorSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class EnsembleWeights:
    weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if not self.weights:
            raise ValueError("weights must be non-empty")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        if sum(self.weights) <= 0:
            raise ValueError("at least one weight must be positive")

    def normalized(self) -> tuple[float, ...]:
        total = sum(self.weights)
        return tuple(w / total for w in self.weights)


def _oracle_irm(mixture: Waveform, target: Waveform, interference: Waveform,
                params: StftParams) -> Waveform:
    mask = irm_mask(target, interference, params)
    masked = mask * stft(mixture, params)
    return istft(masked, params, length=len(mixture), sample_rate=mixture.sample_rate)


def irm_mask(target: Waveform, interference: Waveform,
             params: StftParams | None = None) -> np.ndarray:
    """Ideal ratio mask |S_t|^2 / (|S_t|^2 + |S_i|^2 + eps), values in [0, 1]."""
    params = params or StftParams()
    p_t = np.abs(stft(target, params)) ** 2
    p_i = np.abs(stft(interference, params)) ** 2
    return p_t / (p_t + p_i + MASK_EPS)


def _run_external(spec: SeparatorSpec, mixture: Waveform, caption: str) -> Waveform:
    with tempfile.TemporaryDirectory(prefix="capaug_sep_") as tmp:
        mixture_path = str(Path(tmp) / "mixture.wav")
        out_path = str(Path(tmp) / "estimate.wav")
        write_wav(mixture_path, mixture, encoding="float32")
        # split first, substitute per token: captions with spaces stay one argv entry
        argv = []
        for token in shlex.split(spec.command_template):
            token = token.replace("{MIXTURE}", mixture_path)
            token = token.replace("{CAPTION}", caption)
            token = token.replace("{OUT}", out_path)
            argv.append(token)
        try:
            with _external_slots:
                proc = subprocess.run(argv, capture_output=True, text=True,
                                      timeout=spec.timeout_s)
        except subprocess.TimeoutExpired as exc:
            raise ExternalSeparatorError(
                f"external separator timed out after {spec.timeout_s}s") from exc
        except OSError as exc:
            raise ExternalSeparatorError(f"cannot run external separator: {exc}") from exc
        if proc.returncode != 0:
            raise ExternalSeparatorError(
                f"external separator exited with {proc.returncode}: "
                f"{proc.stderr.strip()[-500:]}")
        try:
            estimate = read_wav(out_path)
        except Exception as exc:
            raise ExternalSeparatorError(f"cannot read separator output: {exc}") from exc
    if len(estimate) != len(mixture):
        logger.warning("external estimate length %d != mixture length %d; adjusting",
                       len(estimate), len(mixture))
        samples = estimate.samples
        if samples.size > len(mixture):
            samples = samples[:len(mixture)]
        else:
            samples = np.pad(samples, (0, len(mixture) - samples.size))
        estimate = Waveform(samples, estimate.sample_rate)
    return estimate


def separate(spec: SeparatorSpec, mixture: Waveform, caption: str,
             oracle_sources: tuple[Waveform, Waveform] | None = None) -> Waveform:
    """Run one separator on one mixture and return the estimated target."""
    if spec.kind == KIND_IDENTITY:
        return mixture
    if spec.kind == KIND_ORACLE_IRM:
        if oracle_sources is None:
            raise ValueError("oracle_irm requires oracle_sources=(target, interference)")
        target, interference = oracle_sources
        for stem in (target, interference):
            if len(stem) != len(mixture) or stem.sample_rate != mixture.sample_rate:
                raise ValueError("oracle sources must align with the mixture")
        return _oracle_irm(mixture, target, interference, spec.stft_params)
    return _run_external(spec, mixture, caption)


def ensemble(estimates: list[Waveform],
             weights: EnsembleWeights | list[float] | None = None) -> Waveform:
    """Weighted sum of estimates with weights normalized to sum to one."""
    if not estimates:
        raise ValueError("need at least one estimate")
    if weights is None:
        weights = EnsembleWeights((1.0,) * len(estimates))
    elif not isinstance(weights, EnsembleWeights):
        weights = EnsembleWeights(tuple(weights))
    if len(weights.weights) != len(estimates):
        raise ValueError("one weight per estimate is required")
    rates = {e.sample_rate for e in estimates}
    lengths = {len(e) for e in estimates}
    if len(rates) != 1 or len(lengths) != 1:
        raise ValueError("estimates must share length and sample rate")
    out = np.zeros(lengths.pop())
    for w, est in zip(weights.normalized(), estimates):
        out += w * est.samples
    return Waveform(out, rates.pop())
