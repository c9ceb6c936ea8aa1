"""Acceptance suite: one test per release criterion, run at fixed tolerances.

Each test prints a single ``[ACCEPTANCE] <name>: PASS`` line when it passes
(visible with ``pytest -s`` or in captured output on failure).
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from capaug.audio import StftParams, Waveform, istft, mix, stft
from capaug.corpus import (FreeSoundExcludedError, ingest_clotho, ingest_fsd50k,
                           ingest_wavcaps, new_manifest, summarize)
from capaug.filtering import FilterRules, filter_captions, normalize, parse_numbered
from capaug.harness import (ExperimentConfig, make_synthetic_eval_set,
                            run_augmentation, run_evaluation)
from capaug.llm import mock_complete
from capaug.metrics import aggregate, sdr, sdri, si_sdr
from capaug.prompts import builtin_template, render
from capaug.reporting import ReportRow, render_report
from capaug.separation import SeparatorSpec
from oracles import sdr_brute, sdri_brute, si_sdr_brute

# first brute-force run of the 20-clip fixture measured a 21.530 dB
# oracle-vs-identity aggregate SDR gap; committed here with headroom
FROZEN_ORACLE_GAP_DB = 20.0
REQUIRED_ORACLE_GAP_DB = 6.0


def _announce(name):
    print(f"[ACCEPTANCE] {name}: PASS")


def test_metric_oracle_equivalence():
    start = time.monotonic()
    rng = np.random.default_rng(20240001)
    for _ in range(1000):
        ref = rng.standard_normal(1024)
        est = ref + rng.uniform(0.05, 2.0) * rng.standard_normal(1024)
        mixture = ref + rng.uniform(0.05, 2.0) * rng.standard_normal(1024)
        assert abs(sdr(est, ref) - sdr_brute(est, ref)) <= 1e-9
        assert abs(sdri(est, mixture, ref) - sdri_brute(est, mixture, ref)) <= 1e-9
        assert abs(si_sdr(est, ref) - si_sdr_brute(est, ref)) <= 1e-9
    elapsed = time.monotonic() - start
    assert elapsed < 5.0, f"runtime {elapsed:.2f}s exceeds 5s budget"
    _announce("metric oracle equivalence (1000 pairs, 1e-9 dB)")


def test_si_sdr_scale_invariance():
    rng = np.random.default_rng(20240002)
    for _ in range(100):
        ref = rng.standard_normal(1024)
        est = ref + rng.uniform(0.05, 1.0) * rng.standard_normal(1024)
        base = si_sdr(est, ref)
        for c in (1e-3, 0.5, 2.0, 1e3):
            assert abs(si_sdr(c * est, ref) - base) <= 1e-9
    _announce("SI-SDR scale invariance (c in {1e-3, 0.5, 2, 1e3}, 1e-9 dB)")


def _identity_oracle_eval(epsilon):
    items = make_synthetic_eval_set(20, seed=0, sample_rate=16000, duration_s=4.0,
                                    snr_db=0.0)
    config = ExperimentConfig(
        separators=[("identity", SeparatorSpec(kind="identity")),
                    ("oracle", SeparatorSpec(kind="oracle_irm"))],
        epsilon=epsilon)
    return run_evaluation(config, items)


def test_identity_separator_null():
    exact = _identity_oracle_eval(epsilon=0.0)
    assert exact.separators["identity"].aggregate.sdri_db == 0.0
    eps_result = _identity_oracle_eval(epsilon=1e-8)
    assert abs(eps_result.separators["identity"].aggregate.sdri_db) <= 1e-7
    _announce("identity-separator null (exact at eps=0, <=1e-7 dB at eps=1e-8)")


def test_oracle_ordering_on_synthetic_clips():
    start = time.monotonic()
    result = _identity_oracle_eval(epsilon=1e-8)
    identity_sdr = result.separators["identity"].aggregate.sdr_db
    oracle_sdr = result.separators["oracle"].aggregate.sdr_db
    gap = oracle_sdr - identity_sdr
    assert gap >= REQUIRED_ORACLE_GAP_DB
    assert gap >= FROZEN_ORACLE_GAP_DB
    elapsed = time.monotonic() - start
    assert elapsed < 30.0, f"runtime {elapsed:.2f}s exceeds 30s budget"
    _announce(f"oracle ordering (gap {gap:.3f} dB >= {REQUIRED_ORACLE_GAP_DB} dB)")


def test_stft_reconstruction():
    params = StftParams()
    rng = np.random.default_rng(20240003)
    for _ in range(10):
        x = Waveform(rng.standard_normal(8192) * 0.25, 16000)
        y = istft(stft(x, params), params, length=len(x), sample_rate=16000)
        rms = math.sqrt(float(np.mean((y.samples - x.samples) ** 2)))
        assert rms <= 1e-6
    _announce("STFT reconstruction (RMS <= 1e-6 over 10 signals)")


def test_mix_snr_exactness():
    rng = np.random.default_rng(20240004)
    target = Waveform(0.2 * rng.standard_normal(16000), 16000)
    interference = Waveform(0.2 * rng.standard_normal(16000), 16000)
    for snr_db in range(-10, 11):
        result = mix(target, interference, float(snr_db))
        achieved = 10.0 * math.log10(result.target.energy()
                                     / result.interference.energy())
        assert abs(achieved - snr_db) <= 1e-9
    _announce("mix SNR exactness (1 dB grid over [-10, +10], 1e-9 dB)")


def test_filter_properties_over_mock_corpus():
    rules = FilterRules()
    template = builtin_template("modified_wavcaps")
    captions = ["a dog barks", "rain falls on a roof", "an engine hums",
                "a crowd cheers"]
    for i in range(10_000):
        prompt = render(template, captions[i % len(captions)] + f" variant {i}")
        candidates = parse_numbered(mock_complete(prompt, seed=i % 17).text)
        report = filter_captions(candidates, rules)
        assert sorted(report.accepted + [c for c, _ in report.rejected]) == \
            sorted(candidates)
        assert len(report.accepted) <= 4
        keys = [normalize(c) for c in report.accepted]
        assert len(keys) == len(set(keys))
        for caption in report.accepted:
            assert all(normalize(token) != "heard" for token in caption.split())
        again = filter_captions(report.accepted, rules)
        assert again.accepted == report.accepted and again.rejected == []
    _announce("filter properties (idempotence, conservation, budget over 1e4 responses)")


def test_end_to_end_determinism_against_golden(tmp_path, data_dir, golden_dir):
    config = ExperimentConfig(
        manifest_path=str(data_dir / "synthetic_manifest.json"),
        prompt_kind="modified_wavcaps", requested_count=4,
        use_mock_llm=True, mock_seed=0, seed=0,
        out_dir=str(tmp_path / "run"))
    run_augmentation(config)
    out = Path(config.out_dir)
    produced_manifest = (out / "manifest.json").read_bytes()
    produced_stats = (out / "augment_stats.json").read_bytes()
    assert produced_manifest == (golden_dir / "augmented_manifest.json").read_bytes()
    assert produced_stats == (golden_dir / "augment_stats.json").read_bytes()

    # resumed rerun rewrites identical bytes
    run_augmentation(config)
    assert (out / "manifest.json").read_bytes() == produced_manifest
    assert (out / "augment_stats.json").read_bytes() == produced_stats
    _announce("end-to-end determinism (golden manifest byte-for-byte, resume clean)")


def test_report_goldens(golden_dir):
    prompt_rows = [
        ReportRow.from_values("Baseline (no augmentation)", "Clotho v2", "✗",
                              3.079, 3.044, 1.105),
        ReportRow.from_values("Simple Prompt", "Clotho v2", "✓",
                              3.011, 2.976, 1.295),
        ReportRow.from_values("Modification of Clotho Prompt", "Clotho v2", "✓",
                              3.133, 3.098, 1.361),
        ReportRow.from_values("Modification of WavCaps Prompt", "Clotho v2", "✓",
                              3.320, 3.285, 1.505),
    ]
    prompt_report = render_report(prompt_rows)
    assert prompt_report == (golden_dir / "prompt_comparison_report.md").read_text()
    assert "3.320 3.285 1.505" in prompt_report

    model_rows = [
        ReportRow.from_values("Baseline", "Baseline Dev Set", "✗", 5.817, 5.782, 3.837),
        ReportRow.from_values("Baseline", "Baseline Dev Set", "✓", 6.547, 6.512, 4.636),
        ReportRow.from_values("Baseline", "Baseline Dev Set + WavCaps", "✗",
                              7.500, 7.465, 5.795),
        ReportRow.from_values("Baseline", "Baseline Dev Set + WavCaps", "✓",
                              7.750, 7.715, 6.161),
        ReportRow.from_values("AudioSep", "-", "-", 8.195, 8.160, 6.708),
        ReportRow.from_values("AudioSep", "Baseline Dev Set + WavCaps", "✗",
                              8.370, 8.335, 7.109),
        ReportRow.from_values("AudioSep", "Baseline Dev Set + WavCaps", "✓",
                              8.459, 8.424, 7.072),
        ReportRow.from_values("Ensemble (4+5+6+7)", "-", "-", 8.599, 8.564, 7.497),
        ReportRow.from_values("Ensemble (3+4+5+6+7)", "-", "-", 8.610, 8.575, 7.493),
    ]
    model_report = render_report(model_rows)
    assert model_report == (golden_dir / "model_comparison_report.md").read_text()
    assert "5.817 5.782 3.837" in model_report
    _announce("report goldens (published comparison tables reproduced byte-for-byte)")


def test_corpus_counts_and_freesound_exclusion(data_dir):
    clotho = ingest_clotho(data_dir / "clotho_fixture.csv")
    fsd = ingest_fsd50k(data_dir / "fsd50k_fixture.csv")
    wavcaps = ingest_wavcaps(data_dir / "wavcaps_soundbible_fixture.json", "SoundBible")
    rows = {r.source_dataset: r for r in summarize(new_manifest(clotho + fsd + wavcaps))}
    # hand-counted fixture totals
    assert (rows["ClothoV2"].num_clips, rows["ClothoV2"].num_original_captions) == (2, 10)
    assert (rows["FSD50K"].num_clips, rows["FSD50K"].num_original_captions) == (3, 3)
    assert (rows["WavCapsSoundBible"].num_clips,
            rows["WavCapsSoundBible"].num_original_captions) == (3, 3)
    assert (rows["Total"].num_clips, rows["Total"].num_original_captions) == (8, 16)

    with pytest.raises(FreeSoundExcludedError):
        ingest_wavcaps(data_dir / "wavcaps_soundbible_fixture.json", "FreeSound")
    _announce("corpus counts (fixture totals match hand counts, FreeSound refused)")
