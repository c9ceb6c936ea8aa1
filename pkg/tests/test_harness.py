import json
import math
from pathlib import Path

import numpy as np
import pytest

from capaug.corpus import new_manifest, read_manifest
from capaug.harness import (ConfigError, EnsembleDef, EvalItem, ExperimentConfig,
                            HarnessError, make_synthetic_eval_set, run_augmentation,
                            run_evaluation)
from capaug.llm import LlmError, RawResponse, mock_complete
from capaug.separation import SeparatorSpec


def _mock_config(tmp_path=None, **kwargs):
    defaults = dict(use_mock_llm=True, mock_seed=0, seed=0)
    if tmp_path is not None:
        defaults["out_dir"] = str(tmp_path / "run")
    defaults.update(kwargs)
    return ExperimentConfig(**defaults)


def _stub_response(text):
    return RawResponse(text=text, model_id="stub", latency_s=0.0, attempt=1)


class TestConfig:
    def test_round_trip_and_hash_stability(self):
        config = ExperimentConfig(
            manifest_path="m.json",
            prompt_kind="modified_clotho",
            requested_count=3,
            separators=[("identity", SeparatorSpec(kind="identity")),
                        ("oracle", SeparatorSpec(kind="oracle_irm"))],
            ensembles={"both": EnsembleDef(members=("identity", "oracle"),
                                           weights=(0.5, 0.5))},
            provenance={"optimizer": "Adam", "learning_rate": 1e-3,
                        "batch_size": 64, "epochs": 100},
        )
        rebuilt = ExperimentConfig.from_dict(config.to_dict())
        assert rebuilt == config
        assert rebuilt.hash() == config.hash()
        assert len(config.hash()) == 64

    def test_duplicate_separator_names_rejected(self):
        with pytest.raises(ConfigError, match="unique"):
            ExperimentConfig(separators=[("a", SeparatorSpec(kind="identity")),
                                         ("a", SeparatorSpec(kind="identity"))])

    def test_unknown_ensemble_member_rejected(self):
        with pytest.raises(ConfigError, match="unknown separators"):
            ExperimentConfig(separators=[("a", SeparatorSpec(kind="identity"))],
                             ensembles={"e": EnsembleDef(members=("a", "ghost"))})

    def test_mismatched_ensemble_weights_rejected(self):
        with pytest.raises(ConfigError, match="one weight per member"):
            ExperimentConfig(separators=[("a", SeparatorSpec(kind="identity"))],
                             ensembles={"e": EnsembleDef(members=("a",),
                                                         weights=(0.5, 0.5))})

    def test_unknown_prompt_kind_rejected(self):
        with pytest.raises(ConfigError, match="prompt kind"):
            ExperimentConfig(prompt_kind="fancy")

    def test_backend_required(self):
        with pytest.raises(ConfigError, match="mock"):
            ExperimentConfig(use_mock_llm=False, llm=None)

    def test_from_json_file_errors(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{broken")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json_file(path)


class TestRunAugmentation:
    def test_deterministic_outputs(self, tmp_path, synthetic_manifest):
        results = []
        for name in ("a", "b"):
            out = tmp_path / name
            config = _mock_config(manifest_path=None, out_dir=str(out))
            run_augmentation(config, manifest=synthetic_manifest)
            results.append((out / "manifest.json").read_bytes()
                           + (out / "augment_stats.json").read_bytes())
        assert results[0] == results[1]

    def test_accepted_counts_within_budget(self, synthetic_manifest):
        manifest, stats = run_augmentation(_mock_config(), manifest=synthetic_manifest)
        assert len(stats.per_clip) == 10
        for clip_stats in stats.per_clip.values():
            assert 0 <= clip_stats.accepted <= 4
        augmented_total = sum(len(e.augmented_captions) for e in manifest.entries)
        totals = stats.totals()
        assert augmented_total == totals["accepted"] - totals["attach_skipped"]

    def test_per_clip_conservation(self, synthetic_manifest):
        _, stats = run_augmentation(_mock_config(), manifest=synthetic_manifest)
        for clip_stats in stats.per_clip.values():
            assert clip_stats.parsed == clip_stats.accepted + \
                sum(clip_stats.rejected.values())
            assert not clip_stats.gateway_failed

    def test_metadata_updated(self, synthetic_manifest):
        config = _mock_config(prompt_kind="modified_wavcaps", seed=5, mock_seed=5)
        manifest, _ = run_augmentation(config, manifest=synthetic_manifest)
        assert manifest.metadata["prompt_kind"] == "modified_wavcaps"
        assert manifest.metadata["seed"] == 5
        assert manifest.metadata["created_at"] == \
            synthetic_manifest.metadata["created_at"]

    def test_empty_manifest(self):
        manifest, stats = run_augmentation(_mock_config(), manifest=new_manifest([]))
        assert manifest.entries == []
        assert stats.per_clip == {}

    def test_all_failure_responses(self, synthetic_manifest):
        stub = lambda prompt: _stub_response("① Failure\n② Failure\n③ Failure")
        manifest, stats = run_augmentation(_mock_config(), manifest=synthetic_manifest,
                                           complete_fn=stub)
        totals = stats.totals()
        assert totals["accepted"] == 0
        assert totals["rejected"] == {"Failure": 30}
        assert all(not e.augmented_captions for e in manifest.entries)

    def test_partial_gateway_failures_recorded(self, synthetic_manifest):
        def flaky(prompt):
            if "dog" in prompt or "kettle" in prompt.lower():
                raise LlmError("boom")
            return mock_complete(prompt, 0)

        manifest, stats = run_augmentation(_mock_config(), manifest=synthetic_manifest,
                                           complete_fn=flaky)
        failed = stats.gateway_failures()
        assert failed
        assert len(failed) / len(stats.per_clip) <= 0.5
        for clip_id in failed:
            assert stats.per_clip[clip_id].parsed == 0
            assert stats.per_clip[clip_id].error == "boom"
            assert manifest.get(clip_id).augmented_captions == []

    def test_abort_when_most_clips_fail(self, synthetic_manifest):
        def broken(prompt):
            raise LlmError("down")

        with pytest.raises(HarnessError, match="aborting"):
            run_augmentation(_mock_config(), manifest=synthetic_manifest,
                             complete_fn=broken)

    def test_failure_manifest_written(self, tmp_path, synthetic_manifest):
        def flaky(prompt):
            if "kettle" in prompt.lower():
                raise LlmError("boom")
            return mock_complete(prompt, 0)

        config = _mock_config(tmp_path)
        run_augmentation(config, manifest=synthetic_manifest, complete_fn=flaky)
        failures = json.loads((Path(config.out_dir) / "failures.json").read_text())
        assert failures["failed_clips"] == ["clip_000"]

    def test_resume_skips_completed_clips(self, tmp_path, synthetic_manifest):
        config = _mock_config(tmp_path)
        run_augmentation(config, manifest=synthetic_manifest)
        out = Path(config.out_dir)
        first = {p.name: p.read_bytes() for p in out.iterdir()}

        calls = []

        def counting(prompt):
            calls.append(prompt)
            return mock_complete(prompt, 0)

        run_augmentation(config, manifest=synthetic_manifest, complete_fn=counting)
        second = {p.name: p.read_bytes() for p in out.iterdir()}
        assert calls == []
        assert first == second

    def test_resume_retries_failed_clips(self, tmp_path, synthetic_manifest):
        def flaky(prompt):
            if "kettle" in prompt.lower():
                raise LlmError("boom")
            return mock_complete(prompt, 0)

        config = _mock_config(tmp_path)
        run_augmentation(config, manifest=synthetic_manifest, complete_fn=flaky)

        calls = []

        def healthy(prompt):
            calls.append(prompt)
            return mock_complete(prompt, 0)

        manifest, stats = run_augmentation(config, manifest=synthetic_manifest,
                                           complete_fn=healthy)
        assert len(calls) == 1  # only the failed clip is reprocessed
        assert stats.gateway_failures() == []

    def test_no_resume_reprocesses_everything(self, tmp_path, synthetic_manifest):
        config = _mock_config(tmp_path)
        run_augmentation(config, manifest=synthetic_manifest)
        calls = []

        def counting(prompt):
            calls.append(prompt)
            return mock_complete(prompt, 0)

        run_augmentation(config, manifest=synthetic_manifest, complete_fn=counting,
                         resume=False)
        assert len(calls) == 10

    def test_manifest_path_loading(self, tmp_path, data_dir):
        config = _mock_config(manifest_path=str(data_dir / "synthetic_manifest.json"))
        manifest, stats = run_augmentation(config)
        assert len(stats.per_clip) == 10

    def test_missing_manifest_config_error(self):
        with pytest.raises(ConfigError):
            run_augmentation(_mock_config(manifest_path=None))


def _eval_config(tmp_path=None, epsilon=1e-8, **kwargs):
    separators = kwargs.pop("separators", [
        ("identity", SeparatorSpec(kind="identity")),
        ("oracle", SeparatorSpec(kind="oracle_irm")),
    ])
    out_dir = str(tmp_path / "eval") if tmp_path is not None else None
    return ExperimentConfig(separators=separators, epsilon=epsilon,
                            out_dir=out_dir, **kwargs)


class TestRunEvaluation:
    def test_identity_aggregate_sdri_is_zero(self):
        items = make_synthetic_eval_set(5, seed=0, duration_s=0.5)
        result = run_evaluation(_eval_config(epsilon=0.0), items)
        assert result.separators["identity"].aggregate.sdri_db == 0.0
        result_eps = run_evaluation(_eval_config(epsilon=1e-8), items)
        assert abs(result_eps.separators["identity"].aggregate.sdri_db) <= 1e-7

    def test_oracle_strictly_beats_identity(self):
        items = make_synthetic_eval_set(5, seed=1, duration_s=0.5)
        result = run_evaluation(_eval_config(), items)
        assert result.separators["oracle"].aggregate.sdr_db > \
            result.separators["identity"].aggregate.sdr_db

    def test_ensemble_of_identity_twins_equals_identity(self, tmp_path):
        config = ExperimentConfig(
            separators=[("id1", SeparatorSpec(kind="identity")),
                        ("id2", SeparatorSpec(kind="identity"))],
            ensembles={"both": EnsembleDef(members=("id1", "id2"))},
        )
        items = make_synthetic_eval_set(4, seed=2, duration_s=0.5)
        result = run_evaluation(config, items)
        assert result.separators["both"].aggregate == \
            result.separators["id1"].aggregate

    def test_artifacts_and_referential_integrity(self, tmp_path):
        config = ExperimentConfig(
            separators=[("identity", SeparatorSpec(kind="identity")),
                        ("oracle", SeparatorSpec(kind="oracle_irm"))],
            ensembles={"pair": EnsembleDef(members=("identity", "oracle"),
                                           weights=(0.4, 0.6))},
            out_dir=str(tmp_path / "eval"),
        )
        items = make_synthetic_eval_set(3, seed=3, duration_s=0.5)
        result = run_evaluation(config, items)
        out = Path(config.out_dir)
        for name, sep_result in result.separators.items():
            for score in sep_result.per_clip:
                assert (out / "estimates" / name / f"{score.clip_id}.wav").exists()
            csv_path = out / "metrics" / f"{name}.csv"
            lines = csv_path.read_text().splitlines()
            assert lines[0] == "clip_id,sdr,sdri,si_sdr"
            assert len(lines) == 1 + len(sep_result.per_clip)
        report = (out / "report.md").read_text()
        assert result.config_hash in report
        assert "| pair |" in report
        assert "eval epsilon: 1e-08" in report
        assert "clamp: +/-60 dB" in report

    def test_oracle_without_interference_marks_clip_failed(self):
        items = make_synthetic_eval_set(3, seed=4, duration_s=0.5)
        items[1].interference = None
        result = run_evaluation(_eval_config(), items)
        oracle = result.separators["oracle"]
        assert oracle.failed == ["clip_001"]
        assert len(oracle.per_clip) == 2
        # identity unaffected
        assert result.separators["identity"].failed == []

    def test_ensemble_skips_clips_with_missing_members(self):
        config = ExperimentConfig(
            separators=[("identity", SeparatorSpec(kind="identity")),
                        ("oracle", SeparatorSpec(kind="oracle_irm"))],
            ensembles={"pair": EnsembleDef(members=("identity", "oracle"))},
        )
        items = make_synthetic_eval_set(3, seed=5, duration_s=0.5)
        items[0].interference = None
        result = run_evaluation(config, items)
        assert result.separators["pair"].failed == ["clip_000"]
        assert len(result.separators["pair"].per_clip) == 2

    def test_no_separators_rejected(self):
        with pytest.raises(ConfigError):
            run_evaluation(ExperimentConfig(separators=[]),
                           make_synthetic_eval_set(1, duration_s=0.5))

    def test_report_rows_preserve_order(self):
        items = make_synthetic_eval_set(2, seed=6, duration_s=0.5)
        result = run_evaluation(_eval_config(), items)
        rows = result.report_rows()
        assert [r.model for r in rows] == ["identity", "oracle"]


class TestSyntheticEvalSet:
    def test_deterministic(self):
        a = make_synthetic_eval_set(3, seed=0, duration_s=0.25)
        b = make_synthetic_eval_set(3, seed=0, duration_s=0.25)
        for x, y in zip(a, b):
            assert x.clip_id == y.clip_id
            assert x.mixture == y.mixture

    def test_snr_zero_gives_equal_energies(self):
        items = make_synthetic_eval_set(2, seed=1, duration_s=0.5, snr_db=0.0)
        for item in items:
            ratio = 10 * math.log10(item.reference.energy()
                                    / item.interference.energy())
            assert ratio == pytest.approx(0.0, abs=1e-9)

    def test_snr_drawn_from_range(self):
        items = make_synthetic_eval_set(8, seed=2, duration_s=0.25, snr_db=None,
                                        snr_range=(-10.0, 10.0))
        snrs = [10 * math.log10(i.reference.energy() / i.interference.energy())
                for i in items]
        assert all(-10.0 - 1e-6 <= s <= 10.0 + 1e-6 for s in snrs)
        assert len({round(s, 3) for s in snrs}) > 1

    def test_mixture_is_sum_of_stems(self):
        for item in make_synthetic_eval_set(2, seed=3, duration_s=0.25):
            assert np.allclose(item.mixture.samples,
                               item.reference.samples + item.interference.samples,
                               atol=1e-12)
