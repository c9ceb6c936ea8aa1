"""Command-line interface.

Exit codes: 0 on success, 1 on partial failure (some clips failed but the run
completed, a failure manifest is written), 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import corpus
from .audio import mix, read_wav, write_wav
from .filtering import FilterRules, filter_captions, parse_numbered
from .harness import ConfigError, ExperimentConfig, HarnessError, run_augmentation
from .llm import LlmConfig
from .metrics import compute_triple
from .prompts import PromptKind, builtin_template
from .reporting import ReportRow, render_report
from .separation import SeparatorSpec, ensemble, separate

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

PROMPT_ALIASES = {
    "simple": PromptKind.SIMPLE,
    "clotho": PromptKind.MODIFIED_CLOTHO,
    "modified_clotho": PromptKind.MODIFIED_CLOTHO,
    "wavcaps": PromptKind.MODIFIED_WAVCAPS,
    "modified_wavcaps": PromptKind.MODIFIED_WAVCAPS,
}

logger = logging.getLogger(__name__)


def _prompt_kind(name: str) -> PromptKind:
    try:
        return PROMPT_ALIASES[name]
    except KeyError:
        raise ConfigError(f"unknown prompt kind {name!r}; "
                          f"choose from {sorted(PROMPT_ALIASES)}")


def cmd_prompt(args) -> int:
    template = builtin_template(_prompt_kind(args.kind))
    print(template.to_json())
    return EXIT_OK


def cmd_ingest(args) -> int:
    if args.dataset == "clotho":
        entries = corpus.ingest_clotho(args.csv)
    elif args.dataset == "fsd50k":
        entries = corpus.ingest_fsd50k(args.csv)
    else:
        entries = corpus.ingest_wavcaps(args.json, args.subset)
    manifest = corpus.new_manifest(entries)
    corpus.write_manifest(manifest, args.out)
    print(f"wrote {len(entries)} entries to {args.out}")
    return EXIT_OK


def _experiment_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        config = ExperimentConfig.from_json_file(args.config)
    else:
        config = ExperimentConfig()
    if getattr(args, "manifest", None):
        config.manifest_path = args.manifest
    if getattr(args, "prompt", None):
        config.prompt_kind = _prompt_kind(args.prompt).value
    if getattr(args, "count", None):
        config.requested_count = args.count
    if getattr(args, "rules", None):
        config.filter_rules = FilterRules.from_json_file(args.rules)
    if getattr(args, "mock_llm", False):
        config.use_mock_llm = True
        config.llm = None
    if getattr(args, "llm_endpoint", None):
        config.use_mock_llm = False
        base = config.llm or LlmConfig(endpoint_url=args.llm_endpoint)
        doc = base.to_dict()
        doc["endpoint_url"] = args.llm_endpoint
        if getattr(args, "llm_model", None):
            doc["model_id"] = args.llm_model
        config.llm = LlmConfig.from_dict(doc)
    if args.seed is not None:
        config.seed = args.seed
        if config.use_mock_llm:
            config.mock_seed = args.seed
    if args.out_dir:
        config.out_dir = args.out_dir
    return config


def cmd_augment(args) -> int:
    config = _experiment_config(args)
    if not config.manifest_path:
        raise ConfigError("augment requires --manifest or a config with one")
    if not config.out_dir:
        raise ConfigError("augment requires --out-dir or a config with one")
    manifest, stats = run_augmentation(config, resume=not args.no_resume)
    totals = stats.totals()
    print(f"augmented {totals['clips']} clips: {totals['accepted']} captions accepted, "
          f"{totals['gateway_failures']} gateway failures")
    print(f"outputs in {config.out_dir}")
    if totals["gateway_failures"]:
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_filter(args) -> int:
    rules = FilterRules.from_json_file(args.rules) if args.rules else FilterRules()
    out_lines = []
    with open(args.responses, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            if "clip_id" not in doc or "response_text" not in doc:
                raise ConfigError(
                    f"{args.responses}:{line_no}: expected {{clip_id, response_text}}")
            report = filter_captions(parse_numbered(doc["response_text"]), rules)
            out_lines.append(json.dumps(
                {"clip_id": doc["clip_id"], **report.to_dict()}, ensure_ascii=False))
    Path(args.out).write_text("\n".join(out_lines) + "\n", encoding="utf-8")
    print(f"filtered {len(out_lines)} responses into {args.out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    manifest = corpus.read_manifest(args.manifest)
    rows = corpus.summarize(manifest)
    width = max(len(r.source_dataset) for r in rows)
    print(f"{'dataset':<{width}}  {'clips':>8}  {'originals':>10}  {'augmented':>10}")
    for row in rows:
        print(f"{row.source_dataset:<{width}}  {row.num_clips:>8}  "
              f"{row.num_original_captions:>10}  {row.num_augmented_captions:>10}")
    return EXIT_OK


def cmd_mix(args) -> int:
    target = read_wav(args.target)
    interference = read_wav(args.interference)
    result = mix(target, interference, args.snr)
    write_wav(args.out, result.mixture)
    if args.out_target:
        write_wav(args.out_target, result.target)
    if args.out_interference:
        write_wav(args.out_interference, result.interference)
    print(f"mixed at {args.snr:+.1f} dB SNR (gain {result.gain:.6f}, "
          f"rescale {result.rescale:.6f}) -> {args.out}")
    return EXIT_OK


def cmd_separate(args) -> int:
    spec = SeparatorSpec.from_json_file(args.spec)
    mixture = read_wav(args.mixture)
    oracle_sources = None
    if args.target and args.interference:
        oracle_sources = (read_wav(args.target), read_wav(args.interference))
    estimate = separate(spec, mixture, args.caption, oracle_sources)
    write_wav(args.out, estimate)
    print(f"wrote estimate to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    est_dir, ref_dir, mix_dir = Path(args.estimates), Path(args.references), Path(args.mixtures)
    names = sorted(p.name for p in est_dir.glob("*.wav"))
    if not names:
        raise ConfigError(f"no WAV files in {est_dir}")
    lines = ["clip_id,sdr,sdri,si_sdr"]
    for name in names:
        ref_path, mix_path = ref_dir / name, mix_dir / name
        if not ref_path.exists() or not mix_path.exists():
            raise ConfigError(f"missing reference or mixture for {name}")
        triple = compute_triple(read_wav(est_dir / name), read_wav(mix_path),
                                read_wav(ref_path), args.epsilon)
        clip_id = Path(name).stem
        lines.append(f"{clip_id},{triple.sdr_db:.6f},{triple.sdri_db:.6f},"
                     f"{triple.si_sdr_db:.6f}")
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"evaluated {len(names)} clips -> {args.out}")
    return EXIT_OK


def cmd_ensemble(args) -> int:
    estimates = [read_wav(p) for p in args.inputs]
    weights = args.weights if args.weights else None
    combined = ensemble(estimates, weights)
    write_wav(args.out, combined)
    print(f"ensembled {len(estimates)} estimates -> {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    doc = json.loads(Path(args.rows).read_text(encoding="utf-8"))
    rows = [ReportRow.from_values(
        r["model"], r.get("training_dataset", "-"), r.get("caption_augmentation", "-"),
        float(r["sdr"]), float(r["sdri"]), float(r["si_sdr"])) for r in doc]
    text = render_report(rows, fmt=args.format, config_hash=args.config_hash)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote report to {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capaug",
        description="Caption augmentation and separation-evaluation toolkit")
    parser.add_argument("--config", default=None, help="experiment config JSON")
    parser.add_argument("--seed", type=int, default=None, help="global random seed")
    parser.add_argument("--out-dir", default=None,
                        help="output directory for run artifacts")
    parser.add_argument("-v", "--verbose", action="store_true")

    # the global flags are also accepted after the subcommand; SUPPRESS keeps a
    # subcommand parse from clobbering values given before it
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out-dir", default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true",
                        default=argparse.SUPPRESS)

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prompt", help="inspect prompt templates")
    prompt_sub = p.add_subparsers(dest="prompt_command", required=True)
    p_show = prompt_sub.add_parser("show", help="print a built-in template as JSON")
    p_show.add_argument("kind", choices=sorted(PROMPT_ALIASES))
    p_show.set_defaults(func=cmd_prompt)

    p = sub.add_parser("ingest", help="build a manifest from dataset metadata")
    ingest_sub = p.add_subparsers(dest="dataset", required=True)
    p_cl = ingest_sub.add_parser("clotho")
    p_cl.add_argument("--csv", required=True)
    p_cl.add_argument("--out", required=True)
    p_cl.set_defaults(func=cmd_ingest)
    p_fs = ingest_sub.add_parser("fsd50k")
    p_fs.add_argument("--csv", required=True)
    p_fs.add_argument("--out", required=True)
    p_fs.set_defaults(func=cmd_ingest)
    p_wc = ingest_sub.add_parser("wavcaps")
    p_wc.add_argument("--json", required=True)
    p_wc.add_argument("--subset", required=True,
                      choices=sorted(corpus.WAVCAPS_SUBSETS | {"FreeSound"}))
    p_wc.add_argument("--out", required=True)
    p_wc.set_defaults(func=cmd_ingest)

    p = sub.add_parser("augment", parents=[common],
                       help="run the caption-augmentation pipeline")
    p.add_argument("--manifest")
    p.add_argument("--prompt", help="prompt kind (simple, clotho, wavcaps)")
    p.add_argument("--count", type=int, help="captions to request per clip")
    p.add_argument("--rules", help="filter rules JSON")
    p.add_argument("--mock-llm", action="store_true", help="use the offline mock backend")
    p.add_argument("--llm-endpoint", help="completion endpoint URL")
    p.add_argument("--llm-model", help="model identifier sent to the endpoint")
    p.add_argument("--no-resume", action="store_true",
                   help="reprocess all clips even if outputs exist")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("filter", help="filter raw responses from a JSONL file")
    p.add_argument("--responses", required=True,
                   help="JSONL of {clip_id, response_text}")
    p.add_argument("--rules", help="filter rules JSON")
    p.add_argument("--out", required=True, help="output JSONL of per-clip reports")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("stats", help="print per-dataset manifest statistics")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("mix", help="mix two mono WAV files at an exact SNR")
    p.add_argument("--target", required=True)
    p.add_argument("--interference", required=True)
    p.add_argument("--snr", type=float, required=True, help="SNR in dB")
    p.add_argument("--out", required=True, help="mixture WAV path")
    p.add_argument("--out-target", help="optionally write the co-scaled target")
    p.add_argument("--out-interference", help="optionally write the scaled interference")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("separate", help="run one separator on one mixture")
    p.add_argument("--spec", required=True, help="separator spec JSON")
    p.add_argument("--mixture", required=True)
    p.add_argument("--caption", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", help="oracle target stem (oracle_irm only)")
    p.add_argument("--interference", help="oracle interference stem (oracle_irm only)")
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("eval", help="score estimate/reference/mixture directories")
    p.add_argument("--estimates", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--mixtures", required=True)
    p.add_argument("--out", required=True, help="per-clip metrics CSV")
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ensemble", help="weighted sum of estimate WAVs")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--weights", nargs="+", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("report", help="render aggregate rows as Markdown or CSV")
    p.add_argument("--rows", required=True, help="JSON array of aggregate rows")
    p.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    p.add_argument("--config-hash")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HarnessError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
