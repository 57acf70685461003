"""
Command implementations. Each command takes the parsed arguments and the
effective ExperimentConfig and returns the process exit status.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, Optional

from pydantic import ValidationError

from prosodid.core.errors import ConfigError, ProsodidError
from prosodid.schemas.corpus import Tier
from prosodid.schemas.experiment import ExperimentConfig
from prosodid.schemas.report import EvalReport
from prosodid.services import dsp_service, syllable_service
from prosodid.services.corpus_service import build_manifest, load_wav, save_manifest, split_folds, write_annotations
from prosodid.services.eval_service import REPORT_CSV, read_report_csv, render_summary, sweep, write_report, write_summary
from prosodid.services.extraction_service import (
    ExtractionResult,
    export_descriptors,
    export_tracks,
    extract_corpus,
    load_tier_features,
)
from prosodid.services.prosody_service import FeatureCombo
from prosodid.services.synthetic_service import generate_synthetic_corpus

logger = logging.getLogger(__name__)

EFFECTIVE_CONFIG = "effective_config.json"
MANIFEST_JSON = "manifest.json"
FOLD_PLAN_JSON = "fold_plan.json"
BEST_DESCRIPTORS_CSV = "descriptors_best.csv"
TRACKS_DIR = "tracks"


# ============= Error Records =============

def emit_error(command: str, error: str, message: str) -> None:
    """One machine-parsable failure line on stderr."""
    record = json.dumps({"command": command, "error": error, "message": message}, sort_keys=True)
    print(f"prosodid-error {record}", file=sys.stderr)


def _split_error(text: str):
    """'ClassName: message' as recorded by the batch services."""
    error, sep, message = text.partition(": ")
    return (error, message) if sep else ("ProsodidError", text)


# ============= Configuration =============

def flag_overrides(args: argparse.Namespace) -> Dict[str, object]:
    """Config keys set on the command line; flags win over the file."""
    overrides: Dict[str, object] = {}
    simple = {"corpus": "corpus_root", "out": "output_dir", "seed": "seed", "workers": "workers", "executor": "executor"}
    for flag, key in simple.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "tier", None):
        overrides["tiers"] = [args.tier]
    combos = getattr(args, "combo", None)
    if combos:
        overrides["combos"] = "all" if [c.lower() for c in combos] == ["all"] else list(combos)
    if getattr(args, "context", None):
        overrides["contexts"] = [args.context == "on"]
    if getattr(args, "classifier", None):
        overrides["classifiers"] = [c.strip() for c in args.classifier.split(",") if c.strip()]
    return overrides


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    data: Dict[str, object] = {}
    path = getattr(args, "config", None)
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}")
        if not isinstance(data, dict):
            raise ConfigError(f"configuration {path} must hold a JSON object")
    data.update(flag_overrides(args))
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc.errors(include_url=False)}")


def write_effective_config(config: ExperimentConfig, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / EFFECTIVE_CONFIG
    path.write_text(json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ============= Commands =============

def _report_extraction(command: str, result: ExtractionResult) -> None:
    print(f"recordings: {result.recordings} computed: {result.computed} "
          f"cache hits: {result.cache_hits} failed: {len(result.failed)}")
    for recording_id, text in sorted(result.failed.items()):
        error, message = _split_error(text)
        emit_error(command, error, f"{recording_id}: {message}")


def cmd_extract(args: argparse.Namespace, config: ExperimentConfig) -> int:
    out_dir = Path(config.output_dir)
    write_effective_config(config, out_dir)
    manifest = build_manifest(config.corpus_root, strict=False)
    save_manifest(manifest, out_dir / MANIFEST_JSON)
    result = extract_corpus(manifest, config, workers=config.workers, progress=args.progress)
    _report_extraction("extract", result)
    if args.dump_tracks:
        n = export_tracks(manifest, config, out_dir / TRACKS_DIR)
        print(f"tracks: {n} -> {out_dir / TRACKS_DIR}")
    return 0 if result.ok else 1


def cmd_syllabify(args: argparse.Namespace, config: ExperimentConfig) -> int:
    failed = 0
    for wav in args.wav:
        path = Path(wav)
        out_dir = Path(args.out) if args.out else path.parent
        out_dir.mkdir(parents=True, exist_ok=True)
        try:
            rec = dsp_service.preprocess(load_wav(path), config.frame, config.denoise)
            units = syllable_service.syllabify(rec, config.oscillator)
        except ProsodidError as exc:
            failed += 1
            logger.error(f"Syllabification failed for {path}: {exc}")
            emit_error("syllabify", type(exc).__name__, f"{path}: {exc}")
            continue
        target = out_dir / f"{path.stem}.syllables.tsv"
        write_annotations(target, units)
        print(f"{path}: {len(units)} syllables -> {target}")
    return 0 if not failed else 1


def _best_line(report: EvalReport) -> Optional[str]:
    best = report.best()
    if best is None:
        return None
    k = best.cell
    return (f"best: tier={k.tier} combo={k.combo} context={'on' if k.context else 'off'} "
            f"classifier={k.classifier} UAR={best.uar:.4f} (chance {best.chance:.4f})")


def cmd_sweep(args: argparse.Namespace, config: ExperimentConfig) -> int:
    out_dir = Path(config.output_dir)
    write_effective_config(config, out_dir)
    manifest = build_manifest(config.corpus_root, strict=False)
    save_manifest(manifest, out_dir / MANIFEST_JSON)
    extraction = extract_corpus(manifest, config, workers=config.workers, progress=args.progress)
    _report_extraction("sweep", extraction)

    plan = split_folds(manifest, config.folds, config.repeats, config.seed)
    (out_dir / FOLD_PLAN_JSON).write_text(plan.model_dump_json(indent=2), encoding="utf-8")
    report = sweep(manifest, plan, config, workers=config.workers, progress=args.progress)
    paths = write_report(report, out_dir)
    best = report.best()
    if best is not None:
        tier = Tier(best.cell.tier)
        export_descriptors(
            load_tier_features(manifest, config, tier),
            FeatureCombo.parse(best.cell.combo),
            tier,
            out_dir / BEST_DESCRIPTORS_CSV,
            config.descriptors.voicing_flag,
        )

    line = _best_line(report)
    if line:
        print(line)
    print(f"report: {paths[REPORT_CSV]}")
    for failure in report.failures:
        emit_error("sweep", failure.error, f"{failure.cell.label}: {failure.message}")
    return 0 if report.ok and extraction.ok else 1


def cmd_synth(args: argparse.Namespace, config: ExperimentConfig) -> int:
    target = Path(args.out) if args.out else Path(config.corpus_root)
    config = config.model_copy(update={"corpus_root": str(target)})
    generate_synthetic_corpus(target, config.synth, seed=config.seed)
    if config.synth.n_speakers < config.folds:
        logger.warning(
            f"{config.synth.n_speakers} speakers per dialect for {config.folds} folds; "
            f"the fold split will leave groups empty"
        )
    write_effective_config(config, target)
    print(f"synthetic corpus: {target} ({len(config.synth.dialects)} dialects x "
          f"{config.synth.n_speakers} speakers x {config.synth.n_recordings} recordings)")
    return 0


def cmd_report(args: argparse.Namespace, config: Optional[ExperimentConfig] = None) -> int:
    path = Path(args.results)
    csv_path = path / REPORT_CSV if path.is_dir() else path
    if not csv_path.exists():
        raise ConfigError(f"no report file at {csv_path}")
    report = read_report_csv(csv_path)
    write_summary(report, Path(args.out) if args.out else csv_path.parent)
    print(render_summary(report), end="")
    return 0


COMMANDS: Dict[str, Callable[..., int]] = {
    "extract": cmd_extract,
    "syllabify": cmd_syllabify,
    "sweep": cmd_sweep,
    "synth": cmd_synth,
    "report": cmd_report,
}


def run(args: argparse.Namespace) -> int:
    """Dispatch a parsed command; every failure ends in an error record and status 1."""
    try:
        config = None if args.command == "report" else load_config(args)
        return COMMANDS[args.command](args, config)
    except ProsodidError as exc:
        logger.error(f"{args.command} failed: {exc}")
        emit_error(args.command, type(exc).__name__, str(exc))
    except OSError as exc:
        logger.error(f"{args.command} failed: {exc}")
        emit_error(args.command, type(exc).__name__, str(exc))
    except Exception as exc:
        logger.exception(f"{args.command} failed unexpectedly")
        emit_error(args.command, type(exc).__name__, str(exc))
    return 1
