import argparse

from prosodid import __version__
from prosodid.schemas.corpus import Tier


def _add_experiment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="experiment configuration (JSON)")
    parser.add_argument("--corpus", metavar="DIR", help="corpus root (overrides corpus_root)")
    parser.add_argument("--out", metavar="DIR", help="output directory (overrides output_dir)")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--workers", type=int, help="worker processes (default: one per processor)")
    parser.add_argument("--progress", action="store_true", help="show progress bars")


def _add_grid_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tier", choices=[t.value for t in Tier], help="unit tier")
    parser.add_argument(
        "--combo", nargs="+", metavar="COMBO",
        help="feature combinations, e.g. EN,F0,ST or EN+F0 DUR; 'all' for the 15 subsets",
    )
    parser.add_argument("--context", choices=["on", "off"], help="context stacking")
    parser.add_argument("--classifier", metavar="LIST", help="comma-separated classifiers, e.g. crf,knn,lstm@d2")
    parser.add_argument("--executor", choices=["local", "celery"], help="grid executor")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prosodid",
        description="Prosodic dialect identification: feature extraction, classifiers and speaker-disjoint evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"prosodid {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract tracks, syllable tiers and descriptors into the feature cache")
    _add_experiment_flags(p)
    p.add_argument("--dump-tracks", action="store_true", help="also write per-recording track CSVs under OUT/tracks")

    p = sub.add_parser("syllabify", help="detect syllables in WAV files and write them as annotation files")
    p.add_argument("wav", nargs="+", help="input WAV files")
    p.add_argument("--config", metavar="PATH", help="experiment configuration (JSON)")
    p.add_argument("--out", metavar="DIR", help="output directory (default: next to each WAV)")

    p = sub.add_parser("sweep", help="run the evaluation grid and write report files")
    _add_experiment_flags(p)
    _add_grid_flags(p)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    _add_experiment_flags(p)

    p = sub.add_parser("report", help="re-render summaries from a report CSV")
    p.add_argument("results", metavar="DIR_OR_CSV", help="results directory or report.csv")
    p.add_argument("--out", metavar="DIR", help="where to write the summaries (default: next to the CSV)")

    return parser
