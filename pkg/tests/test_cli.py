import json

import numpy as np
import pytest

from conftest import write_pcm
from prosodid import __version__
from prosodid.cli import build_parser, run
from prosodid.cli.commands import (
    BEST_DESCRIPTORS_CSV,
    EFFECTIVE_CONFIG,
    FOLD_PLAN_JSON,
    MANIFEST_JSON,
    TRACKS_DIR,
    flag_overrides,
    load_config,
)
from prosodid.core.errors import ConfigError
from prosodid.main import main

LAYOUT = {"inari": {f"i{k}": [1.5] for k in range(4)}, "ivalo": {f"v{k}": [1.5] for k in range(4)}}


def cli(*argv):
    return run(build_parser().parse_args([str(a) for a in argv]))


def error_records(stderr):
    prefix = "prosodid-error "
    return [json.loads(line[len(prefix):]) for line in stderr.splitlines() if line.startswith(prefix)]


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"cache_dir": str(tmp_path / "cache"), "workers": 1}), encoding="utf-8")
    return path


# ============= Parser & Config =============

def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_flag_overrides():
    args = build_parser().parse_args([
        "sweep", "--corpus", "c", "--seed", "7", "--tier", "syllable",
        "--combo", "EN,F0,ST", "DUR", "--context", "off", "--classifier", "crf, knn,lstm@d2",
    ])
    assert flag_overrides(args) == {
        "corpus_root": "c",
        "seed": 7,
        "tiers": ["syllable"],
        "combos": ["EN,F0,ST", "DUR"],
        "contexts": [False],
        "classifiers": ["crf", "knn", "lstm@d2"],
    }
    assert flag_overrides(build_parser().parse_args(["sweep", "--combo", "ALL"]))["combos"] == "all"


def test_flags_win_over_file(config_file):
    args = build_parser().parse_args(["extract", "--config", str(config_file), "--seed", "9"])
    config = load_config(args)
    assert config.seed == 9
    assert config.workers == 1


def test_invalid_config(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"classifiers": ["bayes"]}), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(build_parser().parse_args(["extract", "--config", str(path)]))

    assert cli("sweep", "--config", path) == 1
    records = error_records(capsys.readouterr().err)
    assert records[0]["command"] == "sweep"
    assert records[0]["error"] == "ConfigError"


def test_unreadable_config(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    assert cli("extract", "--config", path) == 1
    assert error_records(capsys.readouterr().err)[0]["error"] == "ConfigError"


# ============= Commands =============

def test_synth(tmp_path, capsys):
    config = tmp_path / "synth.json"
    config.write_text(json.dumps({"synth": {"n_speakers": 2, "n_recordings": 1, "words_per_recording": 3,
                                            "sample_rate": 8000}}), encoding="utf-8")
    out = tmp_path / "corpus"
    assert cli("synth", "--config", config, "--out", out, "--seed", "2") == 0
    assert "synthetic corpus" in capsys.readouterr().out
    assert (out / "speakers.tsv").is_file()
    assert len(list(out.rglob("*.wav"))) == 10
    echoed = json.loads((out / EFFECTIVE_CONFIG).read_text(encoding="utf-8"))
    assert echoed["seed"] == 2
    assert echoed["corpus_root"] == str(out)


def test_extract(make_corpus, config_file, tmp_path, capsys):
    root = make_corpus(LAYOUT)
    out = tmp_path / "results"
    assert cli("extract", "--config", config_file, "--corpus", root, "--out", out) == 0
    assert "computed: 8" in capsys.readouterr().out
    assert (out / MANIFEST_JSON).is_file()
    assert json.loads((out / EFFECTIVE_CONFIG).read_text(encoding="utf-8"))["corpus_root"] == str(root)

    assert cli("extract", "--config", config_file, "--corpus", root, "--out", out) == 0
    assert "cache hits: 8" in capsys.readouterr().out


def test_extract_dump_tracks(make_corpus, config_file, tmp_path, capsys):
    root = make_corpus(LAYOUT)
    out = tmp_path / "results"
    assert cli("extract", "--config", config_file, "--corpus", root, "--out", out, "--dump-tracks") == 0
    assert "tracks: 8" in capsys.readouterr().out
    dumps = sorted((out / TRACKS_DIR).glob("*.tracks.csv"))
    assert len(dumps) == 8
    assert dumps[0].read_text(encoding="utf-8").splitlines()[0] == "frame_time,energy,f0,voiced,tilt"


def test_extract_reports_bad_recording(make_corpus, config_file, tmp_path, capsys):
    root = make_corpus(LAYOUT)
    (root / "ivalo" / "v0_r01.wav").write_bytes(b"junk")
    assert cli("extract", "--config", config_file, "--corpus", root, "--out", tmp_path / "r") == 1
    records = error_records(capsys.readouterr().err)
    assert len(records) == 1
    assert records[0]["error"] == "AudioFormatError"
    assert records[0]["message"].startswith("v0_r01: ")


def test_extract_empty_corpus(tmp_path, config_file, capsys):
    (tmp_path / "empty").mkdir()
    assert cli("extract", "--config", config_file, "--corpus", tmp_path / "empty", "--out", tmp_path / "r") == 1
    assert error_records(capsys.readouterr().err)[0]["error"] == "CorpusError"


def test_syllabify(tmp_path, capsys):
    sr = 8000
    t = np.arange(2 * sr) / sr
    write_pcm(tmp_path / "am.wav", 0.4 * (1 - np.cos(2 * np.pi * 4 * t)) * np.sin(2 * np.pi * 800 * t), sr)
    write_pcm(tmp_path / "short.wav", np.zeros(100), sr)
    assert cli("syllabify", tmp_path / "am.wav", tmp_path / "short.wav", "--out", tmp_path / "tiers") == 1
    captured = capsys.readouterr()
    lines = (tmp_path / "tiers" / "am.syllables.tsv").read_text(encoding="utf-8").splitlines()
    assert 6 <= len(lines) <= 10
    assert all(line.split("\t")[2] == "syllable" for line in lines)
    assert error_records(captured.err)[0]["command"] == "syllabify"


def test_sweep_and_report(make_corpus, config_file, tmp_path, capsys):
    root = make_corpus(LAYOUT)
    out = tmp_path / "results"
    status = cli("sweep", "--config", config_file, "--corpus", root, "--out", out,
                 "--tier", "word", "--combo", "EN,F0", "DUR", "--context", "off", "--classifier", "knn,majority")
    assert status == 0
    stdout = capsys.readouterr().out
    assert "best: tier=word" in stdout
    assert (out / FOLD_PLAN_JSON).is_file()
    rows = (out / "report.csv").read_text(encoding="utf-8").splitlines()
    # 2 combos x 2 classifiers x (4 folds x 5 repeats) split rows plus 4 aggregates
    assert len(rows) == 1 + 80 + 4
    descriptors = (out / BEST_DESCRIPTORS_CSV).read_text(encoding="utf-8").splitlines()
    assert descriptors[0].startswith("recording_id,unit_index,start,end,dialect,")
    # two annotated words per recording
    assert len(descriptors) == 1 + 16

    assert cli("report", out, "--out", tmp_path / "again") == 0
    assert "BEST:" in capsys.readouterr().out
    assert (tmp_path / "again" / "summary.json").is_file()


def test_report_missing(tmp_path, capsys):
    assert cli("report", tmp_path) == 1
    assert error_records(capsys.readouterr().err)[0]["error"] == "ConfigError"
