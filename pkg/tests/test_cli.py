import filecmp
from dataclasses import replace

import pytest

from slnscreen.cli import build_parser, run
from slnscreen.corpus import write_manifest
from slnscreen.config import RunConfig, parse_config
from slnscreen.errors import ConfigError


def test_tables_fixtures(capsys):
    assert run(["tables", "--fixtures"]) == 0
    out = capsys.readouterr().out
    assert "275/320" in out and "161/320" in out and "59/64" in out
    assert "Means" in out and "91.15" in out
    assert "2/5 -> Incorrect" in out


def test_tables_without_fixtures_is_validation_error(capsys):
    assert run(["tables"]) == 1
    assert "--fixtures" in capsys.readouterr().err


def test_help_lists_every_flag(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        text = p.format_help()
        for action in p._actions:
            for flag in action.option_strings:
                assert flag in text, (name, flag)
    with pytest.raises(SystemExit) as exc:
        run(["train", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--manifest", "--config", "--out", "--seed", "--policy", "--label-mode", "--dump-config"):
        assert flag in out


def test_dump_config_round_trips(capsys):
    assert run(["train", "--manifest", "unused", "--seed", "7", "--dump-config"]) == 0
    text = capsys.readouterr().out
    cfg = parse_config(text)
    assert cfg.model_seed == 7 and cfg.train_seed == 7
    assert parse_config(RunConfig().dump()) == RunConfig()


def test_config_rejects_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("# comment\nbatch_size = 8\nlearning_rat = 0.1\n")
    assert run(["generate", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 1
    err = capsys.readouterr().err
    assert "bad.cfg: line 3" in err and "learning_rat" in err
    with pytest.raises(ConfigError):
        parse_config("optimizer = rmsprop")
    assert parse_config("hflip = false  # no flips\n").hflip is False


def test_missing_file_is_io_error(tmp_path, capsys):
    assert run(["evaluate", str(tmp_path / "nope.csv")]) == 2
    assert "nope.csv" in capsys.readouterr().err


def test_generate_twice_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert run(["generate", "--seed", "1", "--out", str(tmp_path / name)]) == 0
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.left_only and not cmp.right_only and not cmp.diff_files
    patches = sorted((tmp_path / "a" / "patches").rglob("*.ppm"))
    assert len(patches) == 2720
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b",
                                           [str(p.relative_to(tmp_path / "a")) for p in patches], shallow=False)
    assert not mismatch and not errors


def _fake_predictions(path, slides=8, per_slide=40):
    lines = ["patch_id,slide_id,case_id,observed_dx,predicted_dx,p0,p1,p2,p3"]
    for s in range(slides):
        dx = s % 4
        for j in range(per_slide):
            pred = dx if j % 3 else (dx + 2) % 4
            lines.append(f"S{s}-P{j:02d},S{s},C{s},{dx},{pred},0.25,0.25,0.25,0.25")
    path.write_text("\n".join(lines) + "\n")


def test_evaluate_writes_report_and_64_case_rows(tmp_path, capsys):
    _fake_predictions(tmp_path / "u1.csv")
    assert run(["evaluate", str(tmp_path / "u1.csv"), "--out", str(tmp_path / "eval")]) == 0
    report = (tmp_path / "eval" / "report.txt").read_text()
    case_rows = [line for line in report.splitlines() if "/5 -> " in line]
    assert len(case_rows) == 64
    assert "Accuracy:" in report and "/320" in report
    for name in ("metrics.csv", "confusion_image.png", "confusion_grouped.png", "confusion_case.png"):
        assert (tmp_path / "eval" / name).stat().st_size > 0
    assert capsys.readouterr().out == report


def test_evaluate_rejects_bad_rows(tmp_path, capsys):
    path = tmp_path / "p.csv"
    path.write_text("patch_id,slide_id,case_id,observed_dx,predicted_dx,p0,p1,p2,p3\na,S,C,9,0,1,0,0,0\n")
    assert run(["evaluate", str(path)]) == 1
    assert "p.csv: line 2" in capsys.readouterr().err


def test_agreement_means(tmp_path, capsys):
    dirs = []
    for n, skew in enumerate((1, 2, 4)):
        _fake_predictions(tmp_path / f"u{n}.csv")
        text = (tmp_path / f"u{n}.csv").read_text().splitlines()
        # make users differ by flipping some calls on slide S1
        text = [l.replace(",1,1,", ",1,3,", skew) if l.startswith("S1-") else l for l in text]
        (tmp_path / f"u{n}.csv").write_text("\n".join(text) + "\n")
        assert run(["evaluate", str(tmp_path / f"u{n}.csv"), "--out", str(tmp_path / f"user{n}")]) == 0
        dirs.append(str(tmp_path / f"user{n}"))
    capsys.readouterr()
    assert run(["agreement", *dirs, "--out", str(tmp_path / "agree")]) == 0
    out = capsys.readouterr().out
    assert "Means" in out and "user0" in out
    rows = (tmp_path / "agree" / "agreement.csv").read_text().splitlines()
    assert rows[0] == "user,accuracy,sensitivity,specificity,ppv,npv" and rows[-1].startswith("Means,")
    assert (tmp_path / "agree" / "agreement.png").exists()


def test_train_predict_evaluate_small(small_corpus, tmp_path, capsys):
    cfg = tmp_path / "small.cfg"
    cfg.write_text("patches_per_slide = 10\nmax_epochs = 1\n")
    manifest = str(small_corpus.root / "manifest.jsonl")
    assert run(["train", "--manifest", manifest, "--config", str(cfg), "--out", str(tmp_path / "t")]) == 0
    for name in ("checkpoint.slns", "train_report.csv", "train_summary.txt", "training_curves.png"):
        assert (tmp_path / "t" / name).exists()
    assert (tmp_path / "t" / "train_report.csv").read_text().splitlines()[0] == "epoch,train_loss,val_loss,val_acc"
    assert run(["predict", "--manifest", manifest, "--config", str(cfg), "--checkpoint",
                str(tmp_path / "t" / "checkpoint.slns"), "--out", str(tmp_path / "p.csv")]) == 0
    assert len((tmp_path / "p.csv").read_text().splitlines()) == 41
    assert run(["evaluate", str(tmp_path / "p.csv")]) == 0
    assert "Case-by-case majority voting (8 sets of 5)" in capsys.readouterr().out


def test_predict_rejects_non_checkpoint(small_corpus, tmp_path, capsys):
    (tmp_path / "x.slns").write_bytes(b"JUNKJUNKJUNK")
    assert run(["predict", "--manifest", str(small_corpus.root / "manifest.jsonl"), "--checkpoint",
                str(tmp_path / "x.slns"), "--out", str(tmp_path / "p.csv")]) == 1
    assert "x.slns: not a checkpoint" in capsys.readouterr().err


def test_unsplit_manifest_gets_split_or_named_error(tmp_path, small_corpus, capsys):
    bare = replace(small_corpus, patches={k: replace(p, split=None) for k, p in small_corpus.patches.items()})
    write_manifest(bare, small_corpus.root / "bare.jsonl")
    cfg = tmp_path / "small.cfg"
    cfg.write_text("patches_per_slide = 10\n")
    # 12 cases cannot hit the default 2160/240/320 proportions at case granularity
    assert run(["train", "--manifest", str(small_corpus.root / "bare.jsonl"), "--config", str(cfg),
                "--out", str(tmp_path / "t")]) == 1
    assert "nearest achievable" in capsys.readouterr().err
