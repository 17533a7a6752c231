import os

import pytest

from skelstitch.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("synth", "clips", "--per-class", 5, "--tmin", 12, "--tmax", 20, "--seed", 3, "--out", d / "raw") == 0
    assert run("synth", "untrimmed", "--sequences", 3, "--seed", 4, "--class-seed", 3, "--out", d / "raw_t") == 0
    assert run("preprocess", "--topology", d / "raw/topology.skt", "--in", d / "raw", "--out", d / "src") == 0
    assert run("preprocess", "--topology", d / "raw/topology.skt", "--in", d / "raw_t", "--out", d / "tgt") == 0
    return d


def test_help_and_usage_errors(capsys):
    assert run("--help") == 0
    assert run("frobnicate") == 1
    assert "frobnicate" in capsys.readouterr().err
    assert run("stitch", "--batch", "x", "--perm", "0,1", "--out", "y", "--bogus") == 1
    assert "--bogus" in capsys.readouterr().err
    assert run("--threads", 0, "gradcheck", "--seeds", 1) == 1


def test_validation_and_runtime_exit_codes(data):
    assert run("stitch", "--batch", data / "src", "--perm", "0,0", "--out", data / "x.skq") == 1
    assert run("stitch", "--batch", data / "src", "--perm", "0,9", "--out", data / "x.skq") == 1
    # d* = 0 cannot be met: a runtime failure, not a usage error
    assert run("stitch", "--batch", data / "src", "--perm", "0,1", "--dstar", 0, "--out", data / "x.skq") == 2


def test_match_prints_triple(data, capsys):
    assert run("match", "--template", f"{data / 'src' / 'clip_0000.skq'}:3", "--batch", data / "src",
               "--class", 1) == 0
    i, t, d = capsys.readouterr().out.split()
    assert int(i) >= 0 and int(t) >= 0 and float(d) >= 0


def test_stitch_deterministic(data):
    for name in ("a.skq", "b.skq"):
        assert run("stitch", "--batch", data / "src", "--perm", "0,1,2", "--seed", 7, "--out", data / name) == 0
    assert (data / "a.skq").read_bytes() == (data / "b.skq").read_bytes()
    assert "seed 7" in (data / "a.skq.config").read_text().splitlines()


def test_expand_manifest(data):
    assert run("expand", "--batch", data / "src", "--count", 4, "--out", data / "exp",
               "--manifest", data / "m.txt") == 0
    lines = (data / "m.txt").read_text().splitlines()
    assert len(lines) == 4 and all(os.path.exists(data / "exp" / l.split()[0]) for l in lines)


def test_pipeline_and_zero_shot_audit(data):
    d = data
    assert run("--seed", 2, "pretrain", "--batch", d / "src", "--steps", 3, "--g", 4, "--out", d / "enc.skm",
               "--log", d / "log.csv") == 0
    log = (d / "log.csv").read_text().splitlines()
    assert log[0] == "step,loss,num_positives,bank_size" and len(log) == 4
    assert "seed 2" in (d / "enc.skm.config").read_text()

    assert run("adapt", "--strategy", "zero_shot", "--mode", "linear", "--encoder", d / "enc.skm",
               "--source", d / "src", "--target", d / "tgt", "--epochs", 1, "--count", 5,
               "--out", d / "zs.skm") == 0
    read = (d / "zs.skm.access.log").read_text().splitlines()
    assert read and not any(p.startswith(str(d / "tgt")) for p in read)

    assert run("adapt", "--strategy", "supervised", "--encoder", d / "enc.skm", "--target", d / "tgt",
               "--epochs", 1, "--out", d / "sup.skm") == 0
    assert run("adapt", "--strategy", "supervised", "--encoder", d / "enc.skm", "--out", d / "x.skm") == 1

    assert run("predict", "--model", d / "zs.skm", "--in", d / "tgt", "--out", d / "pred") == 0
    assert run("eval", "--pred", d / "pred", "--gt", d / "tgt", "--iou", "0.1,0.5", "--report", d / "r.txt") == 0
    keys = [l.split()[0] for l in (d / "r.txt").read_text().splitlines()]
    assert keys[:5] == ["acc", "miou", "map@0.10", "map@0.50", "map_frame"]

    os.remove(d / "pred" / "seq_0001.prd")
    assert run("eval", "--pred", d / "pred", "--gt", d / "tgt") == 2


def test_gradcheck_command(capsys):
    assert run("gradcheck", "--seeds", "1") == 0
    assert "PASS" in capsys.readouterr().out


def test_repro_identical_reports(tmp_path):
    for name in ("a", "b"):
        assert run("repro", "zero-shot", "--seed", 7, "--steps", 3, "--epochs", 1, "--out", tmp_path / name) == 0
    files = sorted(os.listdir(tmp_path / "a"))
    assert "summary.txt" in files and "baseline_e2e.txt" in files
    for f in files:
        if f != "config.txt":  # records the differing --out path
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    rows = (tmp_path / "a" / "summary.txt").read_text().splitlines()
    assert [r.split()[0] for r in rows] == ["zero_shot_linear", "zero_shot_e2e", "baseline_e2e"]
