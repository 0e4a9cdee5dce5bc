import json
from pathlib import Path

import numpy as np
import pytest

from dragdrop.cli import main
from dragdrop.phantom import LesionSpec, PhantomSpec
from dragdrop.volume import LabelVolume, Volume, load_label, save_label, save_volume


def _run(*argv):
    return main(list(argv))


def _spec_file(tmp_path, radius=5.0, noise=5.0):
    lesion = LesionSpec("sphere", (16.0, 16.0, 16.0), (radius,) * 3, 200.0)
    spec = PhantomSpec(dims=(33, 33, 33), lesions=(lesion,), background=40.0,
                       noise_sigma=noise)
    p = tmp_path / "spec.json"
    p.write_text(spec.to_json() + "\n")
    return p


def _read_tree(root: Path, skip_manifest=True):
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            if skip_manifest and p.name == "manifest.json":
                continue
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


# ---------------------------------------------------------------------------

def test_version_and_usage_errors(capsys):
    with pytest.raises(SystemExit):
        _run("--version")
    assert _run("propagate") == 1  # missing required args
    assert _run("nonsense") == 1
    err = capsys.readouterr().err
    assert "usage error" in err


def test_phantom_spec_command(tmp_path):
    spec = _spec_file(tmp_path)
    out = tmp_path / "case"
    assert _run("phantom", "--spec", str(spec), "--out-dir", str(out)) == 0
    assert (out / "volume.f32").exists()
    assert (out / "gt.f32").exists()
    assert (out / "manifest.json").exists()
    gt = load_label(out / "gt.f32")
    assert gt.labels.max() == 1


def test_phantom_bad_spec_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run("phantom", "--spec", str(bad), "--out-dir", str(tmp_path / "o")) == 2
    assert "error:" in capsys.readouterr().err


def test_full_pipeline_dice(tmp_path):
    spec = _spec_file(tmp_path)
    case = tmp_path / "case"
    ann = tmp_path / "ann.json"
    pred = tmp_path / "pred"
    rep = tmp_path / "report"
    assert _run("phantom", "--spec", str(spec), "--out-dir", str(case)) == 0
    assert _run("simulate", "--gt", str(case / "gt.f32"), "--kind", "dragdrop",
                "--sigma-frac", "0", "--out", str(ann)) == 0
    assert _run("propagate", "--volume", str(case / "volume.f32"),
                "--annotations", str(ann), "--out-dir", str(pred)) == 0
    assert _run("evaluate", "--pred", str(pred / "foreground.f32"),
                "--gt", str(case / "gt.f32"), "--level", "pixel",
                "--out", str(rep / "metrics")) == 0
    doc = json.loads((rep / "metrics.json").read_text())
    (row,) = doc["reports"]
    assert row["dice"] >= 0.90
    # masked evaluation never scores lower on sensitivity
    rep2 = tmp_path / "report2"
    assert _run("evaluate", "--pred", str(pred / "foreground.f32"),
                "--gt", str(case / "gt.f32"),
                "--ignore", str(pred / "uncertain.f32"), "--level", "pixel",
                "--out", str(rep2 / "metrics")) == 0
    doc2 = json.loads((rep2 / "metrics.json").read_text())
    assert doc2["reports"][0]["sensitivity"] >= row["sensitivity"]


def test_simulate_all_kinds(tmp_path):
    spec = _spec_file(tmp_path, noise=0.0)
    case = tmp_path / "case"
    _run("phantom", "--spec", str(spec), "--out-dir", str(case))
    for kind in ("dragdrop", "bbox", "points", "ellipse", "scribble"):
        out = tmp_path / f"{kind}.json"
        assert _run("simulate", "--gt", str(case / "gt.f32"), "--kind", kind,
                    "--out", str(out)) == 0
        doc = json.loads(out.read_text())
        assert doc["version"] == 1
        assert doc["kind"] == kind
        assert doc["items"]


def test_evaluate_dim_mismatch_exit_2(tmp_path, capsys):
    save_label(LabelVolume(np.zeros((4, 4, 4), np.int32)), tmp_path / "a.f32",
               format="raw_json")
    save_label(LabelVolume(np.zeros((5, 5, 5), np.int32)), tmp_path / "b.f32",
               format="raw_json")
    assert _run("evaluate", "--pred", str(tmp_path / "a.f32"),
                "--gt", str(tmp_path / "b.f32")) == 2
    assert "do not match" in capsys.readouterr().err


def test_evaluate_directory_pairing(tmp_path):
    pred_dir = tmp_path / "pred"
    gt_dir = tmp_path / "gt"
    pred_dir.mkdir()
    gt_dir.mkdir()
    for name in ("c0", "c1"):
        m = np.zeros((5, 5, 5), np.int32)
        m[1, 1, 1] = 1
        save_label(LabelVolume(m), pred_dir / f"{name}.f32", format="raw_json")
        save_label(LabelVolume(m), gt_dir / f"{name}.f32", format="raw_json")
    out = tmp_path / "rep" / "metrics"
    assert _run("evaluate", "--pred", str(pred_dir), "--gt", str(gt_dir),
                "--level", "lesion", "--out", str(out)) == 0
    doc = json.loads(out.with_suffix(".json").read_text())
    assert doc["reports"][0]["tp"] == 2
    assert doc["reports"][0]["sensitivity"] == 1.0


def test_propagate_byte_deterministic(tmp_path):
    spec = _spec_file(tmp_path)
    case = tmp_path / "case"
    ann = tmp_path / "ann.json"
    _run("phantom", "--spec", str(spec), "--out-dir", str(case))
    _run("simulate", "--gt", str(case / "gt.f32"), "--kind", "dragdrop",
         "--sigma-frac", "0.05", "--seed", "4", "--out", str(ann))
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    _run("propagate", "--volume", str(case / "volume.f32"),
         "--annotations", str(ann), "--out-dir", str(out_a))
    _run("propagate", "--volume", str(case / "volume.f32"),
         "--annotations", str(ann), "--out-dir", str(out_b))
    assert _read_tree(out_a) == _read_tree(out_b)  # manifest wall time excluded


def test_froc_command(tmp_path):
    conf = np.zeros((10, 10, 10), np.float32)
    conf[3, 3, 3] = 0.9
    conf[7, 7, 7] = 0.4
    gt = np.zeros((10, 10, 10), np.int32)
    gt[2:5, 2:5, 2:5] = 1
    save_volume(Volume(conf), tmp_path / "conf.f32", format="raw_json")
    save_label(LabelVolume(gt), tmp_path / "gt.f32", format="raw_json")
    cases = tmp_path / "cases.json"
    cases.write_text(json.dumps(
        [{"confidence": str(tmp_path / "conf.f32"), "gt": str(tmp_path / "gt.f32")}]
    ))
    out = tmp_path / "froc.csv"
    plot = tmp_path / "froc.svg"
    assert _run("froc", "--cases", str(cases), "--out", str(out),
                "--plot", str(plot)) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "threshold,fp_per_case,sensitivity"
    assert len(lines) > 1
    assert plot.read_text().startswith("<svg")


def test_froc_malformed_cases_exit_2(tmp_path, capsys):
    cases = tmp_path / "cases.json"
    cases.write_text(json.dumps([{}]))  # missing keys entirely
    assert _run("froc", "--cases", str(cases), "--out",
                str(tmp_path / "o.csv")) == 2
    assert "malformed" in capsys.readouterr().err


def test_missing_file_exit_2(tmp_path):
    assert _run("propagate", "--volume", str(tmp_path / "nope.f32"),
                "--annotations", str(tmp_path / "nope.json"),
                "--out-dir", str(tmp_path / "o")) == 2
