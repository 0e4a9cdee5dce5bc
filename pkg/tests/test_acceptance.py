"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Criteria 1-9 cover the core toolkit; criterion 10 (browser client geometry)
lives in the frontend package's own test suite.
"""

import contextlib
import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from conftest import cc_oracle, flood_oracle, naive_dilate, naive_erode, naive_gradient
from dragdrop.annotation import fit_ellipse, simulate_bbox, simulate_dragdrop, \
    simulate_ellipse, simulate_points, simulate_scribbles
from dragdrop.cli import main as cli_main
from dragdrop.metrics import (
    Case,
    ConfusionCounts,
    DetectionReport,
    MatchCriterion,
    froc,
    match_lesions,
    patient_level_metrics,
    pixel_metrics,
)
from dragdrop.morphology import ball, cross6, cube26, dilate, erode, \
    morphological_gradient
from dragdrop.propagation import MarkerSet, PropagationConfig, propagate, watershed
from dragdrop.service.app import create_app, replay_log
from dragdrop.volume import load_label, save_volume


@contextlib.contextmanager
def criterion(capsys, num, name):
    try:
        yield
    except BaseException:
        with capsys.disabled():
            print(f"[criterion {num}] {name}: FAIL")
        raise
    with capsys.disabled():
        print(f"[criterion {num}] {name}: PASS")


@pytest.fixture(scope="module")
def prop_cache():
    return {}


def _run_suite(small_suite, cache, **cfg_kw):
    """Propagate every positive suite case under the given config; cached."""
    key = tuple(sorted(cfg_kw.items()))
    if key not in cache:
        cfg = PropagationConfig(**cfg_kw)
        results = []
        t0 = time.perf_counter()
        for vol, gt, spec in small_suite:
            if spec.negative_case:
                continue
            anns = simulate_dragdrop(gt, sigma_frac=0.0, seed=0)
            pl = propagate(vol, anns, cfg)
            results.append((pl, gt))
        cache[key] = (results, time.perf_counter() - t0)
    return cache[key]


def _masked(pl, gt):
    return pixel_metrics(pl.foreground, gt.labels > 0, pl.uncertain)


# ---------------------------------------------------------------------------

def test_criterion_1_watershed_oracle(capsys):
    with criterion(capsys, 1, "watershed equals priority-flood oracle"):
        t0 = time.perf_counter()
        for seed in range(100):
            rng = np.random.default_rng(seed)
            dims = tuple(rng.integers(2, 7, size=3))
            grad = np.round(rng.random(dims) * 4) / 4  # coarse values force ties
            n = int(np.prod(dims))
            k = min(int(rng.integers(2, 6)), n)
            picks = rng.choice(n, size=k, replace=False)
            coords = np.stack(np.unravel_index(picks, dims), axis=1)
            split = max(1, k // 2)
            lesion, background = coords[:split], coords[split:]
            conn = 6 if seed % 2 == 0 else 26
            got = watershed(grad, MarkerSet(lesion, background), conn)
            want = flood_oracle(grad, lesion, background, conn)
            assert np.array_equal(got, want), f"seed {seed} conn {conn}"
        assert time.perf_counter() - t0 < 5.0


def test_criterion_2_morphology_oracles(capsys):
    with criterion(capsys, 2, "morphology matches naive definitions"):
        ses = [cross6(), cube26(), ball(1.5)]
        for seed in range(50):
            rng = np.random.default_rng(seed)
            dims = tuple(rng.integers(2, 9, size=3))
            mask = rng.random(dims) < 0.4
            data = rng.normal(size=dims).astype(np.float32)
            se = ses[seed % 3]
            assert np.array_equal(dilate(mask, se), naive_dilate(mask, se.offsets))
            assert np.array_equal(erode(mask, se), naive_erode(mask, se.offsets))
            assert np.allclose(morphological_gradient(data, se),
                               naive_gradient(data, se.offsets), atol=1e-6)
            # duality away from the border, where clipping differs
            if min(dims) > 2:
                interior = np.zeros(dims, bool)
                interior[1:-1, 1:-1, 1:-1] = True
                er = erode(mask, se)
                du = ~dilate(~mask, se)
                assert np.array_equal(er[interior], du[interior])
            closed = erode(dilate(mask, se), se)
            assert np.all(closed[mask])  # closing contains the original


def test_criterion_3_phantom_propagation_quality(capsys, small_suite, prop_cache):
    with criterion(capsys, 3, "phantom Dice/sensitivity at default ratios"):
        results, elapsed = _run_suite(small_suite, prop_cache)
        assert len(results) == 20
        dices = []
        for pl, gt in results:
            rep = pixel_metrics(pl.foreground, gt.labels > 0)
            dices.append(rep.dice)
            assert rep.dice >= 0.80, f"per-case dice {rep.dice:.3f}"
            masked = _masked(pl, gt)
            assert masked.sensitivity >= 0.95, \
                f"masked sensitivity {masked.sensitivity:.3f}"
        assert float(np.mean(dices)) >= 0.90
        assert elapsed < 60.0


def test_criterion_4_ratio_trends(capsys, small_suite, prop_cache):
    with criterion(capsys, 4, "lesion/background ratio trends"):
        # (a) sensitivity monotone in the lesion-marker ratio
        sens = []
        for n in (0.1, 0.2, 0.4):
            results, _ = _run_suite(small_suite, prop_cache, n_ratio=n)
            sens.append(float(np.mean(
                [_masked(pl, gt).sensitivity for pl, gt in results])))
        assert sens[0] <= sens[1] <= sens[2], sens
        # (b) masked Dice non-decreasing in the uncertainty-ring ratio
        dices = []
        for m in (0.4, 0.5, 0.6):
            results, _ = _run_suite(small_suite, prop_cache, m_ratio=m)
            dices.append(float(np.mean(
                [_masked(pl, gt).dice for pl, gt in results])))
        assert dices[0] <= dices[1] <= dices[2], dices


def test_criterion_5_metric_formulas(capsys):
    with criterion(capsys, 5, "metric formulas vs hand tallies"):
        rng = np.random.default_rng(11)
        scenarios = [
            (0, 0, 0, 0), (0, 0, 0, 5), (0, 0, 3, 0), (0, 2, 0, 0),
            (1, 0, 0, 0), (0, 2, 3, 0), (5, 0, 0, 5), (0, 0, 4, 6),
        ]
        while len(scenarios) < 20:
            scenarios.append(tuple(int(x) for x in rng.integers(0, 9, 4)))
        for tp, fp, fn, tn in scenarios:
            rep = DetectionReport.from_counts(
                "pixel", ConfusionCounts(tp, fp, fn, tn), with_dice=True)

            def ratio(num, den):
                return num / den if den else None

            assert rep.sensitivity == ratio(tp, tp + fn)
            assert rep.specificity == ratio(tn, tn + fp)
            assert rep.precision == ratio(tp, tp + fp)
            assert rep.f1 == ratio(2 * tp, 2 * tp + fp + fn)
            assert rep.dice == rep.f1  # Dice coincides with F1 on voxel counts
            if rep.precision and rep.sensitivity:
                harmonic = 2 * rep.precision * rep.sensitivity / (
                    rep.precision + rep.sensitivity)
                assert rep.f1 == pytest.approx(harmonic)


def test_criterion_6_froc_properties(capsys):
    with criterion(capsys, 6, "FROC monotone / perfect / sweep oracle"):
        crit = MatchCriterion("any_overlap")
        # perfect detector reaches (0, 1.0)
        gt = np.zeros((8, 8, 8), np.int32)
        gt[2:4, 2:4, 2:4] = 1
        curve = froc([((gt > 0).astype(np.float64), gt)], crit)
        assert (0.0, 1.0) in set(zip(curve.fp_per_case, curve.sensitivity))
        # constructed batch where lowering the threshold only ever adds
        # detections: lesion peaks live on positive cases, the false-positive
        # peak on a negative case, so components never merge across kinds
        def peak_case(score, positive):
            g = np.zeros((12, 12, 12), np.int32)
            if positive:
                g[2:5, 2:5, 2:5] = 1
            c = np.zeros((12, 12, 12))
            c[3, 3, 3] = score
            return (c, g)

        cases = [peak_case(0.9, True), peak_case(0.6, False),
                 peak_case(0.3, True)]
        curve = froc(cases, crit)
        assert all(a >= b for a, b in
                   zip(curve.sensitivity[1:], curve.sensitivity[:-1]))
        assert all(a >= b for a, b in
                   zip(curve.fp_per_case[1:], curve.fp_per_case[:-1]))
        # 2-case batch vs exhaustive sweep
        from dragdrop.components import connected_components

        two = cases[:2]
        curve = froc(two, crit)
        for t, fp, sen in zip(curve.thresholds, curve.fp_per_case,
                              curve.sensitivity):
            tp_o = fp_o = n_gt = 0
            for conf, g in two:
                plv, _ = connected_components(conf >= t, 26)
                glv, _ = connected_components(g > 0, 26)
                hits, unmatched = match_lesions(plv.labels, glv.labels, crit)
                tp_o += sum(1 for k in hits if hits[k])
                fp_o += len(unmatched)
                n_gt += len(hits)
            assert fp == pytest.approx(fp_o / 2)
            assert sen == pytest.approx(tp_o / n_gt)


def test_criterion_7_simulation_contracts(capsys, small_suite):
    with criterion(capsys, 7, "simulation contracts on the suite"):
        positives = [(v, g) for v, g, s in small_suite if not s.negative_case]
        for vol, gt in positives:
            spacing = np.asarray(gt.spacing)
            coords = np.stack(np.nonzero(gt.labels > 0), axis=1)
            for ann in simulate_dragdrop(gt, sigma_frac=0.05, seed=1):
                d = np.linalg.norm(coords * spacing - np.asarray(ann.center_mm),
                                   axis=1)
                assert d.max() <= ann.radius_mm + 1e-9  # encompassment
            for it in simulate_bbox(gt).items:
                assert it["lo"] == [int(v) for v in coords.min(axis=0)]
                assert it["hi"] == [int(v) for v in coords.max(axis=0)]
            comp_set = {tuple(v) for v in coords}
            for it in simulate_points(gt, seed=2).items:
                for p in it["points"]:
                    v = tuple(p["voxel"])
                    assert all(it_lo <= v[a] <= it_hi for a, (it_lo, it_hi)
                               in enumerate(zip(coords.min(axis=0),
                                                coords.max(axis=0))))
                    assert p["positive"] == (v in comp_set)
            for it in simulate_scribbles(gt, seed=3).items:
                z = it["slice_index"]
                for x, y in it["foreground"]:
                    assert gt.labels[x, y, z] > 0
                for x, y in it["background"]:
                    assert gt.labels[x, y, z] == 0
        # planted-ellipse recovery, noiseless then jittered
        rng = np.random.default_rng(5)
        for trial in range(10):
            cx, cy = rng.uniform(-10, 10, 2)
            a = rng.uniform(4.0, 9.0)
            b = rng.uniform(2.0, a)
            th = rng.uniform(0, np.pi)
            t = np.linspace(0, 2 * np.pi, 40, endpoint=False)
            rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
            pts = (rot @ np.stack([a * np.cos(t), b * np.sin(t)])).T + (cx, cy)
            clean = fit_ellipse(pts)
            assert np.allclose(clean.center2d, (cx, cy), atol=1e-6)
            assert np.allclose(clean.semi_axes, (a, b), atol=1e-6)
            noisy = fit_ellipse(pts + rng.normal(0, 0.01, pts.shape))
            assert np.allclose(noisy.semi_axes, (a, b), rtol=5e-2)
        # ellipse simulation runs cleanly on every positive suite case
        for vol, gt in positives:
            aset = simulate_ellipse(gt)
            (item,) = aset.items
            assert item["semi_axes"][0] >= item["semi_axes"][1] > 0


def test_criterion_8_determinism_and_replay(capsys, tmp_path, small_suite):
    with criterion(capsys, 8, "CLI determinism; service replay and equality"):
        vol, gt, spec = small_suite[0]
        case = tmp_path / "case"
        case.mkdir()
        (case / "spec.json").write_text(spec.to_json() + "\n")
        assert cli_main(["phantom", "--spec", str(case / "spec.json"),
                         "--seed", "7", "--out-dir", str(case)]) == 0
        ann = tmp_path / "ann.json"
        assert cli_main(["simulate", "--gt", str(case / "gt.f32"),
                         "--kind", "dragdrop", "--sigma-frac", "0",
                         "--out", str(ann)]) == 0
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert cli_main(["propagate", "--volume", str(case / "volume.f32"),
                             "--annotations", str(ann),
                             "--out-dir", str(out)]) == 0
            outs.append({
                p.name: p.read_bytes()
                for p in sorted(out.iterdir()) if p.name != "manifest.json"
            })
        assert outs[0] == outs[1]  # byte-identical label/config outputs
        cli_fg = load_label(tmp_path / "a" / "foreground.f32")

        app = create_app(tmp_path / "svc")
        with TestClient(app) as client:
            nii = tmp_path / "v.nii"
            save_volume(vol, nii, format="nifti1")
            vid = client.post("/v1/volumes", content=nii.read_bytes()
                              ).json()["volume_id"]
            sid = client.post("/v1/sessions",
                              json={"volume_id": vid}).json()["session_id"]
            anns = simulate_dragdrop(gt, sigma_frac=0.0, seed=0)
            for a in anns:
                r = client.post(f"/v1/sessions/{sid}/annotations",
                                json={"center_mm": list(a.center_mm),
                                      "radius_mm": a.radius_mm})
                assert r.status_code == 200
            assert client.post(f"/v1/sessions/{sid}/propagate").status_code == 202
            for _ in range(600):
                if client.get(f"/v1/sessions/{sid}/status"
                              ).json()["state"] == "done":
                    break
                time.sleep(0.02)
            r = client.get(f"/v1/sessions/{sid}/export",
                           params={"part": "foreground"})
            fg_path = tmp_path / "svc_fg.nii"
            fg_path.write_bytes(r.content)
            svc_fg = load_label(fg_path)
            assert np.array_equal(svc_fg.labels, cli_fg.labels)
            log = client.get(f"/v1/sessions/{sid}/log").json()["log"]
            rebuilt = replay_log(vol, log)
            assert np.array_equal(rebuilt.class_labels, svc_fg.labels)


def test_criterion_9_negative_cases(capsys, small_suite):
    with criterion(capsys, 9, "negative cases stay empty; Spe = 1.0"):
        negatives = [(v, g) for v, g, s in small_suite if s.negative_case]
        assert len(negatives) == 10
        cases = []
        for vol, gt in negatives:
            pl = propagate(vol, [], PropagationConfig())
            assert not pl.foreground.any()
            assert not pl.uncertain.any()
            cases.append(Case(pl.class_labels, gt.labels))
        rep = patient_level_metrics(cases)
        assert rep.specificity == 1.0
        assert rep.counts.fp == 0
