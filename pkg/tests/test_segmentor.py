import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from lsdefect.annotset import AnnotationFormatError, rle_encode
from lsdefect.classes import ALL_CLASSES, BRIDGE_CLASSES, DefectClass
from lsdefect.kernels import BBox, mask_iou
from lsdefect.segmentor import (
    DefectInstance,
    NoPatternError,
    PatternModel,
    RuleBasedSegmentor,
    RuleConfig,
    UnclassifiableError,
    classify_instance,
    detect,
    detect_instances,
    dump_predictions,
    estimate_pattern,
    load_predictions,
    otsu_threshold,
)
from lsdefect.synthline import DefectSpec, SceneSpec, random_defect, render_clean_pattern, render_sample

MODEL = PatternModel(pitch=32, line_width=16, phase=8, threshold=125.0)


def otsu_brute(img):
    """Middle of the levels maximizing between-class variance, found by trying every level."""
    vals = np.asarray(img).ravel().astype(float)
    scores = {}
    for t in range(256):
        lo, hi = vals[vals <= t], vals[vals > t]
        if lo.size and hi.size:
            scores[t] = lo.size * hi.size * (lo.mean() - hi.mean()) ** 2
    top = max(scores.values())
    ties = [t for t, v in scores.items() if v >= top * (1 - 1e-12)]
    return sum(ties) / len(ties)


class TestEstimatePattern:
    def test_pitch_32(self):
        m = estimate_pattern(render_clean_pattern(SceneSpec()))
        assert abs(m.pitch - 32) <= 1
        assert (m.pitch, m.line_width, m.phase) == (32, 16, 8)

    def test_pitch_16_noisy(self):
        img = render_clean_pattern(SceneSpec(pitch=16, line_width=8, noise_sigma=10, seed=3))
        m = estimate_pattern(img)
        assert abs(m.pitch - 16) <= 1

    @pytest.mark.parametrize("pitch,lw,w", [(20, 7, 400), (48, 30, 480), (24, 12, 250)])
    def test_other_geometry(self, pitch, lw, w):
        spec = SceneSpec(width=w, height=64, pitch=pitch, line_width=lw, noise_sigma=6, edge_roughness_amp=1, seed=2)
        m = estimate_pattern(render_clean_pattern(spec))
        assert (m.pitch, m.line_width, m.phase) == (pitch, lw, spec.offset)

    def test_constant(self):
        with pytest.raises(NoPatternError):
            estimate_pattern(np.full((64, 64), 120, np.uint8))

    def test_empty(self):
        with pytest.raises((NoPatternError, ValueError)):
            estimate_pattern(np.zeros((0, 0), np.uint8))

    def test_otsu_matches_brute(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            img = np.concatenate([rng.normal(60, 12, 300), rng.normal(180, 20, 200)]).clip(0, 255).astype(np.uint8)
            assert otsu_threshold(img) == pytest.approx(otsu_brute(img))

    def test_model_validation(self):
        with pytest.raises(ValueError):
            PatternModel(pitch=16, line_width=16, phase=0)
        with pytest.raises(ValueError):
            PatternModel(pitch=16, line_width=8, phase=16)


class TestClassify:
    def comp(self, y0, y1, x0, x1):
        m = np.zeros((480, 480), bool)
        m[y0:y1, x0:x1] = True
        return m

    def test_thin(self):
        assert classify_instance(self.comp(100, 104, 24, 40), MODEL) is DefectClass.THIN_BRIDGE

    def test_single(self):
        assert classify_instance(self.comp(100, 108, 24, 40), MODEL) is DefectClass.SINGLE_BRIDGE

    def test_multi_h_three_spaces(self):
        m = self.comp(100, 108, 24, 40) | self.comp(100, 108, 56, 72) | self.comp(100, 108, 88, 104)
        assert classify_instance(m, MODEL) is DefectClass.MULTI_BRIDGE_H

    def test_multi_h_tolerance(self):
        m = self.comp(100, 108, 24, 40) | self.comp(103, 111, 56, 72)
        assert classify_instance(m, MODEL) is DefectClass.MULTI_BRIDGE_H
        m = self.comp(100, 108, 24, 40) | self.comp(104, 112, 56, 72)
        assert classify_instance(m, MODEL) is DefectClass.MULTI_BRIDGE_NH

    def test_break(self):
        assert classify_instance(self.comp(200, 208, 40, 56), MODEL) is DefectClass.LINE_BREAK

    def test_collapse_before_bridge(self):
        assert classify_instance(self.comp(100, 228, 24, 40), MODEL) is DefectClass.LINE_COLLAPSE
        assert classify_instance(self.comp(100, 227, 24, 40), MODEL) is DefectClass.SINGLE_BRIDGE

    def test_unclassifiable(self):
        with pytest.raises(UnclassifiableError):
            classify_instance(self.comp(100, 108, 24, 40) | self.comp(100, 108, 88, 104), MODEL)
        with pytest.raises(UnclassifiableError):
            classify_instance(self.comp(100, 108, 8, 24) | self.comp(100, 108, 40, 56), MODEL)

    def test_empty(self):
        with pytest.raises(ValueError):
            classify_instance(np.zeros((8, 8), bool), MODEL)


def gt_masks(ann):
    return list(zip((i.defect_class for i in ann.instances), ann.masks()))


class TestDetect:
    def test_clean_empty(self):
        assert detect_instances(render_clean_pattern(SceneSpec()), MODEL) == []

    def test_clean_random_no_false_positives(self):
        for seed in range(100):
            spec = SceneSpec(seed=seed, edge_roughness_amp=seed % 3)
            assert RuleBasedSegmentor().predict(render_clean_pattern(spec)) == []

    def test_single_bridge(self):
        img, ann = render_sample(SceneSpec(), [DefectSpec(DefectClass.SINGLE_BRIDGE, 5, 240, 12)])
        out = RuleBasedSegmentor().predict(img)
        assert len(out) == 1 and out[0].defect_class is DefectClass.SINGLE_BRIDGE
        assert mask_iou(out[0].mask, ann.masks()[0]) >= 0.9

    def test_thin_bridge_and_break(self):
        img, ann = render_sample(
            SceneSpec(), [DefectSpec(DefectClass.THIN_BRIDGE, 2, 60, 4), DefectSpec(DefectClass.LINE_BREAK, 9, 300, 8)]
        )
        out = RuleBasedSegmentor().predict(img)
        assert sorted(i.defect_class.value for i in out) == ["line_break", "thin_bridge"]

    @pytest.mark.parametrize("cls", ALL_CLASSES)
    def test_closed_loop_zero_noise(self, cls):
        rng = np.random.default_rng(cls.category_id)
        for seed in range(25):
            spec = SceneSpec(seed=seed)
            img, ann = render_sample(spec, [random_defect(cls, spec, rng)])
            out = RuleBasedSegmentor().predict(img)
            assert len(out) == 1, (seed, [o.defect_class for o in out])
            assert out[0].defect_class is cls
            bound = 0.99 if cls in BRIDGE_CLASSES else 0.9
            assert mask_iou(out[0].mask, ann.masks()[0]) >= bound

    def test_closed_loop_mixed(self):
        rng = np.random.default_rng(99)
        for seed in range(20):
            spec = SceneSpec(seed=seed)
            defects = []
            for c in rng.permutation(ALL_CLASSES)[:3]:
                d = random_defect(DefectClass(c), spec, rng)
                try:
                    _, probe = render_sample(spec, defects + [d])
                except ValueError:
                    continue
                # bridges in neighbouring spaces at shared rows read as one bridge, so keep a line's width apart
                grown = [ndimage.binary_dilation(m, iterations=spec.line_width + 2) for m in probe.masks()]
                if any(np.any(grown[-1] & g) for g in grown[:-1]):
                    continue
                defects.append(d)
            img, ann = render_sample(spec, defects)
            out = RuleBasedSegmentor().predict(img)
            assert sorted(o.defect_class.value for o in out) == sorted(d.defect_class.value for d in defects)

    def test_sorted_and_scored(self):
        spec = SceneSpec(noise_sigma=10, seed=1)
        img, _ = render_sample(
            spec, [DefectSpec(DefectClass.SINGLE_BRIDGE, 1, 40, 10), DefectSpec(DefectClass.LINE_BREAK, 8, 300, 10)]
        )
        out = RuleBasedSegmentor().predict(img)
        scores = [o.score for o in out]
        assert scores == sorted(scores, reverse=True)
        assert all(0 < s <= 1 for s in scores)

    def test_min_area_monotone(self):
        spec = SceneSpec(noise_sigma=25, edge_roughness_amp=2, seed=4)
        rng = np.random.default_rng(4)
        img, _ = render_sample(spec, [random_defect(c, spec, rng) for c in (DefectClass.THIN_BRIDGE, DefectClass.LINE_BREAK)])
        model = estimate_pattern(img)
        counts = [len(detect_instances(img, model, RuleConfig(min_area=a))) for a in (0, 1, 4, 8, 16, 40, 64, 200, 10**6)]
        assert counts == sorted(counts, reverse=True)
        assert counts[-1] == 0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from(ALL_CLASSES), st.floats(0, 20))
    def test_bbox_tight(self, seed, cls, sigma):
        spec = SceneSpec(seed=seed, noise_sigma=sigma, edge_roughness_amp=1)
        img, _ = render_sample(spec, [random_defect(cls, spec, np.random.default_rng(seed))])
        for inst in RuleBasedSegmentor().predict(img):
            b = inst.bbox
            assert b == BBox.from_mask(inst.mask)
            x0, y0, x1, y1 = (int(v) for v in b.as_xyxy())
            assert inst.mask[y0:y1, x0].any() and inst.mask[y0:y1, x1 - 1].any()
            assert inst.mask[y0, x0:x1].any() and inst.mask[y1 - 1, x0:x1].any()
            assert inst.mask.sum() == inst.mask[y0:y1, x0:x1].sum()

    def test_rejects_reported(self):
        img = render_clean_pattern(SceneSpec())
        img[100:110, 24:40] = 200
        img[100:110, 88:104] = 200
        img[100:110, 40:88] = 200  # bright slab across lines 1-2 and spaces 1-2
        img[100:110, 56:72] = 50  # hole in space 1 splits the row bands
        found, rejects = detect(img, MODEL)
        assert len(found) + len(rejects) >= 1

    def test_bright_polarity_only(self):
        with pytest.raises(ValueError):
            detect(np.zeros((8, 8), np.uint8), PatternModel(4, 2, 0, polarity=False))


class TestInstance:
    def test_validation(self):
        m = np.zeros((4, 4), bool)
        with pytest.raises(ValueError):
            DefectInstance.from_mask(DefectClass.LINE_BREAK, 0.5, m)
        m[1, 1] = True
        with pytest.raises(ValueError):
            DefectInstance.from_mask(DefectClass.LINE_BREAK, 1.5, m)
        inst = DefectInstance.from_mask(DefectClass.LINE_BREAK, 0.5, m)
        assert inst.bbox == BBox(1, 1, 2, 2) and inst.area == 1


def record(cat=2, score=0.97, counts=None, size=(4, 4), image_id="img"):
    if counts is None:
        m = np.zeros(size, bool)
        m[1:3, 1:3] = True
        counts = list(rle_encode(m).counts)
    return json.dumps(
        {"image_id": image_id, "category_id": cat, "score": score, "bbox": [0, 0, 1, 1], "segmentation": {"size": list(size), "counts": counts}}
    )


class TestPredictionFile:
    def test_one_record(self):
        preds = load_predictions(record() + "\n")
        (inst,) = preds["img"]
        assert inst.defect_class is DefectClass.SINGLE_BRIDGE
        assert inst.score == 0.97
        # bbox recomputed from the mask, not copied from the record
        assert inst.bbox == BBox(1, 1, 3, 3)

    def test_empty(self):
        assert load_predictions("") == {}
        assert load_predictions("\n\n") == {}

    def test_bad_rle_names_index(self):
        doc = record() + "\n" + record(counts=[3, 4]) + "\n"
        with pytest.raises(AnnotationFormatError, match="record 1"):
            load_predictions(doc)

    @pytest.mark.parametrize("kwargs", [{"cat": 0}, {"cat": 7}, {"cat": "2"}, {"score": 1.2}, {"score": -0.1}])
    def test_bad_fields(self, kwargs):
        with pytest.raises(AnnotationFormatError, match="record 0"):
            load_predictions(record(**kwargs))

    def test_not_json(self):
        with pytest.raises(AnnotationFormatError, match="record 0"):
            load_predictions("{oops")

    def test_roundtrip(self):
        spec = SceneSpec(noise_sigma=5, seed=8)
        rng = np.random.default_rng(8)
        img, _ = render_sample(spec, [random_defect(DefectClass.MULTI_BRIDGE_NH, spec, rng)])
        preds = {"a": RuleBasedSegmentor().predict(img)}
        back = load_predictions(dump_predictions(preds))
        assert len(back["a"]) == len(preds["a"])
        for p, q in zip(preds["a"], back["a"]):
            assert p.defect_class is q.defect_class and p.score == q.score and p.bbox == q.bbox
            np.testing.assert_array_equal(p.mask, q.mask)
