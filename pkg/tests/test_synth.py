import numpy as np
import pytest

from slmprop.errors import SpecInvalid
from slmprop.synth import (
    DEFAULT_TEMPLATES,
    LabeledCase,
    ScenarioKind,
    ScenarioSpec,
    generate_case,
    generate_multi_case,
    generate_split,
    scenario_suite,
)


def present_slices(case: LabeledCase):
    return [k for k in range(case.mask.dims[0]) if case.mask.labels[k].any()]


def test_simple_blob_presence_matches_ranges():
    spec = ScenarioSpec(ScenarioKind.SIMPLE_BLOB, dims=(16, 64, 64), present_ranges=((4, 11),), seed=3)
    case = generate_case(spec)
    assert present_slices(case) == list(range(4, 12))
    assert case.volume.dims == (16, 64, 64)


def test_determinism():
    spec = ScenarioSpec(ScenarioKind.ADJACENT_DISTRACTOR, seed=7, present_ranges=((4, 13),))
    a = generate_case(spec)
    b = generate_case(spec)
    np.testing.assert_array_equal(a.volume.voxels, b.volume.voxels)
    np.testing.assert_array_equal(a.mask.labels, b.mask.labels)


def test_gap_reappear_presence():
    spec = ScenarioSpec(ScenarioKind.GAP_REAPPEAR, dims=(16, 64, 64),
                        present_ranges=((2, 5), (9, 12)), seed=1)
    case = generate_case(spec)
    got = present_slices(case)
    assert got == list(range(2, 6)) + list(range(9, 13))
    for k in range(6, 9):
        assert not case.mask.labels[k].any()


def test_invalid_ranges_raise():
    with pytest.raises(SpecInvalid):
        generate_case(ScenarioSpec(ScenarioKind.SIMPLE_BLOB, dims=(8, 64, 64), present_ranges=((2, 9),)))
    with pytest.raises(SpecInvalid):
        generate_case(ScenarioSpec(ScenarioKind.SIMPLE_BLOB, present_ranges=((5, 3),)))
    with pytest.raises(SpecInvalid):
        generate_case(ScenarioSpec(ScenarioKind.SIMPLE_BLOB, present_ranges=((2, 5), (5, 8))))


def test_intensities_in_range():
    for kind, template in DEFAULT_TEMPLATES.items():
        case = generate_case(template)
        assert case.volume.voxels.min() >= 0.0
        assert case.volume.voxels.max() <= 255.0


def test_distractor_present_after_target_end_and_disjoint_from_gt():
    spec = ScenarioSpec(ScenarioKind.ADJACENT_DISTRACTOR, seed=11, present_ranges=((4, 13),))
    case = generate_case(spec)
    # ground truth empty past the end even though a bright structure is there
    last = 13
    post = case.volume.voxels[last + 1]
    assert post.max() > 140, "distractor should be bright"
    assert not case.mask.labels[last + 1 :].any()
    # same-seed simple blob has no such structure
    plain = generate_case(ScenarioSpec(ScenarioKind.SIMPLE_BLOB, seed=11, present_ranges=((4, 13),)))
    assert post.max() > plain.volume.voxels[last + 1].max() + 50


def test_area_smoothness():
    # smoothness contract holds at the default desk-scale templates; tiny
    # volumes quantize too coarsely for a meaningful per-slice area ratio
    rng = np.random.default_rng(0)
    for kind in ScenarioKind:
        template = DEFAULT_TEMPLATES[kind]
        for seed in rng.integers(0, 10_000, size=8):
            case = generate_case(ScenarioSpec(kind, present_ranges=template.present_ranges, seed=int(seed)))
            for a, b in case.spec.present_ranges:
                areas = [int(case.mask.labels[k].sum()) for k in range(a, b + 1)]
                for x, y in zip(areas, areas[1:]):
                    assert abs(y - x) / max(x, y, 1) < 0.5, (kind, areas)


def test_generate_split_counts_and_determinism():
    template = DEFAULT_TEMPLATES[ScenarioKind.SIMPLE_BLOB]
    train, test = generate_split(template, 5, 20, seed=42)
    assert len(train) == 5 and len(test) == 20
    seeds = [c.spec.seed for c in train + test]
    assert len(set(seeds)) == 25
    train2, test2 = generate_split(template, 5, 20, seed=42)
    for a, b in zip(train + test, train2 + test2):
        np.testing.assert_array_equal(a.volume.voxels, b.volume.voxels)


def test_generate_split_single_volume_setting():
    train, test = generate_split(DEFAULT_TEMPLATES[ScenarioKind.SIMPLE_BLOB], 1, 2, seed=0)
    assert len(train) == 1


def test_scenario_suite_mixes_kinds():
    train, test = scenario_suite(
        ["AdjacentDistractor", "GapReappear"], n_train=4, n_test=4, seed=5, dims=(24, 32, 32))
    kinds = {c.spec.kind for c in train}
    assert kinds == {ScenarioKind.ADJACENT_DISTRACTOR, ScenarioKind.GAP_REAPPEAR}
    for c in train + test:
        assert c.volume.dims == (24, 32, 32)
        assert present_slices(c)


def test_multi_case_disjoint_objects():
    spec = ScenarioSpec(ScenarioKind.SIMPLE_BLOB, seed=9, present_ranges=((5, 16),))
    case = generate_multi_case(spec, second_ranges=((7, 18),))
    assert set(np.unique(case.mask.labels)) <= {0, 1, 2}
    assert (case.mask.labels == 1).any() and (case.mask.labels == 2).any()
    assert not ((case.mask.labels == 1) & (case.mask.labels == 2)).any()
