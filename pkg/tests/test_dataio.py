import math

import numpy as np
import pytest

from popgnn.cohort import RoiFeatureTable, SubjectRecord
from popgnn.dataio import (
    CohortBundle,
    CohortError,
    SynthConfig,
    generate_synthetic,
    load_cohort,
    load_cohort_dir,
    save_cohort,
)

SUBJECTS = "id,label,gender,age,apoe4,mmse,split\nA1,NC,M,70.5,0,29,train\nB2,AD,F,75.0,2,22,test\n"
FEATURES = "id,roi_1,roi_2\nA1,1.0,2.0\nB2,3.5,-4.0\n"


def _write(tmp_path, subjects=SUBJECTS, features=FEATURES):
    s = tmp_path / "subjects.csv"
    f = tmp_path / "pet.csv"
    s.write_text(subjects)
    f.write_text(features)
    return s, f


def test_minimal_cohort(tmp_path):
    s, f = _write(tmp_path)
    b = load_cohort(s, {"PET_SUVR": f})
    assert len(b.subjects) == 2
    assert b.subjects[1] == SubjectRecord("B2", "AD", "F", 75.0, 2, 22, "test")
    assert np.array_equal(b.table("PET_SUVR").values, [[1.0, 2.0], [3.5, -4.0]])


def test_split_column_optional(tmp_path):
    s, f = _write(tmp_path, "id,label,gender,age,apoe4,mmse\nA1,NC,M,70,0,29\nB2,AD,F,75,1,22\n")
    assert all(x.split is None for x in load_cohort(s, {"PET_SUVR": f}).subjects)


def test_feature_rows_reordered_to_subject_order(tmp_path):
    s, f = _write(tmp_path, features="id,roi_1,roi_2\nB2,3.5,-4.0\nA1,1.0,2.0\n")
    assert load_cohort(s, {"PET_SUVR": f}).table("PET_SUVR").ids == ["A1", "B2"]


@pytest.mark.parametrize(
    "subjects,features,pattern",
    [
        (SUBJECTS, "id,roi_1,roi_2\nA1,1,2\nZZ9,3,4\n", r"pet.csv:3: unknown subject id 'ZZ9'"),
        (SUBJECTS, "id,roi_1,roi_2\nA1,1,2\nB2,x,4\n", r"pet.csv:3: non-numeric value 'x'"),
        (SUBJECTS, "id,roi_1,roi_2\nA1,1,2\nB2,nan,4\n", r"pet.csv:3: non-finite"),
        (SUBJECTS, "id,roi_1,roi_2\nA1,1,2\n", r"no row for subject id 'B2'"),
        (SUBJECTS, "id,roi_1,roi_2\nA1,1,2\nB2,3\n", r"pet.csv:3: expected 3 fields"),
        (SUBJECTS + "A1,NC,M,70,0,29,val\n", FEATURES, r"subjects.csv:4: duplicate subject id 'A1'"),
        ("id,label,gender,age,apoe4,mmse,split\nA1,XX,M,70,0,29,train\n", FEATURES, r"subjects.csv:2: .*label"),
        ("id,label,gender,age,apoe4,mmse,split\nA1,NC,M,70,0,35,train\n", FEATURES, r"subjects.csv:2: MMSE"),
        ("id,label,gender,age,apoe4,mmse,split\nA1,NC,M,70,0,29.5,train\n", FEATURES, r"subjects.csv:2: MMSE"),
        ("id,label,sex,age,apoe4,mmse\n", FEATURES, r"subjects.csv:1: expected header"),
        ("id,label,gender,age,apoe4,mmse,split\nA1,NC,M,70,0,29,holdout\n", FEATURES, r"subjects.csv:2: .*split"),
    ],
)
def test_loader_errors_name_location(tmp_path, subjects, features, pattern):
    s, f = _write(tmp_path, subjects, features)
    with pytest.raises(CohortError, match=pattern):
        load_cohort(s, {"PET_SUVR": f})


def test_missing_file(tmp_path):
    with pytest.raises(CohortError, match="cannot open"):
        load_cohort(tmp_path / "nope.csv", {})


def test_bundle_rejects_duplicate_subjects():
    s = SubjectRecord("A", "NC", "M", 70.0, 0, 29, "train")
    with pytest.raises(ValueError, match="more than once"):
        CohortBundle([s, SubjectRecord("A", "NC", "M", 70.0, 0, 29, "test")], {})


def test_bundle_rejects_unknown_rows():
    s = SubjectRecord("A", "NC", "M", 70.0, 0, 29)
    with pytest.raises(ValueError, match="unknown subject 'B'"):
        CohortBundle([s], {"PET_SUVR": RoiFeatureTable(["A", "B"], np.ones((2, 2)))})


def test_round_trip_synthetic(tmp_path):
    b = generate_synthetic(SynthConfig(n_per_class=15, p_rois=6, seed=3))
    save_cohort(b, tmp_path)
    loaded = load_cohort_dir(tmp_path)
    assert loaded.subjects == b.subjects
    for m, t in b.roi_tables.items():
        assert loaded.roi_tables[m].ids == t.ids
        assert loaded.roi_tables[m].columns == t.columns
        assert np.array_equal(loaded.roi_tables[m].values, t.values)


def test_generator_deterministic():
    cfg = SynthConfig(n_per_class=20, p_rois=5, seed=11)
    a, b = generate_synthetic(cfg), generate_synthetic(cfg)
    assert a.subjects == b.subjects
    for m in a.roi_tables:
        assert np.array_equal(a.roi_tables[m].values, b.roi_tables[m].values)
    c = generate_synthetic(SynthConfig(n_per_class=20, p_rois=5, seed=12))
    assert not np.array_equal(a.roi_tables["PET_SUVR"].values, c.roi_tables["PET_SUVR"].values)


def test_generator_phenotype_ranges():
    b = generate_synthetic(SynthConfig(n_per_class=300, p_rois=4, seed=1))
    assert all(10 <= s.mmse <= 30 for s in b.subjects)
    assert all(55 <= s.age <= 95 for s in b.subjects)
    assert {s.gender for s in b.subjects} == {"M", "F"}
    assert sum(s.label == "AD" for s in b.subjects) == 300


def test_ad_mmse_mean_matches_cohort_statistics():
    b = generate_synthetic(SynthConfig(n_per_class=500, p_rois=3, seed=0))
    ad = [s.mmse for s in b.subjects if s.label == "AD"]
    assert abs(np.mean(ad) - 23.21) < 0.5


def test_smci_pmci_has_nc_reference():
    b = generate_synthetic(SynthConfig(n_per_class=30, p_rois=4, task="SMCI_PMCI", n_reference=12))
    counts = {lab: sum(s.label == lab for s in b.subjects) for lab in ("NC", "sMCI", "pMCI")}
    assert counts == {"NC": 12, "sMCI": 30, "pMCI": 30}


def _class_rows(bundle, modality, label):
    rows = [i for i, s in enumerate(bundle.subjects) if s.label == label]
    return bundle.roi_tables[modality].values[rows]


def test_class_means_converge():
    """Each configured class-conditional level within 3 standard errors at n=1000.

    A level is the baseline or shifted mean of one modality and class; it is
    estimated from the per-subject average over the ROIs that share it.
    """
    b = generate_synthetic(SynthConfig(n_per_class=1000, p_rois=10, effect_size=1.5, seed=5))
    affected = np.zeros(10, bool)
    affected[b.provenance["affected_rois"]] = True
    levels = {  # (modality, class, ROI group) -> configured mean
        ("PET_SUVR", "NC", False): 1.0,
        ("PET_SUVR", "AD", False): 1.0,
        ("PET_SUVR", "AD", True): 1.0 - 0.1 * 1.5,
        ("SMRI_GM", "NC", False): 5.0,
        ("SMRI_GM", "AD", False): 5.0,
        ("SMRI_GM", "AD", True): 5.0 - 0.5 * 1.5,
        ("SMRI_WM", "NC", False): 4.0,
        ("SMRI_WM", "AD", False): 4.0,
        ("SMRI_WM", "AD", True): 4.0 - 0.4 * 0.75,
    }
    for (modality, label, group), mu in levels.items():
        cols = affected if group else ~affected
        if label == "NC":
            cols = np.ones(10, bool)
        per_subject = _class_rows(b, modality, label)[:, cols].mean(axis=1)
        se = per_subject.std(ddof=1) / math.sqrt(per_subject.size)
        assert abs(per_subject.mean() - mu) <= 3 * se, (modality, label, group)


def test_null_effect_classes_indistinguishable():
    b = generate_synthetic(SynthConfig(n_per_class=400, p_rois=8, effect_size=0.0, seed=2))
    for modality in ("PET_SUVR", "SMRI_GM", "SMRI_WM"):
        nc, ad = _class_rows(b, modality, "NC"), _class_rows(b, modality, "AD")
        se = np.sqrt(nc.var(axis=0, ddof=1) / len(nc) + ad.var(axis=0, ddof=1) / len(ad))
        z = (nc.mean(axis=0) - ad.mean(axis=0)) / se
        # 24 two-sample z tests; a 4-sigma miss is vanishingly unlikely under the null
        assert np.all(np.abs(z) < 4)


def test_synth_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(p_rois=1)
    with pytest.raises(ValueError):
        SynthConfig(task="AD_MCI")
