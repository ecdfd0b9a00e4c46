import pytest

from confounder_forge.causal.data import (
    ALWAYS_TAKER,
    COMPLIER,
    NEVER_TAKER,
    UNKNOWN,
    CovariateInfo,
    DataError,
    Dataset,
    Observation,
    infer_compliance,
    load_dataset,
)


# ------------------------------------------------------- compliance labels


@pytest.mark.parametrize(
    "z,w,want",
    [
        (0, (0.0,), UNKNOWN),
        (0, (7.3,), UNKNOWN),
        (1, (3.0,), COMPLIER),
        (1, (0.0,), NEVER_TAKER),
        (1, (None,), UNKNOWN),
        (1, (0.0, None, 0.0), UNKNOWN),
        (1, (0.0, 2.0, None), COMPLIER),
        (1, (0.0, 0.0, 0.0), NEVER_TAKER),
    ],
)
def test_one_sided_labels(z, w, want):
    assert infer_compliance(z, w, "one_sided") == want


@pytest.mark.parametrize(
    "z,w,want",
    [
        (1, (0.0,), NEVER_TAKER),
        (0, (2.0,), ALWAYS_TAKER),
        (1, (2.0,), UNKNOWN),
        (0, (0.0,), UNKNOWN),
        (1, (None,), UNKNOWN),
    ],
)
def test_two_sided_labels(z, w, want):
    assert infer_compliance(z, w, "two_sided") == want


def test_dataset_overrides_supplied_labels():
    rows = [Observation(1, (4.0,), 2.0, compliance=NEVER_TAKER)]
    data = Dataset(rows)
    assert data.observations[0].compliance == COMPLIER


def test_control_arm_masked_one_sided():
    rows = [Observation(0, (0.0,), 1.0), Observation(0, (0.0,), None)]
    data = Dataset(rows)
    assert all(o.compliance == UNKNOWN for o in data)


# ------------------------------------------------------------- validation


def test_observation_rejects_bad_fields():
    with pytest.raises(DataError):
        Observation(2, (1.0,), 0.0)
    with pytest.raises(DataError):
        Observation(1, (-0.5,), 0.0)
    with pytest.raises(DataError):
        Observation(1, (1.0,), 0.0, compliance="sometimes")


def test_dataset_rejects_wrong_exposure_count():
    with pytest.raises(DataError):
        Dataset([Observation(1, (1.0, 2.0), 0.0)], n_exposures=1)


def test_covariate_schema_enforced():
    schema = (CovariateInfo("age", "numeric"),
              CovariateInfo("sex", "categorical", ("f", "m"), "f"))
    ok = Observation(1, (2.0,), 0.0, {"age": 30.0, "sex": "m"})
    Dataset([ok], schema=schema)

    with pytest.raises(DataError):
        Dataset([Observation(1, (2.0,), 0.0, {"age": 30.0})], schema=schema)
    with pytest.raises(DataError):
        Dataset([Observation(1, (2.0,), 0.0, {"age": 1.0, "sex": "x"})], schema=schema)
    with pytest.raises(DataError):
        Dataset([Observation(1, (2.0,), 0.0, {"age": 1.0, "sex": "m", "zip": 1})],
                schema=schema)
    # missing covariate value is data, not a schema violation
    Dataset([Observation(1, (2.0,), 0.0, {"age": None, "sex": None})], schema=schema)


def test_covariate_info_validation():
    with pytest.raises(DataError):
        CovariateInfo("x", "text")
    with pytest.raises(DataError):
        CovariateInfo("x", "categorical")
    with pytest.raises(DataError):
        CovariateInfo("x", "categorical", ("a", "b"), "c")


# ----------------------------------------------------------------- counts


def example_dataset():
    rows = [
        Observation(1, (4.0,), 2.0),
        Observation(1, (0.0,), 1.0),
        Observation(1, (None,), None),
        Observation(0, (0.0,), 0.5),
        Observation(0, (0.0,), None),
    ]
    return Dataset(rows)


def test_compliance_and_missing_counts():
    data = example_dataset()
    counts = data.compliance_counts()
    assert counts[(1, COMPLIER)] == 1
    assert counts[(1, NEVER_TAKER)] == 1
    assert counts[(1, UNKNOWN)] == 1
    assert counts[(0, UNKNOWN)] == 2
    missing = data.missing_counts()
    assert missing["y"] == 2 and missing["w"] == 1
    assert len(data.arm(1)) == 3 and len(data.arm(0)) == 2


# -------------------------------------------------------------------- CSV


def test_csv_roundtrip_exact(tmp_path):
    schema = (CovariateInfo("age", "numeric"),
              CovariateInfo("site", "categorical", ("a", "b"), "a"))
    rows = [
        Observation(1, (0.1 + 0.2,), -1.23456789012345e-7,
                    {"age": 31.5, "site": "b"}),
        Observation(0, (0.0,), None, {"age": None, "site": "a"}),
        Observation(1, (None,), 4.0, {"age": 2.0, "site": None}),
    ]
    data = Dataset(rows, schema=schema)
    path = tmp_path / "d.csv"
    data.to_csv(path)
    back = load_dataset(path, schema=schema)
    for orig, got in zip(data, back):
        assert got.z == orig.z
        assert got.w == orig.w
        assert got.y == orig.y
        assert got.covariates == orig.covariates
        assert got.compliance == orig.compliance


def test_csv_write_is_deterministic(tmp_path):
    data = example_dataset()
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    data.to_csv(p1)
    data.to_csv(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_dataset_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("z,y\n1,2.0\n")
    with pytest.raises(DataError):
        load_dataset(p)
    p.write_text("z,w,y\n,1.0,2.0\n")
    with pytest.raises(DataError):
        load_dataset(p)


def test_three_exposure_columns(tmp_path):
    rows = [Observation(1, (1.0, None, 0.0), 2.0)]
    data = Dataset(rows, n_exposures=3)
    assert data.exposure_columns() == ["w1", "w2", "w3"]
    path = tmp_path / "three.csv"
    data.to_csv(path)
    back = load_dataset(path, n_exposures=3)
    assert back.observations[0].w == (1.0, None, 0.0)
