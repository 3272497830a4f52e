from __future__ import annotations

import numpy as np
import pytest

from stratdp.tabular import Schema, TabularDataset, write_csv, write_schema

# (SEX, RAC1P, count) with census codes: SEX 1=male 2=female; RAC1P 1..9
RACE_SEX_COUNTS = [
    (2, 1, 70881), (1, 1, 67593), (2, 2, 12947), (1, 2, 11077),
    (2, 6, 8900), (1, 6, 8130), (2, 8, 5668), (1, 8, 5296),
    (2, 9, 3026), (1, 9, 2620), (1, 3, 277), (2, 3, 231),
    (1, 5, 125), (2, 5, 119), (1, 7, 42), (2, 7, 30),
    (2, 4, 3), (1, 4, 2),
]


@pytest.fixture(scope="session")
def race_sex_table(tmp_path_factory):
    """Census-coded SEX x RAC1P table with the NY employment-task group sizes."""
    schema = Schema.from_pairs([("SEX", 2, 1), ("RAC1P", 9, 1)])
    rows = np.concatenate([np.tile([s - 1, r - 1], (c, 1)) for s, r, c in RACE_SEX_COUNTS])
    data = TabularDataset(schema, rows)
    d = tmp_path_factory.mktemp("race_sex")
    write_schema(schema, d / "schema.txt")
    write_csv(data, d / "data.csv")
    return d / "data.csv", d / "schema.txt", data


@pytest.fixture(scope="session")
def small_census(tmp_path_factory):
    """A few thousand census-like rows with two numeric targets and a constant column."""
    gen = np.random.default_rng(7)
    n = 4000
    sex = gen.integers(1, 3, n)
    race = gen.choice([1, 2, 6], size=n, p=[0.7, 0.2, 0.1])
    mar = gen.integers(1, 4, n)
    schl = np.clip(np.round(16 + 3 * (sex == 2) + 2 * (race == 6) + gen.normal(0, 3, n)), 1, 24)
    wkhp = np.clip(np.round(38 - 4 * (sex == 2) + gen.normal(0, 8, n)), 1, 99)
    d = tmp_path_factory.mktemp("census")
    schema = d / "schema.txt"
    schema.write_text("# name,domain_size,offset\nSEX,2,1\nRAC1P,9,1\nMAR,3,1\n")
    data = d / "data.csv"
    with data.open("w") as fh:
        fh.write("SEX,RAC1P,MAR,SCHL,WKHP,CONST\n")
        for row in zip(sex, race, mar, schl, wkhp):
            fh.write(",".join(str(int(v)) for v in row) + ",5\n")
    return data, schema


_ACCEPTANCE: dict[str, list] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    entry = _ACCEPTANCE.setdefault(report.nodeid, [None, []])
    if report.when == "call":
        if entry[0] != "failed":
            entry[0] = report.outcome
        entry[1] = [v for k, v in report.user_properties if k == "acceptance"]
    elif report.outcome != "passed":
        entry[0] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, (outcome, lines) in _ACCEPTANCE.items():
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(outcome, "FAIL")
        name = nodeid.split("::")[-1]
        detail = "; ".join(lines) if lines else "no measurement recorded"
        terminalreporter.write_line(f"{status}  {name}: {detail}")
