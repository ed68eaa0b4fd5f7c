import os
import subprocess
from pathlib import Path

import pytest

import campuswh


def test_split_arithmetic():
    assert campuswh.split_size(1 << 20, 4 << 20, 2 << 20) == 2 << 20
    assert campuswh.split_size(1 << 20, 4 << 20, 8 << 20) == 4 << 20
    assert campuswh.mapper_count(5 << 20, 2 << 20) == 3


def test_plan_splits_cover_file(tmp_path):
    f = tmp_path / "in.csv"
    body = "".join(f"row{i},x\n" for i in range(100))
    f.write_text(body)
    splits = campuswh.plan_splits(f, 64)
    assert splits[0][0] == 0
    assert sum(length for _, length in splits) == len(body)


def test_grouping_and_conv():
    assert campuswh.grouping_id([True, True, False]) == 3
    assert campuswh.grouping_id([False, True]) == 2
    assert campuswh.conv("110", 2, 10) == "6"
    with pytest.raises(campuswh.Error):
        campuswh.conv("12", 2, 10)


def test_qualify_key_is_tenant_scoped():
    assert campuswh.qualify_key("U1", "S1") != campuswh.qualify_key("U2", "S1")


def test_remove_outliers_drops_spike():
    assert campuswh.remove_outliers([10.0, 10.0, 10.0, 10.0, 100.0]) == [10.0] * 4


def test_schema_reference_lists_fact():
    assert "StudentPerformance" in campuswh.schema_reference()


def test_cli_round_trip(tmp_path):
    root = str(tmp_path / "wh")
    code, _, err = campuswh.run_cli(["--root", root, "init"])
    assert code == 0, err
    dims = tmp_path / "dims"
    code, _, err = campuswh.run_cli(["gen", "--dimensions", str(dims)])
    assert code == 0, err
    for csv in sorted(dims.glob("*.csv")):
        code, _, err = campuswh.run_cli(
            ["--root", root, "ingest", "--tenant", "University1", "--table", csv.stem, "--file", str(csv)])
        assert code == 0, err
    facts = tmp_path / "facts.csv"
    code, _, err = campuswh.run_cli(
        ["gen", "--table", "StudentPerformance", "--size", "65536", "--out", str(facts)])
    assert code == 0, err
    code, out, err = campuswh.run_cli(
        ["--root", root, "ingest", "--tenant", "University1", "--table", "StudentPerformance",
         "--file", str(facts)])
    assert code == 0, err
    assert "committed" in out
    code, _, err = campuswh.run_cli(["--root", root, "build-cube"])
    assert code == 0, err


def test_cli_binary_usage_error():
    cli = os.environ.get("CAMPUSWH_CLI")
    if not cli or not Path(cli).exists():
        pytest.skip("CAMPUSWH_CLI not set")
    r = subprocess.run([cli, "no-such-command"], capture_output=True, text=True)
    assert r.returncode == 2
    assert "error: usage:" in r.stderr
