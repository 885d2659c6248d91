import os

import pytest

from scsm.config import RunConfig, config_hash, save_config
from scsm.harness import LEDGER_HEADER
from scsm.verify import CHECKS, CheckResult, check_ledger, run_checks


@pytest.fixture(scope="module")
def results():
    return run_checks()


def test_every_registered_check_passes(results):
    failed = [r.name for r in results if not r.ok]
    assert not failed, f"failing checks: {failed}"


def test_results_are_structured(results):
    assert len(results) == len(CHECKS)
    for r in results:
        assert isinstance(r, CheckResult)
        assert r.name and isinstance(r.detail, str) and r.seconds >= 0


def test_name_filter_selects_subset():
    picked = run_checks(names=["pgm_roundtrip", "config_hash_stability"])
    assert sorted(r.name for r in picked) == ["config_hash_stability",
                                              "pgm_roundtrip"]


def test_unknown_check_name_rejected():
    with pytest.raises(ValueError, match="unknown checks"):
        run_checks(names=["definitely_not_a_check"])


def _ledger_dir(tmp_path, cfg):
    os.makedirs(tmp_path / "configs")
    h = config_hash(cfg)
    save_config(tmp_path / "configs" / f"{h}.cfg", cfg)
    row = dict.fromkeys(LEDGER_HEADER, "0")
    row["config_hash"] = h
    with open(tmp_path / "ledger.csv", "w") as fh:
        fh.write(",".join(LEDGER_HEADER) + "\n")
        fh.write(",".join(row[k] for k in LEDGER_HEADER) + "\n")
    return h


def test_check_ledger_cross_checks_hashes(tmp_path):
    _ledger_dir(tmp_path, RunConfig())
    assert "1 distinct configs" in check_ledger(str(tmp_path))


def test_check_ledger_missing_ledger_is_benign(tmp_path):
    assert "nothing to cross-check" in check_ledger(str(tmp_path))


def test_check_ledger_detects_tampered_config(tmp_path):
    h = _ledger_dir(tmp_path, RunConfig())
    path = tmp_path / "configs" / f"{h}.cfg"
    path.write_text(path.read_text().replace("sfm_csm", "csm"))
    with pytest.raises(AssertionError, match="no longer hashes"):
        check_ledger(str(tmp_path))


def test_check_ledger_detects_missing_config(tmp_path):
    h = _ledger_dir(tmp_path, RunConfig())
    os.remove(tmp_path / "configs" / f"{h}.cfg")
    with pytest.raises(AssertionError, match="missing"):
        check_ledger(str(tmp_path))


def test_run_checks_includes_ledger_check_with_root(tmp_path):
    _ledger_dir(tmp_path, RunConfig())
    picked = run_checks(names=["ledger_config_hashes"],
                        out_root=str(tmp_path))
    assert len(picked) == 1 and picked[0].ok
