"""
Tests for the oracle registry shared with the selftest command
"""
import math

from core.oracles import ORACLES, Oracle, OracleContext, run_oracles, select


def fail(ctx):
    raise RuntimeError("no result")


class TestSelection:
    def test_names_are_unique(self):
        names = [o.name for o in ORACLES]
        assert len(names) == len(set(names))

    def test_empty_pattern_selects_everything(self):
        assert select(None) == ORACLES
        assert select("") == ORACLES

    def test_tag_or_substring(self):
        names = {o.name for o in select("grad")}
        assert "spline-derivative-fd" in names
        assert {"grad-composite", "grad-ckan", "grad-generator"} <= names
        assert select("no-such-oracle") == []


class TestRun:
    def test_every_oracle_passes(self):
        results = run_oracles()
        assert len(results) == len(ORACLES)
        failed = [f"{r.name}: {r.value} > {r.tolerance} ({r.detail})" for r in results if not r.passed]
        assert failed == []

    def test_seed_is_forwarded(self):
        (result,) = run_oracles("chunk-invariance", OracleContext(seed=5))
        assert result.passed

    def test_broken_fold_fails(self):
        results = run_oracles("fold-spatial", OracleContext(break_fold=True))
        assert [r.name for r in results] == ["fold-spatial"]
        assert not results[0].passed

    def test_raising_check_is_a_failure(self):
        (result,) = run_oracles(oracles=[Oracle("boom", ("test",), 1.0, fail)])
        assert result.value == math.inf
        assert not result.passed
        assert result.detail.startswith("RuntimeError")
