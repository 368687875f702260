import numpy as np
import pytest

from ecgfcn.stats import (ContingencyTable2x2, LeadImportanceMatrix,
                          dt_comparison, fisher_one_sided, lead_importance,
                          read_baseline_csv, remap_region, scheme_regions,
                          ventricle_rank, write_comparison_csv,
                          write_lead_importance_csv, write_ranking_csv)

from oracles import hypergeom_tail

# Hand-inverted transcriptions of the two published region tables:
# per dataset class, the set of scheme regions it belongs to.
EXPECTED_EASY_WPW = {
    0: {"MV-PL"},
    1: {"MV-PL", "MV-PS", "TV-PS"},
    2: {"MV-PS", "TV-PS", "TV-AS"},
    3: {"MV-AL", "TV-AS"},
    4: {"MV-AL", "TV-AS"},
    5: {"MV-AL", "MV-PL"},
    6: {"MV-PL"},
    7: {"MV-PL", "MV-PS", "TV-PS"},
    8: {"MV-PS", "TV-PS", "TV-AS"},
    9: {"MV-AL", "TV-AS"},
    10: {"MV-AL", "TV-AS"},
    11: {"MV-AL", "MV-PL"},
    12: {"TV-PL", "TV-PS"},
    13: {"TV-AL", "TV-PL"},
    14: {"TV-AL"},
    15: {"TV-AL"},
    16: {"TV-AL"},
    17: {"TV-AL", "TV-AS"},
    18: {"TV-PL", "TV-PS"},
    19: {"TV-AL", "TV-PL"},
    20: {"TV-AL"},
    21: {"TV-AL"},
    22: {"TV-AL"},
    23: {"TV-AL", "TV-AS"},
}

EXPECTED_ARRUDA = {
    0: {"LL", "LP", "LPL"},
    1: {"LP", "PSMA", "PSTA"},
    2: {"PSMA", "PSTA", "MSTA", "AS"},
    3: {"AS", "RA"},
    4: {"LAL", "RA"},
    5: {"LAL", "LL"},
    6: {"LL", "LP", "LPL"},
    7: {"LP", "PSMA", "PSTA"},
    8: {"PSMA", "PSTA", "MSTA", "AS"},
    9: {"AS", "RA"},
    10: {"LAL", "RA"},
    11: {"LAL", "LL"},
    12: {"PSTA", "RP", "RPL"},
    13: {"RPL", "RL"},
    14: {"RL", "RAL"},
    15: {"RAL"},
    16: {"RA", "RAL"},
    17: {"RA"},
    18: {"PSTA", "RP", "RPL"},
    19: {"RPL", "RL"},
    20: {"RL", "RAL"},
    21: {"RAL"},
    22: {"RA", "RAL"},
    23: {"RA"},
}


def uniform_map(t=10, l=12, value=1.0):
    return np.full((t, l), value)


class TestLeadImportance:
    def test_point_mass(self):
        m = np.zeros((10, 12))
        m[:, 7] = 2.0  # all mass in one lead
        li = lead_importance([m], [0], [0], 24)
        row = li.values[0]
        assert row[7] == 1.0 and np.nansum(row) == 1.0

    def test_uniform_map(self):
        li = lead_importance([uniform_map()], [3], [3], 24)
        assert np.allclose(li.values[3], 1 / 12)

    def test_two_sample_pooling(self):
        m1 = np.zeros((5, 12))
        m1[:, 0] = 0.2  # per-lead sum 1
        m1[:, 1] = 0.2
        m2 = np.zeros((5, 12))
        m2[:, 0] = 0.6  # per-lead sum 3
        m2[:, 1] = 0.2
        li = lead_importance([m1, m2], [0, 0], [0, 0], 24)
        assert np.allclose(li.values[0][:2], [4 / 6, 2 / 6])
        assert np.allclose(li.values[0][2:], 0.0)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        maps = [np.abs(rng.normal(size=(8, 12))) for _ in range(10)]
        labels = rng.integers(0, 4, 10)
        li = lead_importance(maps, labels, labels, 24)
        for c in range(24):
            if li.defined[c]:
                assert abs(li.values[c].sum() - 1.0) < 1e-9

    def test_positive_scaling_invariance(self):
        rng = np.random.default_rng(1)
        maps = [np.abs(rng.normal(size=(6, 12))) for _ in range(4)]
        labels = [2, 2, 2, 2]
        a = lead_importance(maps, labels, labels, 24)
        b = lead_importance([7.3 * m for m in maps], labels, labels, 24)
        assert np.allclose(a.values[2], b.values[2])

    def test_undefined_rows_flagged_not_zeroed(self):
        li = lead_importance([uniform_map()], [0], [0], 24)
        assert li.defined[0]
        assert not li.defined[5]
        assert np.isnan(li.values[5]).all()
        assert li.sample_counts[0] == 1 and li.sample_counts[5] == 0

    def test_misclassified_sample_rejected(self):
        with pytest.raises(ValueError, match="correctly classified"):
            lead_importance([uniform_map()], [0], [1], 24)

    def test_negative_scores_rejected(self):
        m = uniform_map()
        m[0, 0] = -0.5
        with pytest.raises(ValueError, match="absolute"):
            lead_importance([m], [0], [0], 24)

    def test_wrong_rank_rejected(self):
        with pytest.raises(ValueError, match="expected"):
            lead_importance([np.zeros(12)], [0], [0], 24)


class TestVentricleRank:
    def _vmap(self, classes=4):
        return {c: ("LV" if c < classes // 2 else "RV") for c in range(classes)}

    def test_identical_rows_fixed_point(self):
        m = np.zeros((4, 12))
        m[:, 3] = 1.0
        li = lead_importance([m.copy() for _ in range(4)], [0, 1, 2, 3],
                             [0, 1, 2, 3], 4, tuple(f"c{i}" for i in range(12)))
        vents = ventricle_rank(li, self._vmap())
        for vi in vents.values():
            assert np.allclose(vi.values, li.values[0])

    def test_single_class_ventricle(self):
        maps = [uniform_map(), np.abs(np.random.default_rng(2).normal(size=(10, 12)))]
        li = lead_importance(maps, [0, 1], [0, 1], 2)
        vents = ventricle_rank(li, {0: "LV", 1: "RV"})
        assert np.allclose(vents["LV"].values, li.values[0])
        assert np.allclose(vents["RV"].values, li.values[1])

    def test_pooled_sums_not_mean_of_rows(self):
        m1 = np.zeros((4, 12))
        m1[:, 0] = 0.5  # raw mass 2 in lead 0
        m2 = np.zeros((4, 12))
        m2[:, 1] = 0.5  # raw mass 2 in lead 1
        li = lead_importance([m1, m2], [0, 1], [0, 1], 2)
        vents = ventricle_rank(li, {0: "LV", 1: "LV"})
        assert np.allclose(vents["LV"].values[:2], [0.5, 0.5])
        assert np.allclose(vents["LV"].values[2:], 0.0)

    def test_ranking_order(self):
        m = np.zeros((3, 12))
        m[:, 5] = 3.0
        m[:, 2] = 1.0
        li = lead_importance([m], [0], [0], 1)
        vents = ventricle_rank(li, {0: "RV"})
        assert vents["RV"].ranking[0] == 5
        assert vents["RV"].ranking[1] == 2

    def test_unmapped_class_rejected(self):
        li = lead_importance([uniform_map()], [1], [1], 2)
        with pytest.raises(ValueError, match="ventricle"):
            ventricle_rank(li, {0: "LV"})


class TestFisher:
    def test_paper_values_within_two_percent(self):
        p1 = fisher_one_sided(ContingencyTable2x2(75, 0, 57, 18))
        assert abs(p1 - 1.20e-6) / 1.20e-6 < 0.02
        p2 = fisher_one_sided(ContingencyTable2x2(75, 0, 54, 21))
        assert abs(p2 - 9.36e-8) / 9.36e-8 < 0.02

    def test_small_enumeration(self):
        assert np.isclose(fisher_one_sided(ContingencyTable2x2(3, 0, 1, 2)), 0.2)

    def test_no_difference(self):
        assert fisher_one_sided(ContingencyTable2x2(0, 5, 0, 5)) == 1.0

    def test_matches_exact_enumeration_on_random_tables(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, b, c, d = (int(x) for x in rng.integers(0, 12, 4))
            if a + b + c + d == 0:
                continue
            p = fisher_one_sided(ContingencyTable2x2(a, b, c, d))
            exact = float(hypergeom_tail(a, b, c, d))
            assert abs(p - exact) < 1e-12 * max(1.0, 1 / max(exact, 1e-300)) or \
                np.isclose(p, exact, rtol=1e-10)

    def test_complementary_tails(self):
        # P(X >= a) + P(X <= a-1) = 1; the swapped-row call gives P(X <= a)
        rng = np.random.default_rng(4)
        for _ in range(20):
            a, b, c, d = (int(x) for x in rng.integers(0, 10, 4))
            if a + b + c + d == 0:
                continue
            upper = float(hypergeom_tail(a, b, c, d))
            swapped = fisher_one_sided(ContingencyTable2x2(c, d, a, b))
            pmf = upper - float(hypergeom_tail(a + 1, b - 1, c, d)) \
                if b > 0 else upper
            # swapped one-sided tail equals P(X <= a) for the original table
            assert np.isclose(swapped + upper - pmf, 1.0, atol=1e-10)

    def test_table_validation(self):
        with pytest.raises(ValueError, match="non-negative"):
            ContingencyTable2x2(-1, 0, 0, 1)
        with pytest.raises(ValueError, match="margin"):
            ContingencyTable2x2(0, 0, 0, 0)


class TestRemap:
    @pytest.mark.parametrize("cls", range(24))
    def test_easy_wpw_matches_published_table(self, cls):
        assert remap_region(cls, "easy_wpw") == EXPECTED_EASY_WPW[cls]

    @pytest.mark.parametrize("cls", range(24))
    def test_arruda_matches_published_table(self, cls):
        assert remap_region(cls, "arruda") == EXPECTED_ARRUDA[cls]

    def test_every_class_nonempty(self):
        for scheme in ("easy_wpw", "arruda"):
            for cls in range(24):
                assert remap_region(cls, scheme)

    def test_all_regions_reachable(self):
        for scheme, count in (("easy_wpw", 7), ("arruda", 13)):
            union = set()
            for cls in range(24):
                union |= remap_region(cls, scheme)
            assert union == set(scheme_regions(scheme))
            assert len(union) == count

    def test_unknown_scheme(self):
        with pytest.raises(ValueError, match="scheme"):
            remap_region(0, "aha17")

    def test_class_out_of_range(self):
        with pytest.raises(ValueError, match="range"):
            remap_region(24, "easy_wpw")


class TestDtComparison:
    def test_both_perfect(self):
        truth = np.arange(24)
        regions = [sorted(remap_region(c, "easy_wpw"))[0] for c in truth]
        res = dt_comparison(truth, regions, truth, "easy_wpw")
        assert res.p_value == 1.0
        assert not res.significant
        assert res.accuracy_a_pct == res.accuracy_b_pct == 100.0

    def test_paper_shaped_counts(self):
        truth = np.zeros(75, dtype=int)  # class 0 -> {MV-PL}
        preds = np.zeros(75, dtype=int)
        regions = ["MV-PL"] * 57 + ["MV-AL"] * 18
        res = dt_comparison(preds, regions, truth, "easy_wpw")
        assert (res.table.a, res.table.b, res.table.c, res.table.d) == (75, 0, 57, 18)
        assert abs(res.p_value - 1.20e-6) / 1.20e-6 < 0.02
        assert res.significant

    def test_small_counts_match_enumeration(self):
        truth = np.zeros(10, dtype=int)
        preds = np.zeros(10, dtype=int)
        regions = ["MV-PL"] * 9 + ["MV-AL"]
        res = dt_comparison(preds, regions, truth, "easy_wpw")
        assert np.isclose(res.p_value, float(hypergeom_tail(10, 0, 9, 1)))

    def test_accuracy_consistent_with_table(self):
        rng = np.random.default_rng(5)
        truth = rng.integers(0, 24, 40)
        preds = rng.integers(0, 24, 40)
        all_regions = scheme_regions("arruda")
        regions = [all_regions[i] for i in rng.integers(0, len(all_regions), 40)]
        res = dt_comparison(preds, regions, truth, "arruda")
        assert res.table.a + res.table.b == 40
        assert np.isclose(res.accuracy_a_pct, 100.0 * res.table.a / 40)
        assert np.isclose(res.accuracy_b_pct, 100.0 * res.table.c / 40)

    def test_foreign_region_rejected(self):
        with pytest.raises(ValueError, match="not a easy_wpw region"):
            dt_comparison([0], ["LPL"], [0], "easy_wpw")


class TestCsv:
    def test_lead_importance_csv(self, tmp_path):
        li = lead_importance([uniform_map()], [0], [0], 2)
        vents = ventricle_rank(li, {0: "LV", 1: "RV"})
        write_lead_importance_csv(li, vents, tmp_path / "li.csv")
        lines = (tmp_path / "li.csv").read_text().splitlines()
        assert lines[0].startswith("row,defined,I,II")
        assert lines[1].startswith("class_0,1,")
        assert lines[2].startswith("class_1,0,nan")
        assert lines[-1].startswith("LV,1,")

    def test_ranking_csv(self, tmp_path):
        li = lead_importance([uniform_map()], [0], [0], 1)
        vents = ventricle_rank(li, {0: "LV"})
        write_ranking_csv(vents, tmp_path / "rank.csv")
        lines = (tmp_path / "rank.csv").read_text().splitlines()
        assert lines[0].startswith("ventricle,rank0")
        assert lines[1].startswith("LV,")

    def test_comparison_csv_and_baseline_reader(self, tmp_path):
        truth = np.zeros(4, dtype=int)
        res = dt_comparison([0, 0, 0, 0], ["MV-PL", "MV-PL", "MV-AL", "MV-PL"],
                            truth, "easy_wpw")
        write_comparison_csv(res, tmp_path / "cmp.csv",
                             baseline_regions=["MV-PL", "MV-PL", "MV-AL", "MV-PL"],
                             class_predictions=[0, 0, 0, 0])
        summary = (tmp_path / "cmp.csv.summary").read_text()
        assert "table=4,0,3,1" in summary

        baseline = tmp_path / "base.csv"
        baseline.write_text("sample,scheme,region\n0,easy_wpw,MV-PL\n1,easy_wpw,TV-AL\n")
        samples, scheme, regions = read_baseline_csv(baseline)
        assert samples.tolist() == [0, 1]
        assert scheme == "easy_wpw"
        assert regions == ["MV-PL", "TV-AL"]

    def test_baseline_reader_rejects_mixed_schemes(self, tmp_path):
        baseline = tmp_path / "base.csv"
        baseline.write_text("sample,scheme,region\n0,easy_wpw,MV-PL\n1,arruda,LL\n")
        with pytest.raises(ValueError, match="mixes"):
            read_baseline_csv(baseline)
