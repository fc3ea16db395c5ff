import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridnbv import planner as P
from hybridnbv import scenegen as S
from hybridnbv.field import Camera, NumericError, TrainConfig
from hybridnbv.uncertainty import ScoreConfig

from oracles import minmax_direct


@pytest.fixture(scope="module")
def small():
    _, ds = S.build_dataset(S.SceneSpec(seed=1, dims=(12, 12, 12)),
                            S.TrajectorySpec(n_views=30, width=12, height=12), n_samples=32)
    return ds


def fast_cfg(**kw):
    base = dict(init_iterations=20, round_iterations=3, resolution_2d=64, resolution_3d=24,
                train=TrainConfig(batch_rays=128), score=ScoreConfig(ray_fraction=0.5))
    return P.PlannerConfig(**(base | kw))


def fresh(ds, seed=0):
    return P.init_split(ds, seed=seed, grid_dims=(8, 8, 8))


class TestSplit:
    def test_default_sizes(self):
        assert P.split_sizes(100, 0.15, 0.10, 20) == (20, 10)
        assert P.split_sizes(200, 0.15, 0.10, 20) == (30, 20)

    def test_too_small_names_minimum(self):
        with pytest.raises(P.SplitError, match="at least"):
            P.split_sizes(21, 0.15, 0.10, 20)

    def test_bad_fractions(self):
        with pytest.raises(P.SplitError):
            P.split_sizes(100, 0.6, 0.5, 20)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(23, 400), st.floats(0.05, 0.5), st.floats(0.05, 0.3), st.integers(1, 20))
    def test_sizes_leave_candidates(self, n, f_init, f_test, m):
        try:
            n_train, n_test = P.split_sizes(n, f_init, f_test, m)
        except P.SplitError:
            return
        assert n_train >= min(m, n - n_test - 1) and n_train >= math.ceil(f_init * n)
        assert n_test == max(1, math.ceil(f_test * n))
        assert n - n_train - n_test >= 1

    def test_partition(self, small):
        st_ = fresh(small, seed=3)
        st_.check_partition()
        assert (len(st_.train_ids), len(st_.test_ids), len(st_.candidate_ids)) == (20, 3, 7)

    def test_seeded(self, small):
        a, b, c = fresh(small, 4), fresh(small, 4), fresh(small, 5)
        assert a.train_ids == b.train_ids and a.test_ids == b.test_ids
        assert (a.train_ids, a.test_ids) != (c.train_ids, c.test_ids)


def _line_dataset(xs):
    cams = [Camera.look_at((x, 0.0, 2.0), (x, 1.0, 0.0), 4, 4, 0.8) for x in xs]
    return S.Dataset(cams, [np.zeros((4, 4, 3), np.float32) for _ in xs],
                     {"extent": [-1, -1, -1, 1, 1, 1]})


class TestBaselines:
    def test_fvs_tie_lowest_id(self):
        # views 3 and 4 are both 4.0 from the nearest training view
        ds = _line_dataset([0.0, 1.0, 2.0, 5.0, -4.0, 0.5])
        state = P.SelectionState(ds, [0, 1], [2, 3, 4, 5], [], None)
        assert P.select_next(state, "fvs")[0] == 3

    def test_fvs_unique_farthest(self):
        ds = _line_dataset([0.0, 1.0, 2.0, 3.5, -4.5])
        state = P.SelectionState(ds, [0, 1], [2, 3, 4], [], None)
        assert P.select_next(state, "fvs")[0] == 4

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=4, max_size=12, unique=True), st.integers(1, 3))
    def test_fvs_matches_brute_force(self, xs, n_train):
        ds = _line_dataset(xs)
        train_ids, cands = list(range(n_train)), list(range(n_train, len(xs)))
        state = P.SelectionState(ds, train_ids, cands, [], None)
        best = max(cands, key=lambda c: (min(abs(xs[c] - xs[t]) for t in train_ids), -c))
        far = min(abs(xs[P.select_next(state, "fvs")[0]] - xs[t]) for t in train_ids)
        assert far == pytest.approx(min(abs(xs[best] - xs[t]) for t in train_ids), abs=1e-12)

    def test_random_reproducible_and_valid(self, small):
        picks = []
        for _ in range(2):
            st_ = fresh(small, seed=9)
            picks.append([P.select_next(st_, "random")[0] for _ in range(3)])
        assert picks[0] == picks[1]
        assert set(picks[0]) <= set(fresh(small, 9).candidate_ids)

    def test_exhausted(self, small):
        st_ = fresh(small)
        st_.candidate_ids = []
        with pytest.raises(P.ExhaustedError):
            P.select_next(st_, "random")


class TestScored:
    @pytest.mark.parametrize("strategy,key", [("hybrid", "hybrid"), ("rgb", "sigma_rgb2"),
                                              ("pos", "sigma_pos2")])
    def test_argmax_of_scores(self, small, strategy, key):
        st_ = fresh(small)
        chosen, scores = P.select_next(st_, strategy, fast_cfg())
        assert sorted(s.view_id for s in scores) == st_.candidate_ids
        vals = [getattr(s, key) for s in scores]
        top = [s.view_id for s, v in zip(scores, vals) if v == max(vals)]
        assert chosen == top[0]

    def test_hybrid_is_sum_of_minmax(self, small):
        st_ = fresh(small)
        st_.candidate_ids = st_.candidate_ids[:5]
        _, scores = P.select_next(st_, "hybrid", fast_cfg())
        nr = minmax_direct([s.sigma_rgb2 for s in scores])
        npos = minmax_direct([s.sigma_pos2 for s in scores])
        brute = max(range(5), key=lambda k: (nr[k] + npos[k], -k))
        for s, a, b in zip(scores, nr, npos):
            assert s.hybrid == pytest.approx(a + b, abs=1e-12)
        assert P.select_next(st_, "hybrid", fast_cfg())[0] == scores[brute].view_id

    def test_workers_do_not_change_scores(self, small):
        cfg1 = fast_cfg()
        cfg3 = replace(cfg1, score=replace(cfg1.score, workers=3))
        a = P.select_next(fresh(small), "hybrid", cfg1)
        b = P.select_next(fresh(small), "hybrid", cfg3)
        assert a[0] == b[0]
        assert [(s.sigma_rgb2, s.sigma_pos2) for s in a[1]] == \
            [(s.sigma_rgb2, s.sigma_pos2) for s in b[1]]

    def test_uncertainty_weight_mode(self, small):
        chosen, scores = P.select_next(fresh(small), "pos", fast_cfg(weight_mode="uncertainty"))
        assert chosen in fresh(small).candidate_ids and len(scores) == 7


class TestRun:
    def test_budget_and_final_train(self, small):
        st_ = P.run_incremental(fresh(small), "random", fast_cfg())
        budget = math.ceil(0.15 * 30)
        assert len(st_.trace) == budget
        assert len(st_.train_ids) == 20 + budget
        st_.check_partition()
        assert [r.round for r in st_.trace] == list(range(1, budget + 1))
        assert all(r.selected_id in st_.train_ids for r in st_.trace)

    def test_single_selection_budget(self, small):
        st_ = P.run_incremental(fresh(small), "fvs", fast_cfg(budget_frac=0.01))
        assert len(st_.trace) == 1

    def test_budget_capped_by_candidates(self, small):
        st_ = P.run_incremental(fresh(small), "random", fast_cfg(budget_frac=0.9))
        assert len(st_.trace) == 7 and st_.candidate_ids == []

    def test_psnr_target_zero_stops_immediately(self, small):
        st_ = P.run_incremental(fresh(small), "hybrid", fast_cfg(psnr_target=0.0))
        assert st_.trace == [] and st_.initial_psnr is not None

    def test_deterministic(self, small):
        a = P.run_incremental(fresh(small, 2), "hybrid", fast_cfg(budget_frac=0.07))
        b = P.run_incremental(fresh(small, 2), "hybrid", fast_cfg(budget_frac=0.07))
        assert [(r.selected_id, r.psnr, r.hybrid) for r in a.trace] == \
            [(r.selected_id, r.psnr, r.hybrid) for r in b.trace]
        np.testing.assert_array_equal(a.field.density_params, b.field.density_params)

    def test_on_round_and_timing(self, small):
        seen = []
        st_ = P.run_incremental(fresh(small), "fvs", fast_cfg(budget_frac=0.07, record_time=True),
                                on_round=lambda s, r, sc: seen.append(r.selected_id))
        assert seen == [r.selected_id for r in st_.trace]
        assert all(r.wall_ms > 0 for r in st_.trace)

    def test_divergence_keeps_partial_trace(self, small):
        cfg = fast_cfg()

        def poison(state, rec, scores):
            cfg.train.divergence_factor = 1e-9

        st_ = fresh(small)
        with pytest.raises(NumericError):
            P.run_incremental(st_, "random", cfg, on_round=poison)
        assert len(st_.trace) == 1


class TestTraceIO:
    def test_round_trip(self, tmp_path):
        recs = [P.RoundRecord(1, 4, 20.5, 0.5, 1.0, 2.0, 1.5),
                P.RoundRecord(2, 7, 21.25, 0.6, None, None, None, 12.0)]
        P.write_trace(tmp_path / "t.csv", recs)
        raw = (tmp_path / "t.csv").read_bytes()
        assert raw.startswith(b"round,selected_id,") and b"\r" not in raw
        rows = P.read_trace(tmp_path / "t.csv")
        assert rows[0]["psnr"] == "20.5" and rows[0]["wall_ms"] == ""
        assert rows[1]["sigma_rgb2"] == "" and float(rows[1]["wall_ms"]) == 12.0

    def test_schema_mismatch(self, tmp_path):
        (tmp_path / "t.csv").write_text("round,psnr\n1,2\n")
        with pytest.raises(ValueError):
            P.read_trace(tmp_path / "t.csv")
