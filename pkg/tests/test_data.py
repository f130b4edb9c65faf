import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pclf import (
    CrossDomainDataset,
    DataError,
    RatingTriple,
    RawRating,
    ScaleSpec,
    build_dataset,
    given_n_split,
    load_dataset,
    normalize_scale,
    parse_ratings,
    save_dataset,
    select_subset,
)


class TestNormalizeScale:
    def test_eachmovie_top_maps_down(self):
        assert normalize_scale(6, ScaleSpec(1, 6)) == 5

    def test_bottom_endpoint_fixed(self):
        assert normalize_scale(1, ScaleSpec(1, 6)) == 1

    def test_zero_to_nine_scale(self):
        scale = ScaleSpec(0, 9)
        assert normalize_scale(9, scale) == 5
        assert normalize_scale(4, scale) == 3

    def test_identity_on_target_scale(self):
        scale = ScaleSpec(1, 5)
        for r in range(1, 6):
            assert normalize_scale(r, scale) == r

    def test_out_of_bounds(self):
        with pytest.raises(DataError):
            normalize_scale(7, ScaleSpec(1, 5))
        with pytest.raises(DataError):
            normalize_scale(0.5, ScaleSpec(1, 5))

    @given(
        a=st.floats(0, 9, allow_nan=False),
        b=st.floats(0, 9, allow_nan=False),
        levels=st.integers(2, 10),
    )
    @settings(max_examples=200, deadline=None)
    def test_monotone(self, a, b, levels):
        scale = ScaleSpec(0, 9, levels)
        lo, hi = min(a, b), max(a, b)
        assert normalize_scale(lo, scale) <= normalize_scale(hi, scale)

    def test_scale_validation(self):
        with pytest.raises(DataError):
            ScaleSpec(5, 5)
        with pytest.raises(DataError):
            ScaleSpec(1, 5, target_levels=1)


class TestParseRatings:
    def test_tab_separated_row(self, tmp_path):
        path = tmp_path / "r.tsv"
        path.write_text("196\t242\t3\n")
        out = parse_ratings(str(path))
        assert out == [RawRating("196", "242", 3.0)]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.tsv"
        path.write_text("")
        assert parse_ratings(str(path)) == []

    def test_rating_out_of_scale_names_row(self, tmp_path):
        path = tmp_path / "r.tsv"
        path.write_text("1\t1\t3\n2\t2\t7\n")
        with pytest.raises(DataError, match=":2:"):
            parse_ratings(str(path), scale=ScaleSpec(1, 5))

    def test_malformed_row_names_row(self, tmp_path):
        path = tmp_path / "r.tsv"
        path.write_text("1\t1\t3\n2\t2\n")
        with pytest.raises(DataError, match=":2:"):
            parse_ratings(str(path))

    def test_non_numeric_rating(self, tmp_path):
        path = tmp_path / "r.tsv"
        path.write_text("1\t1\tfive\n")
        with pytest.raises(DataError, match="not a number"):
            parse_ratings(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="nope.tsv"):
            parse_ratings(str(tmp_path / "nope.tsv"))

    def test_header_and_columns(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("item,user,rating\nI1,U1,4\n")
        out = parse_ratings(
            str(path), delimiter=",", column_map=(1, 0, 2), skip_header=True
        )
        assert out == [RawRating("U1", "I1", 4.0)]

    def test_preserves_file_order(self, tmp_path):
        path = tmp_path / "r.tsv"
        path.write_text("b\tx\t2\na\ty\t5\n")
        out = parse_ratings(str(path))
        assert [r.user_id for r in out] == ["b", "a"]


def _make_raws(n_users, per_user):
    return [
        RawRating(f"u{u}", f"i{u}_{j}", (u + j) % 5 + 1)
        for u in range(n_users)
        for j in range(per_user)
    ]


class TestSelectSubset:
    def test_all_retained(self):
        raws = _make_raws(10, 20)
        out = select_subset(raws, n_users=10, n_items=200, min_user_ratings=16)
        assert sorted(set(r.user_id for r in out)) == sorted(f"u{u}" for u in range(10))

    def test_infeasible(self):
        raws = _make_raws(3, 20)
        with pytest.raises(DataError, match="only 3"):
            select_subset(raws, n_users=5, n_items=60, min_user_ratings=16)

    def test_deterministic(self):
        raws = _make_raws(20, 10)
        a = select_subset(raws, n_users=5, n_items=50, seed=42)
        b = select_subset(raws, n_users=5, n_items=50, seed=42)
        assert a == b

    def test_threshold_is_strict(self):
        # a user with exactly the threshold count does not qualify
        raws = _make_raws(4, 16)
        with pytest.raises(DataError):
            select_subset(raws, n_users=1, n_items=1, min_user_ratings=16)


class TestBuildDataset:
    def test_counts(self):
        raws = [RawRating("a", "x", 5), RawRating("b", "y", 3), RawRating("a", "y", 1)]
        ds = build_dataset([(raws, ScaleSpec(1, 5))])
        assert ds.n_domains == 1
        assert ds.n_ratings == [3]
        assert ds.n_users == [2] and ds.n_items == [2]

    def test_duplicate_keeps_last(self):
        raws = [RawRating("a", "x", 5), RawRating("a", "x", 2)]
        ds = build_dataset([(raws, ScaleSpec(1, 5))])
        assert ds.n_ratings == [1]
        assert ds.ratings[0][0] == 2

    def test_shared_id_strings_stay_distinct(self):
        d0 = [RawRating("42", "9", 3)]
        d1 = [RawRating("42", "9", 4)]
        ds = build_dataset([(d0, ScaleSpec(1, 5)), (d1, ScaleSpec(1, 5))])
        assert ds.n_users == [1, 1]
        assert ds.total_users == 2
        gu, _, _ = ds.pooled()
        assert list(gu) == [0, 1]

    def test_empty_domain_list(self):
        with pytest.raises(DataError):
            build_dataset([])

    def test_empty_domain(self):
        with pytest.raises(DataError, match="domain 0"):
            build_dataset([([], ScaleSpec(1, 5))])

    def test_level_disagreement(self):
        d0 = [RawRating("a", "x", 3)]
        with pytest.raises(DataError, match="target_levels"):
            build_dataset([(d0, ScaleSpec(1, 5, 5)), (d0, ScaleSpec(1, 5, 4))])

    def test_first_appearance_indexing(self):
        raws = [RawRating("b", "y", 1), RawRating("a", "x", 2), RawRating("b", "x", 3)]
        ds = build_dataset([(raws, ScaleSpec(1, 5))])
        assert ds.user_ids[0] == ["b", "a"]
        assert ds.item_ids[0] == ["y", "x"]


class TestGivenNSplit:
    @staticmethod
    def _dataset(counts, domain_users=None):
        """One domain; user u gets counts[u] ratings on distinct items."""
        triples = []
        n_items = max(counts)
        for u, c in enumerate(counts):
            for j in range(c):
                triples.append(RatingTriple(0, u, j, (u + j) % 5 + 1))
        return CrossDomainDataset.from_indexed(
            n_levels=5, triples=triples, n_users=[len(counts)], n_items=[n_items]
        )

    def test_given_ten(self):
        ds = self._dataset([5, 30])
        split = given_n_split(ds, 0, n_train_users=1, n_given=10, seed=0)
        test_train = [t for t in split.train_pool if t.user == 1]
        assert len(test_train) == 10
        assert len(split.eval_set) == 20
        assert all(t.user == 1 for t in split.eval_set)

    def test_clamped_sample(self):
        ds = self._dataset([5, 4])
        split = given_n_split(ds, 0, n_train_users=1, n_given=5, seed=0)
        assert len([t for t in split.train_pool if t.user == 1]) == 4
        assert split.eval_set == []

    def test_given_zero(self):
        ds = self._dataset([5, 7])
        split = given_n_split(ds, 0, n_train_users=1, n_given=0, seed=0)
        assert len(split.eval_set) == 7
        assert all(t.user == 0 for t in split.train_pool)

    def test_partition_and_disjoint(self):
        rng = np.random.default_rng(3)
        counts = [int(rng.integers(1, 25)) for _ in range(12)]
        ds = self._dataset(counts)
        split = given_n_split(ds, 0, n_train_users=4, n_given=6, seed=9)
        assert len(split.train_pool) + len(split.eval_set) == sum(counts)
        overlap = {(t.user, t.item) for t in split.train_pool} & {
            (t.user, t.item) for t in split.eval_set
        }
        assert overlap == set()

    def test_deterministic(self):
        ds = self._dataset([8, 9, 10])
        a = given_n_split(ds, 0, 1, 3, seed=5)
        b = given_n_split(ds, 0, 1, 3, seed=5)
        assert a.train_pool == b.train_pool and a.eval_set == b.eval_set

    def test_domain_out_of_range(self):
        ds = self._dataset([3, 3])
        with pytest.raises(DataError, match="domain 2"):
            given_n_split(ds, 2, 1, 1, seed=0)

    def test_train_users_bound(self):
        ds = self._dataset([3, 3])
        with pytest.raises(DataError):
            given_n_split(ds, 0, 2, 1, seed=0)

    @given(n_given=st.integers(0, 12), seed=st.integers(0, 50))
    @settings(max_examples=60, deadline=None)
    def test_partition_property(self, n_given, seed):
        ds = self._dataset([6, 11, 3, 14])
        split = given_n_split(ds, 0, 2, n_given, seed=seed)
        assert len(split.train_pool) + len(split.eval_set) == 6 + 11 + 3 + 14
        for t in split.eval_set:
            assert t.user >= 2


class TestRoundTrip:
    def test_save_load_identity(self, tmp_path, tiny_dataset):
        save_dataset(tiny_dataset, str(tmp_path))
        back = load_dataset(str(tmp_path))
        assert back.n_levels == tiny_dataset.n_levels
        assert back.n_users == tiny_dataset.n_users
        assert back.n_items == tiny_dataset.n_items
        assert back.triples() == tiny_dataset.triples()
        assert back.user_ids == tiny_dataset.user_ids

    def test_build_idempotent_through_csv(self, tmp_path):
        raws = [
            RawRating("alice", "x", 5),
            RawRating("bob", "y", 2),
            RawRating("alice", "y", 4),
            RawRating("alice", "x", 3),  # revision, kept over the first
        ]
        ds = build_dataset([(raws, ScaleSpec(1, 5))])
        save_dataset(ds, str(tmp_path))
        reparsed = parse_ratings(
            str(tmp_path / "ratings.csv"),
            delimiter=",",
            column_map=(1, 2, 3),
            scale=ScaleSpec(1, 5),
            skip_header=True,
        )
        rebuilt = build_dataset([(reparsed, ScaleSpec(1, 5))])
        assert rebuilt.triples() == ds.triples()
        assert rebuilt.n_users == ds.n_users and rebuilt.n_items == ds.n_items

    def test_load_rejects_bad_format(self, tmp_path, tiny_dataset):
        save_dataset(tiny_dataset, str(tmp_path))
        manifest = tmp_path / "manifest.json"
        manifest.write_text(manifest.read_text().replace("pclf-dataset-v1", "other-v9"))
        with pytest.raises(DataError, match="pclf-dataset-v1"):
            load_dataset(str(tmp_path))

    def test_serialized_form_byte_identical(self, tmp_path, tiny_dataset):
        save_dataset(tiny_dataset, str(tmp_path / "a"))
        save_dataset(tiny_dataset, str(tmp_path / "b"))
        for name in ("ratings.csv", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestDatasetViews:
    def test_domain_view(self, tiny_dataset):
        view = tiny_dataset.domain_view(1)
        assert view.n_domains == 1
        assert view.n_ratings == [3]
        assert view.n_users == [2]

    def test_restrict_keeps_index_space(self, tiny_dataset):
        subset = tiny_dataset.triples()[:2]
        restricted = tiny_dataset.restrict(subset)
        assert restricted.n_users == tiny_dataset.n_users
        assert restricted.n_items == tiny_dataset.n_items
        assert restricted.n_ratings == [2, 0]

    def test_pooled_offsets(self, tiny_dataset):
        gu, gv, r = tiny_dataset.pooled()
        assert gu.max() < tiny_dataset.total_users
        assert gv.max() < tiny_dataset.total_items
        assert len(r) == sum(tiny_dataset.n_ratings)
