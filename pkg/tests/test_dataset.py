import math

import pytest
from hypothesis import given, strategies as st

from mvictr import dataset as ds

from conftest import requires_movielens

U_ITEM_TOY = (
    "1|Toy Story (1995)|01-Jan-1995||http://us.imdb.com/M/title-exact?Toy%20Story%20(1995)"
    "|0|0|0|1|1|1|0|0|0|0|0|0|0|0|0|0|0|0|0"
)


def ev(user, item, rating=3, ts=1):
    return ds.InteractionEvent.from_rating(user, item, rating, ts)


class TestParseRatings:
    def test_first_published_line(self):
        (e,) = ds.parse_ratings("196\t242\t3\t881250949\n")
        assert (e.user_id, e.item_id, e.raw_rating, e.reward, e.timestamp) == (196, 242, 3, 0, 881250949)

    def test_four_is_positive(self):
        (e,) = ds.parse_ratings("1\t2\t4\t10")
        assert e.reward == 1

    def test_empty(self):
        assert ds.parse_ratings("") == []

    def test_malformed_line_number(self):
        with pytest.raises(ds.DataFormatError, match="line 2"):
            ds.parse_ratings("1\t2\t4\t10\n1\t2\t4\n")

    def test_non_integer(self):
        with pytest.raises(ds.DataFormatError, match="line 1"):
            ds.parse_ratings("1\tx\t4\t10")

    def test_rating_out_of_range(self):
        with pytest.raises(ValueError, match="outside"):
            ds.parse_ratings("1\t2\t6\t10")

    def test_event_invariants(self):
        with pytest.raises(ValueError):
            ds.InteractionEvent(1, 2, 4, 0, 10)
        with pytest.raises(ValueError):
            ds.InteractionEvent(1, 2, 4, 1, 0)


@given(st.integers(1, 5), st.integers(1, 5))
def test_binarize_monotone(r1, r2):
    if r1 <= r2:
        assert ds.binarize(r1) <= ds.binarize(r2)


class TestFeatures:
    def test_user_line(self):
        bundles, feats = ds.parse_users("1|24|M|technician|85711\n2|53|F|other|94043\n")
        schema_feats = {f.name: f for f in feats}
        b = bundles[1]
        assert schema_feats["gender"].vocabulary[b.values["gender"][0]] == "M"
        assert schema_feats["occupation"].vocabulary[b.values["occupation"][0]] == "technician"
        assert schema_feats["age_decade"].vocabulary[b.values["age_decade"][0]] == "2"

    @pytest.mark.parametrize("age,decade", [(24, 2), (25, 3), (5, 1), (4, 0), (73, 7), (35, 4)])
    def test_age_rounding_half_away_from_zero(self, age, decade):
        assert ds.age_decade(age) == decade

    def test_release_decade(self):
        assert ds.release_decade("01-Jan-1994") == "1990"
        assert ds.release_decade("") == ds.UNKNOWN_DECADE

    def test_multi_genre(self):
        bundles, feats = ds.parse_items(U_ITEM_TOY)
        genres = bundles[1].values["genre"]
        assert len(genres) == 3
        assert {ds.GENRES[g] for g in genres} == {"Animation", "Children's", "Comedy"}
        assert feats[1].multi_valued and feats[1].size == 19

    def test_missing_release_date_gets_unknown(self):
        line = "267|unknown||||1|0|0|0|0|0|0|0|0|0|0|0|0|0|0|0|0|0|0"
        bundles, feats = ds.parse_items(line)
        decade = feats[0]
        assert decade.vocabulary[bundles[267].values["release_decade"][0]] == ds.UNKNOWN_DECADE

    def test_unknown_label_after_freeze(self):
        users, uf = ds.parse_users("1|24|M|technician|85711")
        items, itf = ds.parse_items(U_ITEM_TOY)
        schema = ds.FeatureSchema(uf + itf)
        with pytest.raises(ds.SchemaError):
            ds.parse_users("2|30|F|astronaut|00000", schema=schema)

    def test_schema_validation(self):
        users, uf = ds.parse_users("1|24|M|technician|85711")
        items, itf = ds.parse_items(U_ITEM_TOY)
        schema = ds.FeatureSchema(uf + itf)
        schema.validate(users[1])
        schema.validate(items[1])
        bad = ds.FeatureBundle(1, "user", {"gender": (5,), "occupation": (0,), "age_decade": (0,)})
        with pytest.raises(ds.SchemaError):
            schema.validate(bad)
        two = ds.FeatureBundle(1, "user", {"gender": (0, 0), "occupation": (0,), "age_decade": (0,)})
        with pytest.raises(ds.SchemaError):
            schema.validate(two)

    def test_schema_round_trip(self):
        _, uf = ds.parse_users("1|24|M|technician|85711")
        _, itf = ds.parse_items(U_ITEM_TOY)
        schema = ds.FeatureSchema(uf + itf)
        again = ds.FeatureSchema.from_dict(schema.to_dict())
        assert again == schema and again.digest() == schema.digest()

    def test_schema_needs_both_views(self):
        with pytest.raises(ds.SchemaError):
            ds.FeatureSchema([ds.Feature("a", "user", ("x",))])


class TestFilterAndSplit:
    def test_filter_ties_keep_lower_id(self):
        events = [ev(1, 7), ev(2, 7), ev(1, 3), ev(2, 5)]
        out = ds.filter_top_items(events, 2)
        assert {e.item_id for e in out} == {7, 3}
        assert out == [e for e in events if e.item_id in (7, 3)]

    def test_filter_identity_when_n_large(self):
        events = [ev(1, 7), ev(2, 8)]
        assert ds.filter_top_items(events, 5) == events

    @given(st.lists(st.tuples(st.integers(1, 5), st.integers(1, 9)), max_size=40), st.integers(1, 5))
    def test_filter_idempotent_and_bounded(self, pairs, n):
        events = [ev(u, i) for u, i in pairs]
        once = ds.filter_top_items(events, n)
        assert len({e.item_id for e in once}) <= n
        assert ds.filter_top_items(once, n) == once

    def test_split_two_events(self):
        a, b = ev(1, 1, ts=5), ev(1, 2, ts=9)
        train, test = ds.chronological_split([b, a], 0.5)
        assert train == [a] and test == [b]

    def test_split_tie_order(self):
        events = [ev(2, 1, ts=5), ev(1, 9, ts=5), ev(1, 2, ts=5)]
        train, test = ds.chronological_split(events, 0.5)
        assert [(e.user_id, e.item_id) for e in train + test] == [(1, 2), (1, 9), (2, 1)]

    @given(st.lists(st.tuples(st.integers(1, 5), st.integers(1, 9), st.integers(1, 50)), max_size=40),
           st.floats(0.05, 0.95))
    def test_split_partition(self, rows, fraction):
        events = [ev(u, i, ts=t) for u, i, t in rows]
        train, test = ds.chronological_split(events, fraction)
        assert len(train) == math.floor(fraction * len(events))
        assert sorted(train + test, key=repr) == sorted(events, key=repr)
        if train and test:
            assert max(e.timestamp for e in train) <= min(e.timestamp for e in test)

    def test_split_fraction_bounds(self):
        with pytest.raises(ValueError):
            ds.chronological_split([], 1.0)


class TestColdStart:
    def test_all_warm(self):
        train = [ev(1, 1), ev(2, 2)]
        assert ds.cold_start_stats(train, [ev(1, 2)]).cold_start_fraction == 0.0

    def test_empty_train(self):
        assert ds.cold_start_stats([], [ev(1, 2)]).cold_start_fraction == 1.0

    def test_user_or_item(self):
        train = [ev(1, 1)]
        stats = ds.cold_start_stats(train, [ev(1, 1), ev(2, 1), ev(1, 2), ev(3, 3)])
        assert stats.cold_start_fraction == 0.75
        assert stats.n_train + stats.n_test == 5

    def test_empty_test(self):
        with pytest.raises(ValueError):
            ds.cold_start_stats([ev(1, 1)], [])


def test_events_csv_round_trip(tmp_path):
    train, test = [ev(1, 2, 4, 10)], [ev(3, 4, 1, 20)]
    ds.write_events_csv(tmp_path / "e.csv", train, test)
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == ",".join(ds.EVENT_COLUMNS)
    assert ds.read_events_csv(tmp_path / "e.csv") == (train, test)


@requires_movielens
def test_movielens_schema(ml_dir):
    ml = ds.load_movielens(ml_dir)
    assert len(ml.events) == 100_000
    decades = ml.schema.feature("release_decade").vocabulary
    known = [d for d in decades if d != ds.UNKNOWN_DECADE]
    assert known == [str(y) for y in range(1920, 2000, 10)]
    assert ml.schema.feature("genre").size == 19
    assert set(ml.schema.feature("gender").vocabulary) == {"F", "M"}
    assert len(ml.users) == 943 and len(ml.items) == 1682
