import pytest
from hypothesis import given, strategies as st

from conftest import TOY_QUERY, build_toy
from linkedbn.catalog import load_schema
from linkedbn.query import (
    EQ,
    IN,
    RANGE,
    Predicate,
    QueryError,
    canonical_json,
    codes_for,
    parse_query,
    parse_sql,
    predicate_codes,
    to_dict,
)


@pytest.fixture(scope="module")
def shops_schema(tmp_path_factory):
    d = tmp_path_factory.mktemp("shops")
    return load_schema(build_toy(d, shops=True))


def test_parse_json_toy(toy_catalog):
    q = parse_query(TOY_QUERY, toy_catalog.schema)
    assert q.relations == ("customers", "purchases")
    assert q.joins == (("purchases", "customer_id"),)
    assert q.filter_count() == 2 and q.join_count() == 1


def test_parse_sql_three_relations(shops_schema):
    q = parse_sql(
        """
        SELECT * FROM customers, shops, purchases
        WHERE customers.id = purchases.customer_id
        AND shops.id = purchases.shop_id
        AND customers.nationality = 'Japanese'
        AND customers.hair = 'Dark'
        AND shops.name = 'Izumi'
        """,
        shops_schema,
    )
    assert len(q.relations) == 3 and q.join_count() == 2 and q.filter_count() == 3
    assert ("purchases", "customer_id") in q.joins
    assert ("purchases", "shop_id") in q.joins


def test_parse_sql_in_between_numeric(tmp_path):
    from conftest import write_csv, write_schema
    from linkedbn.catalog import load_schema as ls

    write_csv(tmp_path / "r.csv", ["id", "v", "t"], [["1", "3", "x"]])
    schema = ls(write_schema(tmp_path, [{
        "name": "r", "path": "r.csv", "primary_key": "id",
        "attributes": [{"name": "v", "kind": "numeric"}, {"name": "t", "kind": "categorical"}],
    }]))
    q = parse_sql("SELECT * FROM r WHERE r.v BETWEEN 1 AND 5 AND r.t IN ('x', 'y')", schema)
    ops = sorted(p.op for p in q.predicates)
    assert ops == [IN, RANGE]
    rp = next(p for p in q.predicates if p.op == RANGE)
    assert (rp.lo, rp.hi) == (1.0, 5.0)


def test_single_relation_no_joins(toy_catalog):
    q = parse_query(
        {"relations": ["customers"],
         "predicates": [{"relation": "customers", "attribute": "hair", "op": "eq", "value": "Blond"}]},
        toy_catalog.schema,
    )
    assert q.join_count() == 0


def test_disconnected_rejected(shops_schema):
    with pytest.raises(QueryError):
        parse_query({"relations": ["customers", "shops"], "joins": []}, shops_schema)


def test_unknown_relation_rejected(toy_catalog):
    with pytest.raises(QueryError):
        parse_query({"relations": ["nope"]}, toy_catalog.schema)


def test_non_fk_join_rejected(toy_catalog):
    with pytest.raises(QueryError):
        parse_query(
            {"relations": ["customers", "purchases"], "joins": [["purchases", "id"]]},
            toy_catalog.schema,
        )


def test_predicate_on_key_rejected(toy_catalog):
    with pytest.raises(QueryError):
        parse_query(
            {"relations": ["purchases"],
             "predicates": [{"relation": "purchases", "attribute": "customer_id", "op": "eq", "value": "1"}]},
            toy_catalog.schema,
        )


def test_range_on_categorical_rejected(toy_catalog):
    with pytest.raises(QueryError):
        parse_query(
            {"relations": ["customers"],
             "predicates": [{"relation": "customers", "attribute": "hair", "op": "range", "lo": 0, "hi": 1}]},
            toy_catalog.schema,
        )


def test_unordered_range_rejected(tmp_path):
    from conftest import write_csv, write_schema
    from linkedbn.catalog import load_schema as ls

    write_csv(tmp_path / "r.csv", ["id", "v"], [["1", "3"]])
    schema = ls(write_schema(tmp_path, [{
        "name": "r", "path": "r.csv", "primary_key": "id",
        "attributes": [{"name": "v", "kind": "numeric"}],
    }]))
    with pytest.raises(QueryError):
        parse_query(
            {"relations": ["r"],
             "predicates": [{"relation": "r", "attribute": "v", "op": "range", "lo": 5, "hi": 1}]},
            schema,
        )


def test_empty_in_rejected(toy_catalog):
    with pytest.raises(QueryError):
        parse_query(
            {"relations": ["customers"],
             "predicates": [{"relation": "customers", "attribute": "hair", "op": "in", "values": []}]},
            toy_catalog.schema,
        )


def test_canonical_roundtrip(toy_catalog):
    q = parse_query(TOY_QUERY, toy_catalog.schema)
    again = parse_query(canonical_json(q), toy_catalog.schema)
    assert q == again
    assert canonical_json(q) == canonical_json(again)


def test_roundtrip_order_invariant(toy_catalog):
    flipped = dict(TOY_QUERY)
    flipped["predicates"] = list(reversed(TOY_QUERY["predicates"]))
    flipped["relations"] = list(reversed(TOY_QUERY["relations"]))
    a = parse_query(TOY_QUERY, toy_catalog.schema)
    b = parse_query(flipped, toy_catalog.schema)
    assert canonical_json(a) == canonical_json(b)


def test_predicate_codes_eq(toy_catalog):
    pred = Predicate("customers", "nationality", EQ, value="Swedish")
    codes = predicate_codes(pred, toy_catalog)
    dictionary = toy_catalog.data("customers").columns["nationality"].dictionary
    assert codes == {dictionary.index("Swedish")}


def test_predicate_codes_unseen_empty(toy_catalog):
    pred = Predicate("customers", "nationality", EQ, value="Martian")
    assert predicate_codes(pred, toy_catalog) == set()


def test_predicate_codes_in_intersection(toy_catalog):
    pred = Predicate("customers", "hair", IN, values=("Blond", "Green"))
    dictionary = toy_catalog.data("customers").columns["hair"].dictionary
    assert predicate_codes(pred, toy_catalog) == {dictionary.index("Blond")}


def test_range_codes_partial_overlap_counts_fully():
    # bins [0,15) and [15,30]: the interval [10,20] overlaps both
    codes = codes_for(
        Predicate("r", "v", RANGE, lo=10.0, hi=20.0),
        "numeric", ("[0, 15)", "[15, 30)"), (0.0, 15.0, 30.0),
    )
    assert codes == {0, 1}


def test_range_codes_outside_all_bins():
    codes = codes_for(
        Predicate("r", "v", RANGE, lo=100.0, hi=200.0),
        "numeric", ("[0, 15)", "[15, 30)"), (0.0, 15.0, 30.0),
    )
    assert codes == set()


def test_range_codes_last_bin_closed():
    codes = codes_for(
        Predicate("r", "v", RANGE, lo=30.0, hi=30.0),
        "numeric", ("[0, 15)", "[15, 30)"), (0.0, 15.0, 30.0),
    )
    assert codes == {1}


@given(st.sampled_from(["relations", "predicate_rel", "predicate_attr", "join"]))
def test_mutated_queries_rejected(toy_catalog_path_free, mutation):
    schema = toy_catalog_path_free
    doc = {
        "relations": ["customers", "purchases"],
        "joins": [["purchases", "customer_id"]],
        "predicates": [{"relation": "customers", "attribute": "hair", "op": "eq", "value": "Blond"}],
    }
    if mutation == "relations":
        doc["relations"] = ["customers", "ghosts"]
    elif mutation == "predicate_rel":
        doc["predicates"][0]["relation"] = "ghosts"
    elif mutation == "predicate_attr":
        doc["predicates"][0]["attribute"] = "ghost_attr"
    else:
        doc["joins"] = [["purchases", "ghost_fk"]]
    with pytest.raises(QueryError):
        parse_query(doc, schema)


@pytest.fixture(scope="module")
def toy_catalog_path_free(tmp_path_factory):
    d = tmp_path_factory.mktemp("toyq")
    return load_schema(build_toy(d))


def test_to_dict_reparses(toy_catalog):
    q = parse_query(TOY_QUERY, toy_catalog.schema)
    assert parse_query(to_dict(q), toy_catalog.schema) == q
