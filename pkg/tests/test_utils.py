import json

import numpy as np
import pytest

from delay_kolmogorov.utils.numerics import matvec, rows_times_vector, rowsum_squares
from delay_kolmogorov.utils.pool import run_chunked, split_ids
from delay_kolmogorov.utils.serialization import dumps, format_float, to_jsonable, write_csv


def test_split_ids():
    assert split_ids([], 4) == []
    assert split_ids(range(5), 1) == [[0, 1, 2, 3, 4]]
    assert split_ids(range(5), 2) == [[0, 1, 2], [3, 4]]
    # 塊の大きさは max_chunk 以下
    chunks = split_ids(range(10), 1, max_chunk=4)
    assert all(len(c) <= 4 for c in chunks)
    assert sum(chunks, []) == list(range(10))


def test_run_chunked_keeps_order():
    def square(chunk):
        return [i * i for i in chunk]

    ids = list(range(200))
    expected = [i * i for i in ids]

    assert run_chunked(square, ids, threads=1) == expected
    assert run_chunked(square, ids, threads=4) == expected


def test_run_chunked_propagates_errors():
    def fail(chunk):
        raise RuntimeError("boom")

    with pytest.raises(RuntimeError, match="boom"):
        run_chunked(fail, range(10), threads=2)


def test_numerics_match_numpy():
    rng = np.random.default_rng(0)
    matrix = rng.normal(size=(3, 4))
    x = rng.normal(size=(5, 4))
    g = rng.normal(size=(5, 3, 4))

    np.testing.assert_allclose(matvec(matrix, x), x @ matrix.T, rtol=1e-12)
    np.testing.assert_allclose(rowsum_squares(g), (g**2).sum(axis=-1), rtol=1e-12)
    np.testing.assert_allclose(rows_times_vector(g, x), np.einsum("bij,bj->bi", g, x), rtol=1e-12)


def test_format_float_round_trips():
    assert format_float(0.0) == "0"
    assert format_float(1.0) == "1"
    assert float(format_float(0.1)) == 0.1
    assert float(format_float(1.0 / 3.0)) == 1.0 / 3.0


def test_to_jsonable():
    data = {
        "face": frozenset({2, 0}),
        "array": np.array([1.5, np.nan]),
        "count": np.int64(3),
        "inf": float("inf"),
        1: "key",
    }

    assert to_jsonable(data) == {"face": [0, 2], "array": [1.5, None], "count": 3, "inf": None, "1": "key"}
    with pytest.raises(TypeError, match="JSONに変換できない"):
        to_jsonable(object())


def test_dumps_is_stable():
    text = dumps({"x": 0.1, "nested": {"empty": [], "values": [1.0, float("nan")]}, "label": "λ"})

    assert text.endswith("\n")
    assert "0.10000000000000001" in text
    assert "λ" in text
    assert json.loads(text) == {"x": 0.1, "nested": {"empty": [], "values": [1, None]}, "label": "λ"}
    assert dumps(json.loads(text)) == text


def test_write_csv(tmp_path):
    path = write_csv(tmp_path / "sub" / "out.csv", ["t", "x1"], [[0.0, 1.0], [0.5, 0.1]])

    assert path.read_bytes() == b"t,x1\n0,1\n0.5,0.10000000000000001\n"
