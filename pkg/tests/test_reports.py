"""Score records and result tables: formatting, parsing, split ordering."""

import pytest

from cascade_st.reports import (
    PAPER_SPLITS,
    ReportError,
    ScoreRecord,
    append_records,
    format_table,
    order_splits,
    parse_table,
    read_records,
    tables_from_records,
)


def test_score_records_round_trip(tmp_path):
    path = tmp_path / "scores.jsonl"
    records = [
        ScoreRecord("sysA", "dev-2010", "bleu", "segmented", 71.25),
        ScoreRecord("sysA", "tst2010", "wer", "segmented", 12.5),
    ]
    append_records(path, records[:1])
    append_records(path, records[1:])
    assert read_records(path) == records


def test_split_ordering_puts_known_columns_first():
    shuffled = ["tst-2015", "zzz", "dev-2010", "alpha", "tst2010"]
    assert order_splits(shuffled) == ["dev-2010", "tst2010", "tst-2015", "alpha", "zzz"]


def test_standard_split_order():
    assert order_splits(list(PAPER_SPLITS)) == list(PAPER_SPLITS)
    assert PAPER_SPLITS == ("dev-2010", "tst2010", "tst-2013", "tst-2014", "tst-2015")


def test_format_parse_round_trip():
    rows = [
        ("plain cascade", {"dev-2010": 71.257, "tst2010": 68.4}),
        ("joint", {"dev-2010": 73.0}),
    ]
    text = format_table("system", ["dev-2010", "tst2010"], rows)
    header, columns, cells = parse_table(text)
    assert header == "system"
    assert columns == ["dev-2010", "tst2010"]
    # values survive at the printed 2-decimal resolution
    assert cells["plain cascade"]["dev-2010"] == float(f"{71.257:.2f}")
    assert cells["plain cascade"]["tst2010"] == 68.4
    assert "tst2010" not in cells["joint"]


def test_missing_cells_render_as_dash():
    text = format_table("system", ["a", "b"], [("x", {"a": 1.0})])
    line = text.splitlines()[1]
    assert line.split("|")[-1].strip() == "-"


def test_tables_group_by_metric_and_mode(tmp_path):
    path = tmp_path / "scores.jsonl"
    append_records(path, [
        ScoreRecord("s1", "dev-2010", "bleu", "segmented", 70.0),
        ScoreRecord("s1", "dev-2010", "bleu", "mwer-stream", 69.0),
        ScoreRecord("s1", "dev-2010", "wer", "segmented", 8.0),
    ])
    tables = tables_from_records(read_records(path))
    assert set(tables) == {"bleu/segmented", "bleu/mwer-stream", "wer/segmented"}


def test_later_records_overwrite_same_cell(tmp_path):
    path = tmp_path / "scores.jsonl"
    append_records(path, [
        ScoreRecord("s1", "dev-2010", "bleu", "segmented", 70.0),
        ScoreRecord("s1", "dev-2010", "bleu", "segmented", 75.0),
    ])
    tables = tables_from_records(read_records(path))
    _, _, cells = parse_table(tables["bleu/segmented"])
    assert cells["s1"]["dev-2010"] == 75.0


def test_system_rows_keep_first_appearance_order(tmp_path):
    path = tmp_path / "scores.jsonl"
    append_records(path, [
        ScoreRecord("zeta", "dev-2010", "bleu", "segmented", 1.0),
        ScoreRecord("alpha", "dev-2010", "bleu", "segmented", 2.0),
    ])
    tables = tables_from_records(read_records(path))
    lines = tables["bleu/segmented"].splitlines()
    assert lines[1].startswith("zeta")
    assert lines[2].startswith("alpha")


def test_parse_rejects_garbage():
    with pytest.raises(ReportError):
        parse_table("not a table at all")
