import pytest

from geogrow.geocode import GeoPoint
from geogrow.ingest import (
    ColumnMap, Event, IngestError, StudyArea, parse_accidents,
    parse_regional_features, serialize_accidents, serialize_regional_features,
)

HANNOVER_AREA = StudyArea("hannover", 52.2, 52.55, 9.5, 10.1)

HEADER = "OBJECTID;YGCSWGS84;XGCSWGS84;UJAHR;UMONAT;USTUNDE;UWOCHENTAG;UART;USTRZUSTAND"


def write(tmp_path, name, lines):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_parse_well_formed_rows(tmp_path):
    path = write(tmp_path, "acc.csv", [
        HEADER,
        "1;52.37;9.73;2017;5;14;2;3;0",
        "2;52.40;9.80;2018;11;8;1;5;1",
        "3;52.30;9.60;2016;1;23;7;1;2",
    ])
    events, report = parse_accidents(path, HANNOVER_AREA)
    assert len(events) == 3
    assert report.rows_total == 3
    assert report.accepted == 3
    assert report.rejected == 0
    first = events[0]
    assert first.id == "1"
    assert first.location == GeoPoint(52.37, 9.73)
    assert first.year == 2017 and first.month == 5 and first.hour == 14
    # Atlas day 2 = Monday -> ISO 1; Atlas 1 = Sunday -> ISO 7; Atlas 7 -> ISO 6.
    assert events[0].day_of_week == 1
    assert events[1].day_of_week == 7
    assert events[2].day_of_week == 6


def test_parse_rejects_bad_rows_with_reasons(tmp_path):
    path = write(tmp_path, "acc.csv", [
        HEADER,
        "1;52.37;9.73;2017;5;25;2;3;0",    # hour out of range
        "2;52.40;abc;2018;11;8;1;5;1",     # bad longitude
        "3;52.30;9.60;2015;1;23;7;1;2",    # year out of range
        "4;52.37;9.73;2017;5;14;2;3;0",    # fine
    ])
    events, report = parse_accidents(path, HANNOVER_AREA)
    assert len(events) == 1
    assert report.rows_total == 4
    assert report.accepted == 1
    assert report.rejected == 3
    assert report.accepted + report.rejected == report.rows_total
    reasons = {line: reason for line, reason in report.rejections}
    assert "hour" in reasons[2]
    assert "longitude" in reasons[3]
    assert "year" in reasons[4]


def test_parse_filters_out_of_area_with_count(tmp_path):
    path = write(tmp_path, "acc.csv", [
        HEADER,
        "1;52.37;9.73;2017;5;14;2;3;0",
        "2;48.13;11.57;2017;5;14;2;3;0",  # Munich, outside Hannover bbox
    ])
    events, report = parse_accidents(path, HANNOVER_AREA)
    assert len(events) == 1
    assert report.out_of_area == 1
    assert report.rejected == 1


def test_parse_missing_column_is_fatal(tmp_path):
    path = write(tmp_path, "acc.csv", [
        "OBJECTID;YGCSWGS84;XGCSWGS84;UJAHR;UMONAT;USTUNDE;UWOCHENTAG;UART",
        "1;52.37;9.73;2017;5;14;2;3",
    ])
    with pytest.raises(IngestError, match="USTRZUSTAND"):
        parse_accidents(path, HANNOVER_AREA)


def test_parse_comma_delimiter_and_custom_columns(tmp_path):
    path = write(tmp_path, "acc.csv", [
        "eid,latitude,longitude,yr,mo,hr,dow,typ,cond",
        "a1,52.37,9.73,2019,12,0,5,2,1",
    ])
    columns = ColumnMap(id="eid", lat="latitude", lon="longitude", year="yr",
                        month="mo", hour="hr", day_of_week="dow",
                        accident_type="typ", road_condition="cond",
                        day_of_week_convention="iso")
    events, report = parse_accidents(path, HANNOVER_AREA, columns, delimiter=",")
    assert len(events) == 1
    assert events[0].day_of_week == 5


def test_roundtrip_serialize_parse(tmp_path):
    events = [
        Event("7", GeoPoint(52.371, 9.733), 2018, 3, 4, 17, "3", "1"),
        Event("8", GeoPoint(52.412345678, 9.80000001), 2019, 10, 7, 6, "10", "0"),
    ]
    path = tmp_path / "out.csv"
    serialize_accidents(events, path)
    parsed, report = parse_accidents(path, HANNOVER_AREA)
    assert parsed == events
    assert report.rejected == 0


def test_event_month_index():
    ev = Event("1", GeoPoint(52.37, 9.73), 2017, 3, 1, 12, "1", "0")
    assert ev.month_index == 14


def test_regional_parse_and_roundtrip(tmp_path):
    path = write(tmp_path, "reg.csv", [
        "geohash7,feature_name,value",
        "u1qcvmz,junction_count,4",
        "u1qcvmz,custom_metric,1.25",
        "u1qcvmy,junction_count,2",
    ])
    table, report = parse_regional_features(path)
    assert report.accepted == 3
    assert table.get("u1qcvmz", "junction_count") == 4.0
    # Open vocabulary: unknown feature names stored verbatim.
    assert table.get("u1qcvmz", "custom_metric") == 1.25

    out = tmp_path / "reg_out.csv"
    serialize_regional_features(table, out)
    table2, _ = parse_regional_features(out)
    assert table2.get("u1qcvmz", "custom_metric") == 1.25
    assert len(table2) == len(table)


def test_regional_rejects_bad_rows(tmp_path):
    path = write(tmp_path, "reg.csv", [
        "geohash7,feature_name,value",
        "u1qcvm,junction_count,4",      # precision 6, not 7
        "u1qail0,junction_count,4",     # invalid geohash characters
        "u1qcvmz,junction_count,inf",   # non-finite
        "u1qcvmz,junction_count,oops",  # not a number
        "u1qcvmz,junction_count,3",
    ])
    table, report = parse_regional_features(path)
    assert report.accepted == 1
    assert report.rejected == 4
    assert report.rows_total == 5


def test_regional_duplicate_last_wins(tmp_path):
    path = write(tmp_path, "reg.csv", [
        "geohash7,feature_name,value",
        "u1qcvmz,junction_count,4",
        "u1qcvmz,junction_count,9",
    ])
    table, report = parse_regional_features(path)
    assert table.get("u1qcvmz", "junction_count") == 9.0
    assert report.duplicate_keys == 1


def test_regional_requires_header(tmp_path):
    path = write(tmp_path, "reg.csv", ["cell,name,value", "u1qcvmz,x,1"])
    with pytest.raises(IngestError):
        parse_regional_features(path)


def test_study_area_validation():
    with pytest.raises(IngestError):
        StudyArea("bad", 52.0, 52.0, 9.0, 10.0)
