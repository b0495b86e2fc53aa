import pytest
from hypothesis import given, settings, strategies as st

from botmon.logs import (
    LogEntry,
    ParseError,
    ParseStats,
    anonymize,
    iter_entries,
    parse_line,
)

CLF_LINE = '127.0.0.1 - - [10/Oct/2000:13:55:36 -0700] "GET /apache_pb.gif HTTP/1.0" 200 2326'
COMBINED_LINE = (
    '10.1.2.3 - frank [10/Oct/2000:13:55:36 -0700] "GET /index.html?q=1 HTTP/1.0" '
    '200 2326 "http://ref.example/start" "Mozilla/4.08"'
)


class TestParseLine:
    def test_apache_common_example(self):
        entry = parse_line(CLF_LINE, "apache-common")
        assert entry == LogEntry(timestamp=971211336, host_id="127.0.0.1", request_id="/apache_pb.gif")

    def test_triple_csv_example(self):
        entry = parse_line("971211336,10.0.0.5,/cart", "triple-csv")
        assert entry == LogEntry(timestamp=971211336, host_id="10.0.0.5", request_id="/cart")

    def test_garbage_line_is_malformed(self):
        with pytest.raises(ParseError):
            parse_line("garbage line", "apache-common")
        with pytest.raises(ParseError):
            parse_line("garbage line", "triple-csv")

    def test_combined_parses_and_strips_query(self):
        entry = parse_line(COMBINED_LINE, "apache-combined")
        assert entry.host_id == "10.1.2.3"
        assert entry.request_id == "/index.html"
        assert entry.timestamp == 971211336

    def test_combined_requires_referer_and_agent(self):
        with pytest.raises(ParseError):
            parse_line(CLF_LINE, "apache-combined")

    def test_query_strip_configurable(self):
        entry = parse_line(COMBINED_LINE, "apache-combined", strip_query=False)
        assert entry.request_id == "/index.html?q=1"

    def test_timezone_normalized_to_utc(self):
        east = '1.1.1.1 - - [10/Oct/2000:22:55:36 +0200] "GET /x HTTP/1.0" 200 1'
        west = '1.1.1.1 - - [10/Oct/2000:13:55:36 -0700] "GET /x HTTP/1.0" 200 1'
        assert parse_line(east, "apache-common").timestamp == parse_line(west, "apache-common").timestamp

    def test_unknown_format_is_config_error(self):
        with pytest.raises(ValueError, match="unknown log format"):
            parse_line(CLF_LINE, "clf")

    def test_csv_rejects_negative_timestamp_and_empty_fields(self):
        with pytest.raises(ParseError):
            parse_line("-5,host,/a", "triple-csv")
        with pytest.raises(ParseError):
            parse_line("10,,/a", "triple-csv")
        with pytest.raises(ParseError):
            parse_line("10,host,", "triple-csv")

    def test_pre_epoch_timestamp_rejected(self):
        line = '1.1.1.1 - - [10/Oct/1969:13:55:36 +0000] "GET /x HTTP/1.0" 200 1'
        with pytest.raises(ParseError):
            parse_line(line, "apache-common")

    @given(st.text(max_size=300))
    @settings(max_examples=200, deadline=None)
    def test_never_raises_anything_but_parse_error(self, raw):
        for fmt in ("apache-common", "apache-combined", "triple-csv"):
            try:
                entry = parse_line(raw, fmt)
            except ParseError:
                continue
            assert entry.host_id and entry.request_id
            assert entry.timestamp >= 0

    @given(st.binary(max_size=200))
    @settings(max_examples=100, deadline=None)
    def test_fuzz_binary_input(self, blob):
        raw = blob.decode("utf-8", "replace")
        try:
            parse_line(raw, "triple-csv")
        except ParseError:
            pass


class TestAnonymize:
    def test_deterministic(self):
        entry = LogEntry(10, "10.0.0.5", "/cart")
        assert anonymize(entry, b"salt") == anonymize(entry, b"salt")

    def test_equal_hosts_stay_equal(self):
        a = anonymize(LogEntry(1, "h", "/x"), b"s")
        b = anonymize(LogEntry(2, "h", "/y"), b"s")
        assert a.host_id == b.host_id
        assert a.request_id != b.request_id

    def test_timestamp_unchanged_and_ids_replaced(self):
        entry = LogEntry(42, "host", "/r")
        out = anonymize(entry, b"pepper")
        assert out.timestamp == 42
        assert out.host_id != "host" and out.request_id != "/r"

    def test_empty_salt_rejected(self):
        with pytest.raises(ValueError):
            anonymize(LogEntry(1, "h", "/x"), b"")

    @given(st.text(min_size=1, max_size=40), st.text(min_size=1, max_size=40))
    @settings(max_examples=100, deadline=None)
    def test_preserves_identifier_equality(self, a, b):
        salt = b"fixed"
        ea = anonymize(LogEntry(0, a, "/r"), salt)
        eb = anonymize(LogEntry(0, b, "/r"), salt)
        assert (ea.host_id == eb.host_id) == (a == b)


class TestIterEntries:
    def test_malformed_lines_counted_and_skipped(self):
        lines = ["10,h1,/a", "not a line", "11,h2,/b", ""]
        stats = ParseStats()
        out = list(iter_entries(lines, "triple-csv", stats=stats))
        assert [e.host_id for e in out] == ["h1", "h2"]
        assert stats.total == 3 and stats.parsed == 2 and stats.malformed == 1

    def test_csv_header_skipped_silently(self):
        lines = ["timestamp,host,request", "10,h1,/a"]
        stats = ParseStats()
        out = list(iter_entries(lines, "triple-csv", stats=stats))
        assert len(out) == 1
        assert stats.malformed == 0

    def test_disabled_anonymization_returns_entries_unchanged(self):
        out = list(iter_entries(["10,h1,/a"], "triple-csv", salt=None))
        assert out == [LogEntry(10, "h1", "/a")]

    def test_salt_applies_to_stream(self):
        plain = list(iter_entries(["10,h1,/a"], "triple-csv"))
        hashed = list(iter_entries(["10,h1,/a"], "triple-csv", salt=b"s"))
        assert hashed[0].host_id != plain[0].host_id
        assert hashed[0].timestamp == 10
