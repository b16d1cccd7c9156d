import statistics

import pytest
from hypothesis import given, settings, strategies as st

from builders import ACK, CLIENT, PSH, SERVER, tcp, tcp_exchange, udp
from trafficprofile.capture import Transport
from trafficprofile.features import (HTTP, HTTPS, OTHER, SESSION_CSV_COLUMNS, detect_protocol,
                                     extract_session_features, read_session_csv,
                                     statistical_features, write_session_csv)
from trafficprofile.protocols.http import build_request, build_response
from trafficprofile.protocols.tls import TlsVersion, build_client_hello, build_server_flight
from trafficprofile.sessions import Session, sessionize


def _session(tx_sizes, rx_sizes, transport=Transport.TCP, port=80):
    pkts = []
    for i, n in enumerate(tx_sizes):
        pkts.append(tcp(2 * i, PSH | ACK, b"a" * n, s=(SERVER, port)))
    for i, n in enumerate(rx_sizes):
        pkts.append(tcp(2 * i + 1, PSH | ACK, b"b" * n, s=(SERVER, port), from_client=False))
    ft = (CLIENT, 40000, SERVER, port, transport)
    return Session("s-0", "s", ft, 0, 0,
                   [p for p in pkts if p.src_ip == CLIENT], [p for p in pkts if p.src_ip != CLIENT])


def test_stat_example():
    st_ = statistical_features(_session([100, 200], [300]))
    assert (st_.tx_pkt_max, st_.tx_pkt_min, st_.tx_pkt_mean, st_.tx_pkt_median, st_.tx_pkt_var) \
        == (200, 100, 150, 150, 2500)
    assert (st_.bytes_tx, st_.bytes_rx, st_.bytes_total, st_.tx_rx_ratio) == (300, 300, 600, 1.0)


def test_single_tx_packet():
    st_ = statistical_features(_session([80], []))
    assert st_.tx_pkt_var == 0 and st_.tx_pkt_mean == 80
    assert (st_.rx_pkt_max, st_.rx_pkt_mean, st_.rx_pkt_var) == (0, 0, 0)
    assert st_.tx_rx_ratio == 80


def test_empty_session_all_zero():
    st_ = statistical_features(_session([0, 0], [0]))
    assert all(v == 0 for v in vars(st_).values())


def test_http_session_features():
    req = build_request("GET", "news.example.org", user_agent="Dalvik/2.1.0 (Linux; Android 5.0.1)",
                        cookies={"a": "1", "b": "2"})
    resp = build_response(200, b"<html><form></form></html>", content_type="text/html")
    (sess,) = sessionize(tcp_exchange(0, req, resp), "s")
    sf = extract_session_features(sess)
    assert sf.domain_name == "news.example.org" and sf.protocol == HTTP
    assert sf.app.cookie_count == 2 and sf.app.os_version == "Android 5.0.1"
    assert sf.app.content_type == "text/html"
    assert sf.app.tls_version is None and sf.app.cert_expired is None
    assert sf.dpi.form_count == 1


def test_tls_session_features():
    s = (SERVER, 443)
    (sess,) = sessionize(tcp_exchange(0, build_client_hello("cdn.example.net"),
                                      build_server_flight(0x0303, None), s=s), "s")
    sf = extract_session_features(sess)
    assert sf.domain_name == "cdn.example.net" and sf.protocol == HTTPS
    assert sf.app.tls_version is TlsVersion.TLS1_2
    assert sf.app.cookie_count is None and sf.dpi is None


def test_udp_dns_session():
    (sess,) = sessionize([udp(0, b"q" * 30), udp(1, b"r" * 90, from_client=False)], "s")
    sf = extract_session_features(sess)
    assert sf.app is None and sf.dpi is None and sf.domain_name is None
    assert sf.stat.bytes_total == 120


def test_payload_shape_beats_port():
    s = (SERVER, 8080)
    (sess,) = sessionize(tcp_exchange(0, build_request("GET", "alt.example"), b"", s=s), "s")
    assert detect_protocol(sess) == HTTP
    (sess,) = sessionize(tcp_exchange(0, b"\x00\x01binary", b"", s=(SERVER, 443)), "s")
    assert detect_protocol(sess) == HTTPS
    (sess,) = sessionize(tcp_exchange(0, b"\x00\x01binary", b"", s=(SERVER, 5228)), "s")
    assert detect_protocol(sess) == OTHER


def test_parser_failure_degrades_to_none():
    # port 443 but the payload is not TLS
    (sess,) = sessionize(tcp_exchange(0, b"\x00\x01binary", b"", s=(SERVER, 443)), "s")
    sf = extract_session_features(sess)
    assert sf.app is None and sf.domain_name is None


def test_csv_round_trip(tmp_path):
    req = build_request("GET", "a.example", cookies={"k": "v"})
    resp = build_response(200, b"%PDF", content_type="application/pdf",
                          content_disposition="attachment; filename=a.pdf")
    sessions = (sessionize(tcp_exchange(0, req, resp), "s")
                + sessionize(tcp_exchange(0, build_client_hello("b.example"),
                                          build_server_flight(0x0301, None), s=(SERVER, 443)), "s")
                + sessionize([udp(0, b"q")], "s"))
    rows = [extract_session_features(s) for s in sessions]
    path = tmp_path / "f.csv"
    write_session_csv(rows, path)
    assert path.read_text().splitlines()[1].split(",") == list(SESSION_CSV_COLUMNS)
    assert read_session_csv(path) == rows


@settings(max_examples=1000, deadline=None)
@given(tx=st.lists(st.integers(0, 1500), max_size=30), rx=st.lists(st.integers(0, 1500), max_size=30))
def test_stats_against_naive_recomputation(tx, rx):
    got = statistical_features(_session(tx, rx))
    for prefix, sizes in (("tx", [n for n in tx if n]), ("rx", [n for n in rx if n])):
        if sizes:
            assert getattr(got, f"{prefix}_pkt_max") == max(sizes)
            assert getattr(got, f"{prefix}_pkt_min") == min(sizes)
            assert getattr(got, f"{prefix}_pkt_median") == statistics.median(sizes)
            assert getattr(got, f"{prefix}_pkt_mean") == pytest.approx(statistics.fmean(sizes),
                                                                       rel=1e-9)
            assert getattr(got, f"{prefix}_pkt_var") == pytest.approx(statistics.pvariance(sizes),
                                                                      rel=1e-9, abs=1e-9)
        else:
            assert getattr(got, f"{prefix}_pkt_max") == getattr(got, f"{prefix}_pkt_var") == 0
    assert got.bytes_tx == sum(tx) and got.bytes_rx == sum(rx)
    assert got.bytes_total == sum(tx) + sum(rx)
    assert got.tx_rx_ratio == (sum(tx) / sum(rx) if sum(rx) else sum(tx))


@settings(max_examples=200, deadline=None)
@given(kind=st.sampled_from(["http", "tls", "udp", "junk"]), port=st.sampled_from([80, 443, 9000]))
def test_feature_groups_follow_protocol(kind, port):
    s = (SERVER, port)
    if kind == "udp":
        (sess,) = sessionize([udp(0, b"q"), udp(1, b"r", from_client=False)], "s")
    else:
        req = {"http": build_request("GET", "x.example"), "tls": build_client_hello("x.example"),
               "junk": b"\x00junk"}[kind]
        (sess,) = sessionize(tcp_exchange(0, req, b"", s=s), "s")
    sf = extract_session_features(sess)
    if sf.app is None:
        assert sf.dpi is None and sf.domain_name is None
    elif sf.app.protocol == HTTP:
        assert sf.app.tls_version is None and sf.app.cert_self_signed is None
        assert sf.dpi is not None
    else:
        assert sf.app.protocol == HTTPS
        assert sf.app.cookie_count is None and sf.app.content_type is None and sf.dpi is None
