import h11
import pytest
from hypothesis import given, settings, strategies as st

from trafficprofile.errors import NotHttp
from trafficprofile.protocols.http import (build_request, build_response, count_cookies,
                                           parse_http, parse_user_agent_os)


def test_cookie_and_content_type_fixture():
    client = b"GET / HTTP/1.1\r\nHost: example.com\r\nCookie: a=1; b=2\r\n\r\n"
    server = (b"HTTP/1.1 200 OK\r\nContent-Type: text/html\r\nContent-Length: 5\r\n\r\n"
              b"hello")
    (tx,) = parse_http(client, server)
    assert tx.request_cookie_count == 2
    assert tx.response_content_type == "text/html"
    assert tx.host == "example.com"
    assert tx.response_body == b"hello"


def test_empty_streams():
    assert parse_http(b"", b"") == []


def test_pipelined_pairs_in_order():
    client = (build_request("GET", "a.example", "/one") + build_request("GET", "a.example", "/two"))
    server = (build_response(200, b"1", content_type="text/plain")
              + build_response(404, b"22", content_type="application/json", reason="Not Found"))
    first, second = parse_http(client, server)
    assert (first.path, first.response_status, first.response_body) == ("/one", 200, b"1")
    assert (second.path, second.response_status, second.response_body) == ("/two", 404, b"22")
    assert second.response_content_type == "application/json"


def test_not_http():
    with pytest.raises(NotHttp):
        parse_http(b"\x16\x03\x01\x00\x05hello", b"")
    with pytest.raises(NotHttp):
        parse_http(b"SSH-2.0-OpenSSH\r\n", b"")


def test_chunked_response_is_dechunked():
    body = b"x" * 1300
    (tx,) = parse_http(build_request("GET", "h"), build_response(200, body, chunked=True))
    assert tx.response_body == body


def test_interim_100_continue_skipped():
    client = build_request("POST", "h", "/up", body=b"data")
    server = (b"HTTP/1.1 100 Continue\r\n\r\n"
              + build_response(201, b"ok", content_type="text/plain", reason="Created"))
    (tx,) = parse_http(client, server)
    assert tx.response_status == 201 and tx.request_body == b"data"


def test_head_and_304_have_no_body():
    client = build_request("HEAD", "h") + build_request("GET", "h")
    server = (b"HTTP/1.1 200 OK\r\nContent-Length: 100\r\n\r\n"
              b"HTTP/1.1 304 Not Modified\r\n\r\n")
    head, get = parse_http(client, server)
    assert head.response_body is None and get.response_status == 304


def test_truncated_response_keeps_completed_transactions():
    client = build_request("GET", "h", "/a") + build_request("GET", "h", "/b")
    server = build_response(200, b"ok") + b"HTTP/1.1 200 OK\r\nContent-Length: 50\r\n\r\nshort"
    first, second = parse_http(client, server)
    assert first.response_status == 200
    assert second.response_status is None


def test_malformed_framing_stops_quietly():
    client = build_request("GET", "h", "/a") + b"GARBAGE\r\n\r\n"
    (tx,) = parse_http(client, b"")
    assert tx.path == "/a"


def test_host_port_and_case_normalized():
    (tx,) = parse_http(b"GET / HTTP/1.1\r\nHost: News.Example.ORG:8080\r\n\r\n", b"")
    assert tx.host == "news.example.org"


def test_no_cookie_header():
    assert count_cookies([]) == 0
    assert count_cookies(["a=1; b=2", "c=3"]) == 3
    assert count_cookies(["flag; a=1"]) == 1


def test_content_encoding_recorded():
    (tx,) = parse_http(build_request("GET", "h"),
                       build_response(200, b"zz", content_type="Text/HTML; charset=UTF-8",
                                      content_encoding="GZIP",
                                      content_disposition="attachment; filename=a.pdf"))
    assert tx.response_content_type == "text/html"
    assert tx.response_content_encoding == "gzip"
    assert tx.response_content_disposition == "attachment; filename=a.pdf"


@pytest.mark.parametrize("ua, expected", [
    ("Dalvik/2.1.0 (Linux; U; Android 5.0.1; Nexus 5 Build/LRX22C)", "Android 5.0.1"),
    ("curl/7.1", None),
    ("Mozilla/5.0 (Linux; Android 4.4.2; GT-I9505) AppleWebKit/537.36", "Android 4.4.2"),
    ("Mozilla/5.0 (Linux; Android 7; SM-G930F)", "Android 7"),
    ("Mozilla/5.0 (iPhone; CPU iPhone OS 10_3 like Mac OS X)", None),
    (None, None),
])
def test_user_agent_os(ua, expected):
    assert parse_user_agent_os(ua) == expected


# --- round trip against an independent HTTP/1.1 implementation ---------------------

_token = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789", min_size=1, max_size=8)
_hosts = st.lists(_token, min_size=1, max_size=3).map(".".join)


def _h11_request(data: bytes):
    conn = h11.Connection(h11.SERVER)
    conn.receive_data(data)
    event = conn.next_event()
    return event, {k.decode().lower(): v.decode() for k, v in event.headers}


def _h11_response(request: bytes, data: bytes):
    conn = h11.Connection(h11.CLIENT)
    conn.send(h11.Request(method="GET", target="/", headers=[("Host", "x")]))
    conn.send(h11.EndOfMessage())
    conn.receive_data(data)
    event = conn.next_event()
    body = b""
    while True:
        nxt = conn.next_event()
        if isinstance(nxt, h11.Data):
            body += nxt.data
        else:
            break
    return event, {k.decode().lower(): v.decode() for k, v in event.headers}, body


@settings(max_examples=200, deadline=None)
@given(host=_hosts, path=_token.map(lambda s: "/" + s),
       cookies=st.dictionaries(_token, _token, max_size=5),
       ua=st.sampled_from([None, "Mozilla/5.0 (Linux; Android 6.0.1; X)"]),
       body=st.binary(max_size=300), chunked=st.booleans(),
       ctype=st.sampled_from(["text/html", "application/json", "image/png", None]))
def test_round_trip_matches_h11(host, path, cookies, ua, body, chunked, ctype):
    req = build_request("GET", host, path, user_agent=ua, cookies=cookies)
    resp = build_response(200, body, content_type=ctype, chunked=chunked)
    (tx,) = parse_http(req, resp)

    event, headers = _h11_request(req)
    assert tx.method == event.method.decode() and tx.path == event.target.decode()
    assert tx.host == headers["host"]
    assert tx.user_agent == headers.get("user-agent")
    assert tx.request_cookie_count == count_cookies([headers["cookie"]] if "cookie" in headers
                                                    else []) == len(cookies)

    event, headers, h11_body = _h11_response(req, resp)
    assert tx.response_status == event.status_code
    assert tx.response_content_type == headers.get("content-type")
    assert tx.response_body == h11_body == body
