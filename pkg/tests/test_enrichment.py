import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import pytest
import tldextract
from hypothesis import given, settings, strategies as st

from trafficprofile.enrichment import (GENERAL_CATEGORIES, UNKNOWN, UNKNOWN_INFO, DomainCache,
                                       DomainInfo, Enricher, FixtureProvider, Taxonomy,
                                       combine_categories, domain_columns, domain_info_from_row,
                                       registrable_domain)
from trafficprofile.errors import ProviderUnavailable, UnknownSourceCategory

NEWS = {"rank": 1200, "scores": {"good_site": 90, "trustworthiness": 92, "child_safety": 88},
        "flags": {"spam": True}, "categories": {"source_a": "news", "source_b": "news"}}

# offline public-suffix oracle using the snapshot bundled with tldextract
_extract = tldextract.TLDExtract(suffix_list_urls=(), cache_dir=None)


@pytest.fixture
def store(tmp_path):
    path = tmp_path / "store.json"
    path.write_text(json.dumps({"schema_version": 1, "example-news.com": NEWS,
                                "mixed.example": {"categories": {"source_a": "webmail",
                                                                 "source_b": "email"}}}))
    return path


@pytest.fixture(scope="module")
def taxonomy():
    return Taxonomy.load()


def test_fixture_echo(store):
    info = Enricher(FixtureProvider(store)).enrich("example-news.com")
    assert info.popularity_rank == 1200 and info.score_trustworthiness == 92
    assert info.general_category == "NEWS"
    assert info.spam and not info.phishing


def test_unknown_domain(store):
    assert Enricher(FixtureProvider(store)).enrich("nowhere.example") == UNKNOWN_INFO
    assert UNKNOWN_INFO.general_category == UNKNOWN and UNKNOWN_INFO.popularity_rank is None


def test_subdomain_maps_to_registrable_domain(store):
    enricher = Enricher(FixtureProvider(store))
    assert enricher.enrich("m.example-news.com") == enricher.enrich("example-news.com")
    assert enricher.enrich("M.Example-News.com.:8080") == enricher.enrich("example-news.com")


@pytest.mark.parametrize("host", ["m.example-news.com", "a.b.example.co.uk", "example.com",
                                  "x.y.blogspot.com", "www.gov.uk", "shop.example.com.au",
                                  "deep.sub.domain.example.org"])
def test_registrable_domain_matches_public_suffix_oracle(host):
    ext = _extract(host, include_psl_private_domains=True)
    expected = ext.top_domain_under_public_suffix if hasattr(ext, "top_domain_under_public_suffix") \
        else ext.registered_domain
    assert registrable_domain(host) == (expected or host)


def test_ip_host_unchanged():
    assert registrable_domain("93.184.216.34") == "93.184.216.34"
    assert registrable_domain("[2001:db8::1]") == "2001:db8::1"


def test_combine_categories(taxonomy):
    assert combine_categories("socialnetworking", None, taxonomy) == "SOCIAL_NETWORK"
    assert combine_categories("news", "news", taxonomy) == "NEWS"
    assert combine_categories("webmail", "email", taxonomy) == "EMAIL"
    assert combine_categories(None, "news", taxonomy) == "NEWS"
    assert combine_categories("news", "sports", taxonomy) == "NEWS"
    assert combine_categories(None, None, taxonomy) == UNKNOWN


def test_webmail_and_email_share_a_category(taxonomy):
    # enumerate the shipped mapping file for the two labels
    rows = dict(taxonomy.items())
    assert rows["webmail"] == rows["email"] == "EMAIL"


def test_unknown_source_category(taxonomy):
    assert combine_categories("no-such-label", "news", taxonomy) == "NEWS"
    with pytest.raises(UnknownSourceCategory):
        combine_categories("no-such-label", None, taxonomy, strict=True)


def test_provider_unavailable(tmp_path):
    missing = FixtureProvider(tmp_path / "absent.json")
    enricher = Enricher(missing)
    assert enricher.enrich("example.com") == UNKNOWN_INFO
    assert enricher.diagnostics["provider_unavailable"] == 1
    assert "example.com" not in enricher.cache
    with pytest.raises(ProviderUnavailable):
        Enricher(missing, strict=True).enrich("example.com")


def test_invalid_domain_is_unknown(store):
    enricher = Enricher(FixtureProvider(store))
    assert enricher.enrich("bad host!") == UNKNOWN_INFO
    assert enricher.diagnostics["invalid_domain"] == 1


def test_out_of_range_score_dropped(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"a.example": {"rank": 0, "scores": {"good_site": 140}}}))
    enricher = Enricher(FixtureProvider(path))
    info = enricher.enrich("a.example")
    assert info.score_good_site is None and info.popularity_rank is None
    assert enricher.diagnostics["score_out_of_range"] == 1


def test_directory_store(tmp_path):
    (tmp_path / "example-news.com.json").write_text(json.dumps(NEWS))
    assert Enricher(FixtureProvider(tmp_path)).enrich("example-news.com").general_category == "NEWS"


class _SlowProvider:
    def __init__(self):
        self.calls = 0
        self.lock = threading.Lock()

    def lookup(self, domain):
        with self.lock:
            self.calls += 1
        time.sleep(0.05)
        return NEWS


def test_concurrent_cache_queries_provider_once():
    provider = _SlowProvider()
    enricher = Enricher(provider)
    with ThreadPoolExecutor(8) as pool:
        infos = list(pool.map(enricher.enrich, ["www.example-news.com"] * 16))
    assert provider.calls == 1
    assert len(set(infos)) == 1


def test_cache_persistence_and_transparency(store, tmp_path):
    cache_path = tmp_path / "cache.jsonl"
    cold = Enricher(FixtureProvider(store), cache=DomainCache(cache_path))
    domains = ["example-news.com", "mixed.example", "other.example", "m.example-news.com"]
    first = [cold.enrich(d) for d in domains]
    assert len(cache_path.read_text().splitlines()) == 3

    provider = FixtureProvider(store)
    warm = Enricher(provider, cache=DomainCache(cache_path))
    assert [warm.enrich(d) for d in domains] == first
    assert provider.calls == 0


def test_domain_columns_round_trip():
    infos = [DomainInfo(1200, 90.0, 92.0, None, spam=True, general_category="NEWS"), UNKNOWN_INFO,
             None]
    cols = domain_columns(infos)
    rows = [{c: cols[c][i] for c in cols} for i in range(3)]
    assert [domain_info_from_row(r) for r in rows] == infos


def test_taxonomy_rejects_undeclared_category(tmp_path):
    path = tmp_path / "t.tsv"
    path.write_text("news\tNEWZ\n")
    with pytest.raises(ValueError):
        Taxonomy.load(path)


def test_taxonomy_covers_declared_set(taxonomy):
    assert len(GENERAL_CATEGORIES) == 32
    assert set(v for _, v in taxonomy.items()) == set(GENERAL_CATEGORIES)


_labels = st.one_of(st.none(), st.sampled_from(["news", "webmail", "email", "games", "unheard",
                                                "socialnetworking", "SEARCH", ""]))


@settings(max_examples=300, deadline=None)
@given(a=_labels, b=_labels)
def test_taxonomy_closure(taxonomy, a, b):
    assert combine_categories(a, b, taxonomy) in GENERAL_CATEGORIES + (UNKNOWN,)
