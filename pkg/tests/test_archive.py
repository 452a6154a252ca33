"""Archive container: canonical round-trips, integrity errors, flow lookup."""

import hashlib
import ipaddress

import numpy as np
import pytest

from dspas.archive import (
    FORMAT_VERSION,
    HEADER_SIZE,
    _checksum,
    check_params,
    list_flows,
    read_archive,
    write_archive,
)
from dspas.codec import digest_signal
from dspas.corpus import SyntheticCorpusSpec, digest_corpus, generate_corpus
from dspas.errors import (
    BadMagicError,
    ChecksumError,
    ParameterMismatchError,
    TruncatedArchiveError,
    UnsupportedVersionError,
)
from dspas.flows import CapturePeriod, FlowKey, Protocol
from dspas.preprocess import PreprocessConfig, preprocess_payload

CFG = PreprocessConfig()
PERIOD = CapturePeriod(period_id=0, start_time=0.0, end_time=3600.0, flow_count=0)


def _mini_corpus(n_flows, seed, min_b=200, max_b=700):
    spec = SyntheticCorpusSpec(flow_count=n_flows, min_bytes=min_b, max_bytes=max_b, seed=seed)
    return generate_corpus(spec)


def _archive_path(tmp_path, corpus, name="a.dspas", chunk_len=128, q=4):
    digests, period = digest_corpus(corpus, CFG, chunk_len, q)
    path = tmp_path / name
    write_archive(str(path), period, digests, CFG, chunk_len, q, 1)
    return path, digests


def test_empty_archive(tmp_path):
    path = tmp_path / "empty.dspas"
    write_archive(str(path), PERIOD, [], CFG, 1024, 4, 1)
    arch = read_archive(str(path))
    assert arch.header.flow_count == 0
    assert arch.flows == [] and arch.blob == b""


def test_single_flow_round_trip_bit_exact(tmp_path):
    corpus = _mini_corpus(1, 21)
    path, digests = _archive_path(tmp_path, corpus)
    arch = read_archive(str(path))
    got = arch.digest_for(arch.flows[0])
    assert got.coded_stream == digests[0].coded_stream
    assert got.key == digests[0].key
    assert got.original_word_count == digests[0].original_word_count
    assert np.array_equal(got.exponents, digests[0].exponents)


def test_thousand_flow_readback_oracle(tmp_path):
    corpus = _mini_corpus(1000, 22)
    path, digests = _archive_path(tmp_path, corpus)
    arch = read_archive(str(path))
    assert arch.header.flow_count == 1000
    by_key = {d.key: d for d in digests}
    for record in arch.flows:
        want = by_key[record.key]
        assert arch.digest_for(record).coded_stream == want.coded_stream
    # records sorted by key and binary-searchable
    sort_keys = [r.key.sort_key() for r in arch.flows]
    assert sort_keys == sorted(sort_keys)
    for d in digests[::97]:
        assert arch.find(d.key).key == d.key


def test_write_read_write_canonical(tmp_path):
    corpus = _mini_corpus(20, 23)
    path, _ = _archive_path(tmp_path, corpus)
    original = path.read_bytes()
    arch = read_archive(str(path))
    rewritten = tmp_path / "b.dspas"
    digests = [arch.digest_for(r) for r in arch.flows]
    period = CapturePeriod(arch.header.period_id, arch.header.period_start,
                           arch.header.period_end, arch.header.flow_count)
    write_archive(str(rewritten), period, digests, CFG, 128, 4, 1)
    assert rewritten.read_bytes() == original


def test_rerun_bit_identical(tmp_path):
    c1 = _mini_corpus(30, 24)
    c2 = _mini_corpus(30, 24)
    p1, _ = _archive_path(tmp_path, c1, "r1.dspas")
    p2, _ = _archive_path(tmp_path, c2, "r2.dspas")
    assert p1.read_bytes() == p2.read_bytes()


def test_truncated_file_is_named_error(tmp_path):
    corpus = _mini_corpus(5, 25)
    path, _ = _archive_path(tmp_path, corpus)
    data = path.read_bytes()
    short = tmp_path / "short.dspas"
    short.write_bytes(data[: len(data) // 2])
    with pytest.raises((ChecksumError, TruncatedArchiveError)):
        read_archive(str(short))
    tiny = tmp_path / "tiny.dspas"
    tiny.write_bytes(data[:30])
    with pytest.raises(TruncatedArchiveError):
        read_archive(str(tiny))


def test_bitflip_detected(tmp_path):
    corpus = _mini_corpus(5, 26)
    path, _ = _archive_path(tmp_path, corpus)
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0x01
    bad = tmp_path / "flip.dspas"
    bad.write_bytes(bytes(data))
    with pytest.raises(ChecksumError):
        read_archive(str(bad))


def test_bad_magic(tmp_path):
    corpus = _mini_corpus(2, 27)
    path, _ = _archive_path(tmp_path, corpus)
    data = bytearray(path.read_bytes())
    data[:4] = b"NOPE"
    bad = tmp_path / "magic.dspas"
    bad.write_bytes(bytes(data))
    with pytest.raises(BadMagicError):
        read_archive(str(bad))


def test_unsupported_version(tmp_path):
    corpus = _mini_corpus(2, 28)
    path, _ = _archive_path(tmp_path, corpus)
    data = bytearray(path.read_bytes())
    data[4] = FORMAT_VERSION + 1  # version u16 LE low byte
    body = bytes(data[:-8])
    bad = tmp_path / "ver.dspas"
    bad.write_bytes(body + _checksum(body))
    with pytest.raises(UnsupportedVersionError):
        read_archive(str(bad))


def test_parameter_mismatch(tmp_path):
    corpus = _mini_corpus(2, 29)
    path, _ = _archive_path(tmp_path, corpus)
    arch = read_archive(str(path))
    with pytest.raises(ParameterMismatchError):
        check_params(arch, PreprocessConfig(word_size=4, run_threshold=64), 128, 4)
    with pytest.raises(ParameterMismatchError):
        read_archive(str(path), expected=(CFG, 128, 5))
    read_archive(str(path), expected=(CFG, 128, 4))  # matching passes


def test_duplicate_key_rejected(tmp_path):
    data = b"x" * 300
    sig = preprocess_payload(data, CFG)
    key = FlowKey(ipaddress.ip_address("10.0.0.1"), ipaddress.ip_address("10.0.0.2"),
                  1, 2, Protocol.TCP)
    d = digest_signal(sig, 128, 4, pad_seed=1, key=key)
    with pytest.raises(ValueError):
        write_archive(str(tmp_path / "dup.dspas"), PERIOD, [d, d], CFG, 128, 4, 1)


def test_list_flows_filters(tmp_path):
    corpus = _mini_corpus(200, 30)
    path, _ = _archive_path(tmp_path, corpus)
    arch = read_archive(str(path))
    assert len(list_flows(arch)) == 200
    one = list_flows(arch, lambda k: k == corpus.flows[7][0])
    assert len(one) == 1 and one[0].key == corpus.flows[7][0]
    subnet = ipaddress.ip_network("10.0.0.0/28")
    got = list_flows(arch, lambda k: k.src_addr in subnet)
    want = [k for k, _ in corpus.flows if k.src_addr in subnet]  # linear-scan oracle
    assert len(got) == len(want)
    assert {r.key for r in got} == set(want)


def test_header_size_is_fixed():
    assert HEADER_SIZE == 64
    corpus = _mini_corpus(1, 31)
    digests, period = digest_corpus(corpus, CFG, 128, 4)
    assert len(digests[0].coded_stream) > 0
