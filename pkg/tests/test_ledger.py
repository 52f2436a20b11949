import threading

import pytest
from hypothesis import given, settings, strategies as st

from didfabric.crypto import canonicalize, generate_keypair, sign_detached
from didfabric.did import Did, DidDocument, document_for_key, new_self_certified_document
from didfabric.errors import (
    AlreadyRegistered,
    BadSignature,
    LedgerUnavailable,
    MalformedDocument,
    SelfCertificationMismatch,
    StaleVersion,
    UnknownDid,
)
from didfabric.ledger import Ledger, LedgerEntry, LedgerServer, RemoteLedger


def signed(doc, kp):
    return sign_detached(canonicalize(doc.to_json()), kp)


def register(ledger, seed):
    kp = generate_keypair(seed)
    did, doc = new_self_certified_document(kp)
    return kp, did, doc, ledger.register_did(doc, signed(doc, kp))


def rotate(ledger, did, signer, seed, key_id="key-2", **kw):
    new = generate_keypair(seed, key_id)
    doc = document_for_key(did, new)
    return new, doc, ledger.update_did_doc(did, doc, signed(doc, signer), **kw)


A, B, C = bytes([1]) * 32, bytes([2]) * 32, bytes([3]) * 32


def test_register_examples(ledger):
    kp, did, doc, receipt = register(ledger, A)
    assert receipt.version == 1 and receipt.did == did
    with pytest.raises(AlreadyRegistered):
        ledger.register_did(doc, signed(doc, kp))


def test_self_certification_mismatch(ledger):
    kp = generate_keypair(A)
    _, doc = new_self_certified_document(kp)
    other, _ = new_self_certified_document(generate_keypair(B))
    swapped = document_for_key(other, kp)
    with pytest.raises(SelfCertificationMismatch):
        ledger.register_did(swapped, signed(swapped, kp))


def test_registration_needs_valid_signature(ledger):
    kp = generate_keypair(A)
    _, doc = new_self_certified_document(kp)
    with pytest.raises(BadSignature):
        ledger.register_did(doc, signed(doc, generate_keypair(B)))


def test_rotation_examples(ledger):
    kp_a, did, v1, _ = register(ledger, A)
    kp_b, v2, receipt = rotate(ledger, did, kp_a, B)
    assert receipt.version == 2
    assert ledger.resolve(did) == v2
    with pytest.raises(BadSignature):
        rotate(ledger, did, kp_a, C, "key-3")  # A is retired
    _, v3, receipt = rotate(ledger, did, kp_b, C, "key-3")
    assert receipt.version == 3
    assert [e.version for e in ledger.history(did)] == [1, 2, 3]
    assert [e.document for e in ledger.history(did)] == [v1, v2, v3]


def test_update_signed_by_future_key_rejected(ledger):
    _, did, _, _ = register(ledger, A)
    kp_b = generate_keypair(B, "key-2")
    doc = document_for_key(did, kp_b)
    with pytest.raises(BadSignature):
        ledger.update_did_doc(did, doc, signed(doc, kp_b))


def test_update_errors(ledger):
    kp, did, _, _ = register(ledger, A)
    with pytest.raises(StaleVersion):
        rotate(ledger, did, kp, B, expected_version=5)
    with pytest.raises(MalformedDocument):
        ledger.update_did_doc(Did("abc"), document_for_key(did, kp), "x..y")
    ghost = Did("abc")
    with pytest.raises(UnknownDid):
        ledger.update_did_doc(ghost, document_for_key(ghost, kp), "x..y")


def test_resolve_examples(ledger):
    kp, did, v1, _ = register(ledger, A)
    assert ledger.resolve(did) == v1
    _, v2, _ = rotate(ledger, did, kp, B)
    assert ledger.resolve(did) == v2
    with pytest.raises(UnknownDid):
        ledger.resolve(Did("abc"))
    with pytest.raises(UnknownDid):
        ledger.history(Did("abc"))
    assert ledger.reads == 4


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.booleans()), min_size=1, max_size=10))
def test_append_only_and_authorization(ops):
    ledger = Ledger()
    keys, snapshots = {}, []
    for i, (slot, honest) in enumerate(ops):
        seed = bytes([i + 1]) * 32
        dids = sorted(keys)
        if slot >= len(dids):
            kp, did, _, _ = register(ledger, seed)
            keys[did] = kp
        else:
            did = dids[slot]
            signer = keys[did] if honest else generate_keypair(bytes([200 + i]) * 32)
            if honest:
                keys[did], _, _ = rotate(ledger, did, signer, seed, f"key-{i}")
            else:
                with pytest.raises(BadSignature):
                    rotate(ledger, did, signer, seed, f"key-{i}")
        for prefix in snapshots:
            assert ledger.entries[: len(prefix)] == prefix
        snapshots.append(list(ledger.entries))
        for did, kp in keys.items():
            assert ledger.resolve(did).authentication_keys() == [kp.public_key]


def test_concurrent_writers_serialized():
    ledger = Ledger()
    kp, did, _, _ = register(ledger, A)
    barrier = threading.Barrier(8)
    results = []

    def attempt(i):
        barrier.wait()
        try:
            rotate(ledger, did, kp, bytes([10 + i]) * 32, f"key-{i + 2}", expected_version=1)
            results.append("ok")
        except (StaleVersion, BadSignature):
            results.append("lost")

    threads = [threading.Thread(target=attempt, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results.count("ok") == 1
    assert len(ledger.history(did)) == 2


def test_journal_round_trip(tmp_path):
    journal = tmp_path / "ledger.ndjson"
    ledger = Ledger(journal)
    kp, did, _, _ = register(ledger, A)
    rotate(ledger, did, kp, B)
    register(ledger, C)
    assert len(journal.read_text().splitlines()) == 3
    assert Ledger(journal).entries == ledger.entries
    ledger.save(tmp_path / "copy.ndjson")
    assert Ledger.load(tmp_path / "copy.ndjson").entries == ledger.entries
    assert LedgerEntry.from_json(ledger.entries[1].to_json()) == ledger.entries[1]


def test_rest_server_and_client(ledger):
    with LedgerServer(ledger) as server:
        remote = RemoteLedger(server.url)
        kp, did, v1, receipt = register(remote, A)
        assert receipt.version == 1
        assert remote.resolve(did) == v1 == ledger.resolve(did)
        with pytest.raises(AlreadyRegistered):
            remote.register_did(v1, signed(v1, kp))
        _, v2, receipt = rotate(remote, did, kp, B)
        assert receipt.version == 2 and remote.resolve(did) == v2
        with pytest.raises(BadSignature):
            rotate(remote, did, kp, C, "key-3")
        with pytest.raises(StaleVersion):
            rotate(remote, did, kp, C, "key-3", expected_version=1)
        assert [e.version for e in remote.history(did)] == [1, 2]
        with pytest.raises(UnknownDid):
            remote.resolve(Did("abc"))


def test_client_against_closed_port():
    with LedgerServer(Ledger()) as server:
        url = server.url
    with pytest.raises(LedgerUnavailable):
        RemoteLedger(url, timeout=1.0).resolve(Did("abc"))
