import os
import random
import threading

import pytest
from hypothesis import given, settings, strategies as st

from didfabric.credentials import BASIC, RICH, TrustRegistry, issue_credential
from didfabric.crypto import generate_keypair
from didfabric.errors import ExpiredChallenge, FabricError, Unsatisfiable
from didfabric.presentation import (
    Challenge,
    ChallengeStore,
    InputDescriptor,
    PresentationDefinition,
    VerifiablePresentation,
    create_presentation,
    select_credentials,
    verify_presentation,
)
from helpers import RVC_CLAIMS, mutate_once, world

PD = PresentationDefinition("issuer-rvc", (InputDescriptor("basic", BASIC, ("agent",)), InputDescriptor("rich", RICH, ("role",))))


def challenge(w, ttl=120, issued_at=0):
    return Challenge.from_bytes(os.urandom(16), w.agent_did, issued_at, ttl)


def presentation(w, ch, creds=None, key=None, holder=None, now=0):
    creds = creds if creds is not None else [w.bvc(), w.rvc()]
    return create_presentation(key or w.agent, holder or w.agent_did, select_credentials(creds, PD), ch, w.other_did, pd_id=PD.pd_id, now=now)


def verify(w, vp, ch, store=None, now=0, registry=None):
    return verify_presentation(
        vp, PD, ch, w.resolver, registry or w.registry, verifier=w.other_did, challenges=store or ChallengeStore(), now=now
    )


def test_select_newest_then_lowest_id():
    w = world()
    old, new = w.rvc(issued_at=1, cred_id="urn:b"), w.rvc(issued_at=5, cred_id="urn:z")
    tie = w.rvc(issued_at=5, cred_id="urn:a")
    picked = dict(select_credentials([old, w.bvc(), new, tie], PD))
    assert picked["rich"] is tie
    picked = dict(select_credentials([old, w.bvc(), new], PD))
    assert picked["rich"] is new
    with pytest.raises(Unsatisfiable):
        select_credentials([w.bvc()], PD)


def test_issuer_constraint():
    w = world()
    pd = PresentationDefinition("x", (InputDescriptor("rich", RICH, (), frozenset({w.orch_did})),))
    with pytest.raises(Unsatisfiable):
        select_credentials([w.rvc()], pd)


def test_round_trip_and_accept():
    w = world()
    ch = challenge(w)
    vp = presentation(w, ch)
    assert VerifiablePresentation.from_json(vp.to_json()) == vp
    verdict = verify(w, vp, ch)
    assert verdict and verdict.claims == {"basic": {"agent": True}, "rich": RVC_CLAIMS}


def test_one_credential_for_two_descriptors():
    w = world()
    both = PresentationDefinition("p", (InputDescriptor("a", RICH), InputDescriptor("b", RICH, ("role",))))
    ch = challenge(w)
    vp = create_presentation(w.agent, w.agent_did, select_credentials([w.rvc()], both), ch, w.other_did, pd_id="p")
    assert len(vp.credentials) == 1
    assert verify_presentation(vp, both, ch, w.resolver, w.registry, verifier=w.other_did, challenges=ChallengeStore())


def test_expired_challenge():
    w = world()
    ch = challenge(w, ttl=10)
    with pytest.raises(ExpiredChallenge):
        presentation(w, ch, now=11)
    vp = presentation(w, ch, now=10)
    assert verify(w, vp, ch, now=11).reason == "bad-challenge"
    with pytest.raises(ValueError):
        create_presentation(w.agent, w.agent_did, [], ch, w.other_did, pd_id="x")


def test_replay_rejected():
    w = world()
    store, ch = ChallengeStore(), challenge(w)
    vp = presentation(w, ch)
    assert verify(w, vp, ch, store)
    assert verify(w, vp, ch, store).reason == "replayed-challenge"
    assert verify(w, vp, challenge(w), store).reason == "bad-challenge"


def test_wrong_verifier_and_audience():
    w = world()
    ch = challenge(w)
    vp = create_presentation(w.agent, w.agent_did, select_credentials([w.bvc(), w.rvc()], PD), ch, w.issuer_did, pd_id=PD.pd_id)
    assert verify(w, vp, ch).reason == "bad-challenge"
    other_ch = Challenge.from_bytes(os.urandom(16), w.issuer_did, 0)
    vp = presentation(w, other_ch)
    assert verify(w, vp, other_ch).reason == "bad-challenge"


def test_submission_mismatch():
    w = world()
    ch = challenge(w)
    only_basic = [("basic", w.bvc())]
    vp = create_presentation(w.agent, w.agent_did, only_basic, ch, w.other_did, pd_id=PD.pd_id)
    assert verify(w, vp, ch).reason == "submission-mismatch"
    ch = challenge(w)
    vp = create_presentation(w.agent, w.agent_did, select_credentials([w.bvc(), w.rvc()], PD), ch, w.other_did, pd_id="other")
    assert verify(w, vp, ch).reason == "submission-mismatch"


def test_subject_mismatch():
    w = world()
    ch = challenge(w)
    foreign = [w.bvc(subject=w.other_did), w.rvc(subject=w.other_did)]
    vp = presentation(w, ch, foreign)
    verdict = verify(w, vp, ch)
    assert verdict.reason == "subject-mismatch"


def test_inner_untrusted_issuer():
    w = world()
    ch = challenge(w)
    vp = presentation(w, ch)
    verdict = verify(w, vp, ch, registry=w.registry.without(w.issuer_did))
    assert verdict.reason == "vc-rejected(untrusted-issuer)"
    assert verdict.detail == "rich"


def test_holder_proof_checked_before_inner_credentials():
    w = world()
    ch = challenge(w)
    rogue = generate_keypair(bytes([77]) * 32)
    bad_vc = issue_credential(rogue, w.other_did, w.agent_did, RICH, RVC_CLAIMS)
    vp = presentation(w, ch, [w.bvc(), bad_vc], key=w.other)
    assert verify(w, vp, ch).reason == "bad-holder-proof"
    ch = challenge(w)
    vp = presentation(w, ch, [w.bvc(), bad_vc])
    assert verify(w, vp, ch).reason == "vc-rejected(bad-signature)"


def test_unregistered_holder():
    w = world()
    stranger = generate_keypair(bytes([78]) * 32)
    from didfabric.did import new_self_certified_document

    did, _ = new_self_certified_document(stranger)
    ch = Challenge.from_bytes(os.urandom(16), did, 0)
    vp = create_presentation(stranger, did, select_credentials([w.bvc(), w.rvc()], PD), ch, w.other_did, pd_id=PD.pd_id)
    assert verify(w, vp, ch).reason == "bad-holder-proof"


def test_challenge_single_use_under_threads():
    store = ChallengeStore()
    results = []
    barrier = threading.Barrier(16)

    def worker():
        barrier.wait()
        results.append(store.consume("n"))

    threads = [threading.Thread(target=worker) for _ in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results.count(True) == 1


def test_concurrent_verification_accepts_once():
    w = world()
    store, ch = ChallengeStore(), challenge(w)
    vp = presentation(w, ch)
    results = []
    threads = [threading.Thread(target=lambda: results.append(bool(verify(w, vp, ch, store)))) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results.count(True) == 1


def test_challenge_from_bytes_length():
    w = world()
    with pytest.raises(ValueError):
        Challenge.from_bytes(b"short", w.agent_did, 0)
    ch = challenge(w)
    assert Challenge.from_json(ch.to_json()) == ch


_W = world(7)
_CH = Challenge.from_bytes(bytes(16), _W.agent_did, 0)
_VP = presentation(_W, _CH).to_json()


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32))
def test_any_single_mutation_rejected(salt):
    data, _ = mutate_once(_VP, random.Random(salt))
    try:
        vp = VerifiablePresentation.from_json(data)
    except FabricError:
        return
    assert not verify(_W, vp, _CH)


@settings(max_examples=20, deadline=None)
@given(st.binary(min_size=16, max_size=16))
def test_verify_inverts_create(raw):
    ch = Challenge.from_bytes(raw, _W.agent_did, 3)
    vp = presentation(_W, ch, now=3)
    assert verify(_W, vp, ch, now=3)


def test_registry_scope_isolated():
    a, b = world(0), world(1)
    # b's agent holds credentials issued in a; b's registry knows nothing about a
    ch = Challenge.from_bytes(os.urandom(16), a.agent_did, 0)
    vp = presentation(a, ch)
    verdict = verify_presentation(vp, PD, ch, a.resolver, b.registry, verifier=a.other_did, challenges=ChallengeStore())
    assert verdict.reason == "vc-rejected(untrusted-issuer)"
    assert TrustRegistry().to_json()["trusted_issuers"] == {}
