import json
import socket

import pytest

from didfabric.errors import TransportError, UnknownThread
from didfabric.harness import attestation_trace
from didfabric.httpio import JsonServer, request_json
from didfabric.protocol.messages import AUTH_REQUEST, AUTH_RESPONSE, ProtocolMessage
from didfabric.transport import (
    MALFORMED,
    METHOD_NOT_FOUND,
    UNKNOWN_THREAD,
    AgentCard,
    Bus,
    Envelope,
    Transport,
    dispatch_rpc,
)
from helpers import world

MSG = ProtocolMessage("thread-1", 1, AUTH_REQUEST, {"did": "x"})


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def sink():
    got = []

    def handler(message, reply_to):
        if message.kind != AUTH_REQUEST and message.thread_id not in {m.thread_id for m, _ in got}:
            raise UnknownThread(message.thread_id)
        got.append((message, reply_to))

    return got, handler


def test_inproc_receipt():
    got, handler = sink()
    t = Transport()
    t.serve("inproc://a", handler)
    receipt = t.send(Envelope.wrap(MSG, 7, "inproc://me"), "inproc://a")
    assert receipt.request_id == 7 and receipt.bytes_sent > 0
    assert got == [(MSG, "inproc://me")]
    assert [(r.thread_id, r.sequence, r.kind) for r in t.log] == [("thread-1", 1, AUTH_REQUEST)]


def test_http_receipt():
    got, handler = sink()
    t = Transport(timeout=2)
    listener = t.serve("http://127.0.0.1:0", handler)
    try:
        t.send(Envelope.wrap(MSG, 1), listener.endpoint)
        assert got == [(MSG, None)]
    finally:
        listener.close()


def test_connect_failures():
    t = Transport(timeout=1)
    with pytest.raises(TransportError) as exc:
        t.send(Envelope.wrap(MSG, 1), f"http://127.0.0.1:{free_port()}")
    assert exc.value.kind == "connect"
    with pytest.raises(TransportError) as exc:
        t.send(Envelope.wrap(MSG, 1), "inproc://missing")
    assert exc.value.kind == "connect"


def test_two_parts_is_malformed():
    env = Envelope.wrap(MSG, 1)
    doubled = Envelope(env.id, env.message, env.message_id, None, ({"kind": "data", "data": MSG.to_json()},) * 2)
    with pytest.raises(TransportError) as exc:
        Transport().send(doubled, "inproc://a")
    assert exc.value.kind == "malformed"
    raw = json.dumps(doubled.to_json()).encode()
    assert dispatch_rpc(raw, sink()[1])["error"]["code"] == MALFORMED


def test_dispatch_responses():
    got, handler = sink()
    ok = dispatch_rpc(json.dumps(Envelope.wrap(MSG, 3).to_json()).encode(), handler)
    assert ok == {"jsonrpc": "2.0", "id": 3, "result": {"status": "accepted"}}
    assert dispatch_rpc(b"not json", handler)["error"]["code"] == -32600 == MALFORMED
    other = Envelope.wrap(ProtocolMessage("nobody", 2, AUTH_RESPONSE, {}), 4).to_json()
    assert dispatch_rpc(json.dumps(other).encode(), handler)["error"]["code"] == UNKNOWN_THREAD == -32001
    wrong = dict(Envelope.wrap(MSG, 5).to_json(), method="tasks/get")
    assert dispatch_rpc(json.dumps(wrong).encode(), handler)["error"]["code"] == METHOD_NOT_FOUND
    mismatch = Envelope.wrap(MSG, 6).to_json()
    mismatch["params"]["message"]["context_id"] = "other"
    assert dispatch_rpc(json.dumps(mismatch).encode(), handler)["error"]["code"] == MALFORMED


def test_rejection_surfaces_code():
    t = Transport()
    t.serve("inproc://a", sink()[1])
    with pytest.raises(TransportError) as exc:
        t.send(Envelope.wrap(ProtocolMessage("nobody", 2, AUTH_RESPONSE, {}), 1), "inproc://a")
    assert exc.value.kind == "rejected" and exc.value.code == UNKNOWN_THREAD


def test_envelope_round_trip():
    env = Envelope.wrap(MSG, 9, "inproc://back")
    assert Envelope.from_json(env.to_json()) == env
    assert env.message_id == Envelope.wrap(MSG, 10).message_id


def test_agent_cards():
    w = world()
    card = AgentCard("alice", w.agent_did, "inproc://alice")
    bus = Bus()
    t = Transport(bus)
    t.serve("inproc://alice", sink()[1], card)
    assert t.fetch_agent_card("inproc://alice") == card
    listener = t.serve("http://127.0.0.1:0", sink()[1], card)
    try:
        fetched = t.fetch_agent_card(listener.endpoint)
        assert fetched.did == w.agent_did and fetched.endpoint == listener.endpoint
    finally:
        listener.close()
    with pytest.raises(TransportError) as exc:
        Transport(timeout=1).fetch_agent_card(f"http://127.0.0.1:{free_port()}")
    assert exc.value.kind == "connect"
    with pytest.raises(ValueError):
        AgentCard("x", w.agent_did, "ftp://host")


def test_card_without_did_is_malformed():
    broken = {"name": "x", "endpoint": "http://127.0.0.1:1", "supported_protocols": []}
    with JsonServer("127.0.0.1", 0, lambda m, p, b: (200, json.dumps(broken).encode())) as server:
        with pytest.raises(TransportError) as exc:
            Transport(timeout=2).fetch_agent_card(server.url)
    assert exc.value.kind == "malformed-response"


def test_bind_conflict():
    from didfabric.errors import BindError

    t = Transport()
    t.serve("inproc://x", sink()[1])
    with pytest.raises(BindError):
        t.serve("inproc://x", sink()[1])


def test_no_reordering_over_http():
    got, handler = sink()
    t = Transport(timeout=2)
    listener = t.serve("http://127.0.0.1:0", handler)
    try:
        for seq in range(1, 21):
            t.send(Envelope.wrap(ProtocolMessage("thread-1", seq, AUTH_REQUEST, {}), seq), listener.endpoint)
    finally:
        listener.close()
    assert [m.sequence for m, _ in got] == list(range(1, 21))


def test_interceptor_controls_delivery():
    got, handler = sink()
    t = Transport(interceptor=lambda m, ep: [(m, ep), (m.with_sequence(m.sequence + 1), ep)])
    t.serve("inproc://a", handler)
    receipts = t.send_message(MSG, "inproc://a")
    assert len(receipts) == 2 and [m.sequence for m, _ in got] == [1, 2]
    t.interceptor = lambda m, ep: []
    assert t.send_message(MSG, "inproc://a") == []


def test_trace_equivalence_across_bindings():
    inproc = attestation_trace("inproc")
    http = attestation_trace("http")
    assert inproc == http
    assert len(inproc) > 0


def test_request_json_round_trip():
    with JsonServer("127.0.0.1", 0, lambda m, p, b: (200, json.dumps({"m": m, "p": p}).encode())) as server:
        status, data, _ = request_json("GET", server.url + "/x")
    assert status == 200 and data == {"m": "GET", "p": "/x"}
