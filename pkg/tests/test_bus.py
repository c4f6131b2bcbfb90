import json
import socket

import pytest
from hypothesis import given, settings, strategies as st

from evpay.bus import Broker, TcpBridge, topic_matches
from evpay.errors import DuplicateMessage, MalformedFilter, MalformedTopic


@pytest.mark.parametrize("filt,topic,expected", [
    ("meter/readings", "meter/readings", True),
    ("meter/+", "meter/readings", True),
    ("meter/+", "meter/a/b", False),
    ("meter/#", "meter", True),
    ("meter/#", "meter/a/b", True),
    ("#", "anything/at/all", True),
    ("+/readings/+", "meter/readings/s1", True),
    ("meter/readings", "meter/readings/s1", False),
    ("meter/readings/s1", "meter/readings", False),
])
def test_topic_matches(filt, topic, expected):
    assert topic_matches(filt, topic) is expected


@pytest.mark.parametrize("filt", ["", "a/#/b", "a/b+", "a//b", "a/#x"])
def test_malformed_filters(filt):
    with pytest.raises(MalformedFilter):
        Broker().subscribe("c", filt)


def test_malformed_topic():
    b = Broker()
    with pytest.raises(MalformedTopic):
        b.publish(b.message("p", "a/+", {}))


def test_subscribe_then_publish():
    b = Broker().subscribe("c", "meter/readings")
    assert [d.client for d in b.publish(b.message("p", "meter/readings", {"x": 1}))] == ["c"]


def test_duplicate_subscription_delivers_once():
    b = Broker().subscribe("c", "a/b").subscribe("c", "a/b")
    assert len(b.publish(b.message("p", "a/b", {}))) == 1


def brute_force_deliveries(subs, topic):
    """One delivery per client with at least one matching filter, sorted."""
    clients = set()
    for client, filters in subs:
        for f in filters:
            if topic_matches(f, topic):
                clients.add(client)
    return sorted(clients)


def test_overlapping_filters_deliver_once_per_client():
    b = Broker().subscribe("c", "a/#").subscribe("c", "a/b")
    got = [d.client for d in b.publish(b.message("p", "a/b", {}))]
    assert got == brute_force_deliveries([("c", ["a/#", "a/b"])], "a/b") == ["c"]


def test_no_subscribers():
    b = Broker()
    assert b.publish(b.message("p", "a", {})) == []


def test_client_order():
    b = Broker().subscribe("zeta", "a").subscribe("alpha", "a")
    assert [d.client for d in b.publish(b.message("p", "a", {}))] == ["alpha", "zeta"]


def test_fifo_for_one_subscriber():
    b = Broker().subscribe("c", "m/#")
    for i in range(100):
        b.publish(b.message("p", f"m/{i % 3 + 1}", {"i": i}))
    seqs = [d.message.seq for d in b.log]
    assert seqs == sorted(seqs) and len(set(seqs)) == 100


def test_republish_refused():
    b = Broker().subscribe("c", "a")
    msg = b.message("p", "a", {})
    b.publish(msg)
    with pytest.raises(DuplicateMessage):
        b.publish(msg)
    assert len(b.log) == 1


label = st.sampled_from(["a", "b", "c"])
filters = st.lists(st.one_of(label, st.just("+")), min_size=1, max_size=3).flatmap(
    lambda ls: st.sampled_from(["/".join(ls), "/".join(ls + ["#"]), "#"]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["x", "y", "z"]), st.lists(filters, min_size=1, max_size=3)),
                max_size=4),
       st.lists(st.lists(label, min_size=1, max_size=4).map("/".join), min_size=1, max_size=10))
def test_completeness_and_determinism(subs, topics):
    def build():
        b = Broker()
        for client, fs in subs:
            for f in fs:
                b.subscribe(client, f)
        return b

    merged = {}
    for client, fs in subs:
        merged.setdefault(client, []).extend(fs)
    b1, b2 = build(), build()
    for t in topics:
        got = [d.client for d in b1.publish(b1.message("pub", t, {"t": t}))]
        b2.publish(b2.message("pub", t, {"t": t}))
        assert got == brute_force_deliveries(merged.items(), t)
    assert b1.log == b2.log
    keys = [(d.client, d.message.publisher, d.message.seq) for d in b1.log]
    assert len(keys) == len(set(keys))


def test_tcp_bridge_roundtrip():
    bridge = TcpBridge(Broker()).start()
    try:
        sub = socket.create_connection(bridge.address, timeout=5)
        pub = socket.create_connection(bridge.address, timeout=5)
        sub_r = sub.makefile("rb")
        sub.sendall(json.dumps({"op": "sub", "topic": "meter/readings/+"}).encode() + b"\n")
        assert json.loads(sub_r.readline())["op"] == "suback"
        pub.sendall(json.dumps({"op": "pub", "topic": "meter/readings/s1",
                                "payload": {"delta_wh": 1000}}).encode() + b"\n")
        frame = json.loads(sub_r.readline())
        assert frame["op"] == "msg" and frame["payload"] == {"delta_wh": 1000}
        assert frame["topic"] == "meter/readings/s1" and frame["seq"] == 0
        pub.sendall(json.dumps({"op": "pub", "topic": "bad/#"}).encode() + b"\n")
        pub_r = pub.makefile("rb")
        assert json.loads(pub_r.readline())["op"] == "error"
        sub.close()
        pub.close()
    finally:
        bridge.stop()
