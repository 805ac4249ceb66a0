import json
import threading

import pytest

from dbot.bus import BROADCAST, MessageBus, PublishAfterClose


def concurrent_publish(bus, n_pub=4, n_msg=100):
    barrier = threading.Barrier(n_pub)

    def worker(name):
        barrier.wait()
        for i in range(n_msg):
            bus.publish(name, BROADCAST, f"{name}:{i}", turn=i)

    threads = [threading.Thread(target=worker, args=(f"p{k}",)) for k in range(n_pub)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()


def test_concurrent_publishers_exactly_once_fifo():
    bus = MessageBus()
    subs = [bus.subscribe(f"s{k}", [BROADCAST]) for k in range(3)]
    concurrent_publish(bus)
    for sub in subs:
        got = sub.drain()
        assert len(got) == 400
        assert len({(m.publisher, m.seq) for m in got}) == 400
        for k in range(4):
            seqs = [m.seq for m in got if m.publisher == f"p{k}"]
            assert seqs == list(range(1, 101))
            assert [m.payload for m in got if m.publisher == f"p{k}"] == [f"p{k}:{i}" for i in range(100)]
        assert sub.drain() == []


def test_publisher_does_not_receive_own_message_and_topics_filter():
    bus = MessageBus()
    a = bus.subscribe("a", ["a", BROADCAST])
    b = bus.subscribe("b", ["b", BROADCAST])
    bus.publish("a", BROADCAST, "hello")
    bus.publish("a", "b", "direct")
    bus.publish("b", "a", "reply")
    assert [m.payload for m in a.drain()] == ["reply"]
    assert [m.payload for m in b.drain()] == ["hello", "direct"]
    assert len(a) == 0


def test_publish_after_close(tmp_path):
    bus = MessageBus()
    bus.publish("x", BROADCAST, "one", turn=2)
    bus.close()
    with pytest.raises(PublishAfterClose):
        bus.publish("x", BROADCAST, "two")
    out = tmp_path / "bus.jsonl"
    bus.export_jsonl(out)
    assert json.loads(out.read_text()) == {"payload": "one", "publisher": "x", "seq": 1, "topic": BROADCAST, "turn": 2}
