import os
import socket
import threading
import time

import pytest

from prioport import errors
from prioport.nameserver import NameClient, NameServer
from prioport.port import AdminSession, admin_session, connect, disconnect, open_port
from prioport.qos import PriorityClass, SchedPolicy

from port_checks import EmuPair, conservation_failures, stalled_publish_median, wait_for


def test_open_port_registers(ports, nameserver):
    p = ports("/publisher1")
    assert NameClient(nameserver.address).lookup("/publisher1") == p.endpoint


def test_duplicate_name(ports):
    ports("/p")
    with pytest.raises(errors.NameAlreadyRegistered):
        ports("/p")


def test_unreachable_nameserver_leaves_nothing_behind():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        dead = s.getsockname()
    with pytest.raises(errors.BindFailure):
        open_port("/p", NameClient(dead, timeout=0.5), listen_port=0)


def test_connect_shows_on_both_sides(ports):
    pub, sub = ports("/publisher1"), ports("/subscriber1")
    st = pub.connect("/subscriber1", "tcp")
    assert st.status == "active" and st.direction == "output"
    assert st.packet_priority is PriorityClass.NORMAL and st.sched.policy is SchedPolicy.OTHER
    assert wait_for(lambda: any(c.peer == "/publisher1" for c in sub.channels()))
    assert sub.channel_info("/publisher1").direction == "input"


def test_two_outputs_have_separate_threads(ports):
    pub = ports("/publisher1")
    ports("/subscriber1")
    ports("/subscriber2")
    pub.connect("/subscriber1", "tcp")
    pub.connect("/subscriber2", "udp")
    a, b = pub.find_channel("/subscriber1"), pub.find_channel("/subscriber2")
    assert a.tid and b.tid and a.tid != b.tid
    assert {c.peer for c in pub.channels()} == {"/subscriber1", "/subscriber2"}


def test_connect_unknown(ports):
    pub = ports("/p")
    with pytest.raises(errors.LookupFailure):
        pub.connect("/nobody")
    with pytest.raises(errors.CarrierUnsupported):
        pub.connect("/nobody", "mcast")


def test_disconnect(ports):
    pub, sub = ports("/pub"), ports("/sub")
    pub.connect("/sub")
    assert wait_for(lambda: sub.channels())
    pub.publish(b"x", ack=True)
    assert wait_for(lambda: pub.channel_info("/sub").counters.acks == 1)
    pub.disconnect("/sub")
    with pytest.raises(errors.NoSuchChannel):
        pub.channel_info("/sub")
    assert wait_for(lambda: not sub.channels())
    assert pub.closed_channel_info("/sub").counters.sent == 1
    with pytest.raises(errors.NoSuchChannel):
        pub.disconnect("/sub")


def test_disconnect_counts_queued_as_dropped():
    with EmuPair() as env:
        env.net.pause("A")
        for i in range(10):
            env.pub.publish(b"%d" % i)
        env.pub.disconnect("/sub")
        st = env.pub.closed_channel_info("/sub")
        assert st.counters.enqueued == 10
        assert st.counters.dropped + st.counters.sent == 10
        assert st.counters.dropped >= 9
        env.net.resume("A")


def test_publish_without_outputs(ports):
    assert ports("/lonely").publish(b"x") == {}


@pytest.mark.parametrize("carrier", ["tcp", "udp"])
def test_publish_in_order(ports, carrier):
    pub, sub = ports("/pub"), ports("/sub")
    pub.connect("/sub", carrier)
    for i in range(10):
        assert pub.publish(b"%d" % i) == {"/sub": "queued"}
    got = [sub.read(timeout=5) for _ in range(10)]
    assert [m.payload for m in got] == [b"%d" % i for i in range(10)]
    assert [m.message_id for m in got] == list(range(10))
    assert all(m.source == "/pub" for m in got)


def test_publish_in_order_emu(emu_pair):
    pub, sub, _ = emu_pair
    for i in range(10):
        pub.publish(b"%d" % i)
    assert [sub.read(timeout=5).payload for _ in range(10)] == [b"%d" % i for i in range(10)]


def test_stalled_channel_drops_oldest():
    with EmuPair() as env:
        env.net.pause("A")
        outcomes = [env.pub.publish(b"%d" % i)["/sub"] for i in range(65)]
        st = env.pub.channel_info("/sub")
        assert outcomes.count("dropped-oldest") == 1
        assert st.counters.dropped == 1 and st.queued == 64
        env.net.resume("A")
        got = [env.sub.read(timeout=5).payload for _ in range(64)]
        assert got == [b"%d" % i for i in range(1, 65)]


def test_stalled_publish_is_fast():
    median, st = stalled_publish_median(200)
    assert median < 1e-3
    assert st.queued == 64 and st.counters.enqueued == 200


def test_read_behaviour(ports):
    sub = ports("/sub")
    assert sub.read(blocking=False) is None
    with pytest.raises(errors.ReadTimeout):
        sub.read(timeout=0.05)
    sub.close()
    with pytest.raises(errors.PortClosed):
        sub.read(blocking=False)


def test_read_blocks_until_message(ports):
    pub, sub = ports("/pub"), ports("/sub")
    pub.connect("/sub")
    threading.Timer(0.1, lambda: pub.publish(b"late")).start()
    assert sub.read(timeout=5).payload == b"late"


def test_per_channel_fifo_with_two_inputs(ports):
    a, b, sub = ports("/a"), ports("/b"), ports("/sub")
    a.connect("/sub")
    b.connect("/sub", "udp")
    for i in range(20):
        a.publish(b"a%d" % i)
        b.publish(b"b%d" % i)
    got = [sub.read(timeout=5) for _ in range(40)]
    for src, prefix in (("/a", b"a"), ("/b", b"b")):
        mine = [m.payload for m in got if m.source == src]
        assert mine == [prefix + b"%d" % i for i in range(20)]


def test_channel_info_counters(ports):
    pub, sub = ports("/pub"), ports("/sub")
    pub.connect("/sub")
    st = pub.channel_info("/sub")
    assert (st.counters.sent, st.counters.received, st.counters.dropped) == (0, 0, 0)
    for _ in range(5):
        pub.publish(b"probe", ack=True)
    assert wait_for(lambda: pub.channel_info("/sub").counters.acks == 5)
    st = pub.channel_info("/sub")
    assert st.counters.sent == 5 and st.counters.acks == 5
    assert wait_for(lambda: sub.channel_info("/pub").counters.received == 5)
    assert pub.admin("prop set /sub (qos ((priority HIGH)))") == "ok"
    assert pub.channel_info("/sub").packet_priority is PriorityClass.HIGH
    with pytest.raises(errors.NoSuchChannel):
        pub.channel_info("/nope")


def test_ack_sink_and_publish_to(ports):
    pub, sub = ports("/pub"), ports("/sub")
    pub.connect("/sub")
    seen = []
    pub.set_ack_sink("/sub", seen.append)
    outcome, mid = pub.publish_to("/sub", b"x", ack=True)
    assert outcome == "queued"
    assert wait_for(lambda: seen)
    assert seen[0].message_id == mid and seen[0].ack_ns > seen[0].send_ns


def test_socket_tos_is_set(ports):
    pub, sub = ports("/pub"), ports("/sub")
    for carrier, peer in (("tcp", "/sub"),):
        pub.connect(peer, carrier)
        assert pub.admin(f"prop set {peer} (qos ((priority HIGH)))") == "ok"
        sock = pub.find_channel(peer).data.sock
        assert sock.getsockopt(socket.IPPROTO_IP, socket.IP_TOS) == 0x90
        assert pub.admin(f"prop set {peer} (qos ((priority NORMAL)))") == "ok"
        assert sock.getsockopt(socket.IPPROTO_IP, socket.IP_TOS) == 0


def test_udp_tos_and_oversize(ports):
    pub, sub = ports("/pub"), ports("/sub")
    pub.connect("/sub", "udp")
    pub.admin("prop set /sub (qos ((priority CRITICAL)))")
    sock = pub.find_channel("/sub").data.sock
    assert sock.getsockopt(socket.IPPROTO_IP, socket.IP_TOS) == 0xB0
    assert pub.publish(b"x" * (61 * 1024)) == {"/sub": "rejected"}
    assert pub.channel_info("/sub").counters.errors == 1


def test_thread_sched_reaches_channel_thread(ports):
    pub, sub = ports("/pub"), ports("/sub")
    pub.connect("/sub")
    reply = pub.admin("prop set /sub (sched ((policy SCHED_FIFO) (priority 30)))")
    tid = pub.find_channel("/sub").tid
    if reply == "ok":
        assert os.sched_getscheduler(tid) == os.SCHED_FIFO
        assert os.sched_getparam(tid).sched_priority == 30
    else:
        assert reply == 'ok (degraded "permission")'
    assert pub.admin("prop set /sub (sched ((policy SCHED_OTHER) (priority 0)))") == "ok"
    assert os.sched_getscheduler(tid) == os.SCHED_OTHER


def test_qos_change_mid_traffic_loses_nothing(ports):
    pub, sub = ports("/pub"), ports("/sub")
    pub.connect("/sub")
    stop = threading.Event()

    def flip():
        cls = ["HIGH", "LOW", "NORMAL", "CRITICAL"]
        i = 0
        while not stop.is_set():
            pub.admin(f"prop set /sub (qos ((priority {cls[i % 4]})))")
            i += 1
            time.sleep(0.001)

    t = threading.Thread(target=flip)
    t.start()
    n = 500
    got = []
    for i in range(n):
        pub.publish(b"%d" % i)
        if i % 50 == 49:
            got += [sub.read(timeout=5).payload for _ in range(50)]
    stop.set()
    t.join()
    assert got == [b"%d" % i for i in range(n)]
    assert pub.channel_info("/sub").counters.dropped == 0


def test_stalled_sibling_does_not_block(ports, emu_net):
    pub = ports("/pub", emu=emu_net, emu_host="A")
    slow = ports("/slow", emu=emu_net, emu_host="B")
    fast = ports("/fast")
    pub.connect("/slow", "emu")
    pub.connect("/fast", "tcp")
    emu_net.pause("A")
    for i in range(50):
        pub.publish(b"%d" % i)
    assert [fast.read(timeout=5).payload for _ in range(50)] == [b"%d" % i for i in range(50)]
    assert slow.read(blocking=False) is None
    assert pub.channel_info("/slow").queued == 50
    emu_net.resume("A")
    assert slow.read(timeout=5).payload == b"0"


def test_connect_after_nameserver_dies():
    ns = NameServer().start()
    try:
        pub = open_port("/pub", ns.address)
        sub = open_port("/sub", ns.address)
        endpoint = NameClient(ns.address).lookup("/sub")
    finally:
        ns.stop()
    try:
        pub.connect("/sub", "tcp", endpoint=endpoint)
        pub.publish(b"hi")
        assert sub.read(timeout=5).payload == b"hi"
        with pytest.raises(errors.LookupFailure):
            pub.connect("/other")
    finally:
        pub.close()
        sub.close()


def test_remote_admin_session(ports, nameserver):
    pub, sub = ports("/publisher1"), ports("/subscriber1")
    with admin_session("/publisher1", nameserver.address) as s:
        assert s.request("connect /subscriber1 tcp") == "ok"
        assert s.request("prop set /subscriber1 (qos ((priority HIGH)))") == "ok"
        assert "(qos ((priority HIGH) (dscp AF42)))" in s.request("prop get /subscriber1")
        assert s.request("prop set /nope (qos ((priority HIGH)))") == "err no-such-channel"
    assert disconnect("/publisher1", "/subscriber1", nameserver.address) == "ok"
    assert disconnect("/publisher1", "/subscriber1", nameserver.address) == "err no-such-channel"
    assert connect("/subscriber1", "/publisher1", "udp", nameserver.address) == "ok"
    assert wait_for(lambda: pub.channels())
    # the receiving side may hang up too
    assert disconnect("/publisher1", "/subscriber1", nameserver.address) == "ok"
    assert not pub.channels()


def test_admin_frames_on_data_session_are_refused(ports):
    from prioport.wire import Frame, FrameType, HandshakeInfo, StreamConnection, perform_handshake
    sub = ports("/sub")
    sock = socket.create_connection((sub.endpoint.host, sub.endpoint.port_number))
    conn = StreamConnection(sock)
    perform_handshake(conn, HandshakeInfo("/intruder"), "initiator", timeout=2)
    assert wait_for(lambda: sub.channels())
    conn.send_frame(Frame(FrameType.ADMIN_REQUEST, 0, 0, 0, b"prop get /x"))
    assert wait_for(lambda: not sub.channels())
    conn.close()


def test_peer_going_away_closes_channel(ports):
    pub, sub = ports("/pub"), ports("/sub")
    pub.connect("/sub")
    sub.close()
    assert wait_for(lambda: not pub.channels())
    assert pub.closed_channel_info("/sub").status == "closed"


def test_qlen_resize(ports):
    with EmuPair() as env:
        env.net.pause("A")
        for i in range(30):
            env.pub.publish(b"x")
        assert env.pub.admin("prop set /sub (qlen 10)") == "ok"
        st = env.pub.channel_info("/sub")
        assert st.capacity == 10 and st.queued == 10 and st.counters.dropped == 20
        env.net.resume("A")


def test_counter_conservation_randomized():
    assert conservation_failures(trials=150, seed=3) == []


def test_admin_session_unreachable():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        addr = s.getsockname()
    with pytest.raises(errors.HandshakeError):
        AdminSession((addr[0], addr[1], "tcp"), timeout=0.5)
