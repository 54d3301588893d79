import io
import subprocess
import sys

import pytest

from prioport.bench import run_matrix
from prioport.cli import main
from prioport.nameserver import NameServer
from prioport.port import open_port

from port_checks import wait_for

SMALL = ["--count", "20", "--warmup", "5"]


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out=out)
    return code, out.getvalue()


def ns_flag(ns):
    return ["--nameserver", f"{ns.address[0]}:{ns.address[1]}"]


# -- bench ----------------------------------------------------------------------

def test_bench_row_count():
    code, text = run("bench", "--scenario", "nic", "--load", "0.2,0.7", "--qos", "on,off",
                     "--emulate", *SMALL)
    lines = text.splitlines()
    assert code == 0
    assert lines[0].startswith("scenario,qos,load_fraction")
    assert len(lines) == 1 + 4


@pytest.mark.parametrize("bad", [["--load", "1.5"], ["--load", "-0.2"], ["--qos", "sometimes"],
                                 ["--carriers", "tcp/sctp"], ["--count", "-1"],
                                 ["--scenario", "mesh"]])
def test_bench_usage_errors(bad, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bench", "--emulate", *bad])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_bench_matches_library():
    _, text = run("bench", "--scenario", "switch", "--load", "0.7", "--qos", "on,off",
                  "--carriers", "tcp/udp", "--emulate", "--seed", "3", *SMALL)
    lib = run_matrix("switch", ["on", "off"], [0.7], [("tcp", "udp")], count=20, warmup=5,
                     seed=3)
    assert text == lib.to_csv()
    on, off = lib.rows
    assert on.mean_ns < off.mean_ns


def test_bench_all_carriers_output_and_plot(tmp_path):
    csv_path, png = tmp_path / "r.csv", tmp_path / "r.png"
    code, text = run("bench", "--scenario", "nic", "--load", "0.2", "--carriers", "all",
                     "--emulate", "--count", "10", "--warmup", "0", "-o", str(csv_path),
                     "--plot", str(png))
    assert code == 0 and text == ""
    assert len(csv_path.read_text().splitlines()) == 1 + 8
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_bench_with_topology_file(tmp_path):
    topo = tmp_path / "t.topo"
    topo.write_text("host H1\nhost H2\nswitch S\nlink H1 S rate=1gbit\nlink H2 S rate=1gbit\n")
    code, text = run("bench", "--scenario", "nic", "--load", "0.7", "--emulate",
                     "--topology", str(topo), *SMALL)
    assert code == 0 and len(text.splitlines()) == 3
    code, _ = run("bench", "--scenario", "nic", "--topology", str(topo), *SMALL)
    assert code == 1
    topo.write_text("host H1\nhost H3\nlink H1 H3\n")
    code, text = run("bench", "--scenario", "nic", "--load", "0.7", "--emulate",
                     "--topology", str(topo), *SMALL)
    assert code == 1 and len(text.splitlines()) == 1      # header, then the failure


# -- admin / connect -------------------------------------------------------------

def test_admin_scripted(ports, nameserver):
    pub = ports("/publisher1")
    ports("/subscriber1")
    pub.connect("/subscriber1")
    code, text = run(*ns_flag(nameserver), "admin", "/publisher1",
                     "-c", "prop set /subscriber1 (qos ((priority HIGH)))")
    assert (code, text) == (0, "ok\n")
    code, text = run(*ns_flag(nameserver), "admin", "/publisher1",
                     "-c", "prop get /subscriber1")
    assert code == 0 and "priority HIGH" in text
    code, text = run(*ns_flag(nameserver), "admin", "/publisher1",
                     "-c", "prop set /nope (qos ((priority HIGH)))")
    assert code != 0 and text == "err no-such-channel\n"


def test_admin_status_is_last_reply(ports, nameserver, tmp_path):
    ports("/p")
    script = tmp_path / "s.txt"
    script.write_text("# comment\nprop get /nope\n\nbogus\n")
    code, text = run(*ns_flag(nameserver), "admin", "/p", "-f", str(script))
    assert code == 1 and text.splitlines() == ["err no-such-channel", "err unknown-verb"]


def test_admin_unknown_target(nameserver, capsys):
    code, _ = run(*ns_flag(nameserver), "admin", "/ghost", "-c", "prop get /x")
    assert code == 1
    assert "not-found" in capsys.readouterr().err


def test_connect_and_disconnect(ports, nameserver):
    pub, sub = ports("/publisher1"), ports("/subscriber1")
    code, text = run(*ns_flag(nameserver), "connect", "/publisher1", "/subscriber1",
                     "--carrier", "tcp")
    assert code == 0
    assert f":{pub.endpoint.port_number}" in text and f":{sub.endpoint.port_number}" in text
    assert pub.channel_info("/subscriber1").direction == "output"
    assert wait_for(lambda: sub.channels())
    code, text = run(*ns_flag(nameserver), "disconnect", "/publisher1", "/subscriber1")
    assert (code, text) == (0, "ok\n")
    assert run(*ns_flag(nameserver), "disconnect", "/publisher1", "/subscriber1")[0] == 1


def test_connect_unknown_destination(ports, nameserver, capsys):
    ports("/publisher1")
    code, _ = run(*ns_flag(nameserver), "connect", "/publisher1", "/ghost")
    assert code != 0
    err = capsys.readouterr().err
    assert "not-found" in err and len(err.strip().splitlines()) == 1


def test_connect_bogus_carrier_is_usage_error(capsys):
    # an unroutable name server: any network use would fail differently
    with pytest.raises(SystemExit) as exc:
        main(["--nameserver", "192.0.2.1:9", "connect", "/a", "/b", "--carrier", "bogus"])
    assert exc.value.code == 2


def test_nameserver_env_and_flag(ports, nameserver, monkeypatch):
    ports("/p")
    monkeypatch.setenv("PRIOPORT_NAMESERVER", f"{nameserver.address[0]}:{nameserver.address[1]}")
    assert run("admin", "/p", "-c", "prop get /nope")[1] == "err no-such-channel\n"
    monkeypatch.setenv("PRIOPORT_NAMESERVER", "127.0.0.1:1")
    assert run(*ns_flag(nameserver), "admin", "/p", "-c", "prop get /nope")[0] == 1
    with pytest.raises(SystemExit):
        main(["--nameserver", "nonsense", "admin", "/p"])


def test_admin_transcript_is_replayable():
    script = ["connect /subscriber1 tcp",
              "prop set /subscriber1 (sched ((policy SCHED_FIFO) (priority 30)))",
              "prop set /subscriber1 (qos ((priority HIGH)))",
              "prop get /subscriber1",
              "prop set /subscriber1 (qos ((dscp 46)))",
              "prop get /subscriber1",
              "disconnect /subscriber1",
              "prop get /subscriber1"]
    transcripts = []
    for _ in range(2):
        with NameServer() as ns:
            ports = [open_port(n, ns.address) for n in ("/publisher1", "/subscriber1")]
            try:
                args = [a for line in script for a in ("-c", line)]
                code, text = run(*ns_flag(ns), "admin", "/publisher1", *args)
            finally:
                for p in ports:
                    p.close()
        transcripts.append(text)
    assert transcripts[0] == transcripts[1]
    assert code == 1 and transcripts[0].splitlines()[-1] == "err no-such-channel"
    assert "(dscp EF)" in transcripts[0] or "(dscp 46)" in transcripts[0]


def test_interactive_admin_over_stdin(ports, nameserver):
    ports("/p")
    proc = subprocess.run(
        [sys.executable, "-m", "prioport", *ns_flag(nameserver), "admin", "/p"],
        input="prop get /nope\nquit\nprop get /never\n", capture_output=True, text=True,
        timeout=30)
    assert proc.returncode == 0
    assert proc.stdout == "err no-such-channel\n"


# -- emu -------------------------------------------------------------------------

def test_emu_flows_and_trace(tmp_path):
    topo = tmp_path / "t.topo"
    topo.write_text("host A\nhost B\nswitch S\nlink A S rate=1gbit\nlink B S rate=1gbit\n")
    trace = tmp_path / "trace.csv"
    code, text = run("emu", "--topology", str(topo),
                     "--flow", "A,B,1460,count=3,interval=1ms",
                     "--flow", "B,A,3000,tos=0x90,carrier=udp", "--trace", str(trace))
    assert code == 0
    lines = text.splitlines()
    assert lines[0] == "flow,src,dst,messages,delivered,lost,mean_latency_ns"
    # one full-size segment over two gigabit hops
    assert lines[1] == "0,A,B,3,3,0,24000.0"
    assert lines[2].startswith("1,B,A,1,1,0,")
    rows = trace.read_text().splitlines()
    assert len(rows) == 1 + 3 + 3           # 3 segments then 3 udp fragments


def test_emu_bad_flow(tmp_path, capsys):
    topo = tmp_path / "t.topo"
    topo.write_text("host A\nhost B\nlink A B\n")
    with pytest.raises(SystemExit):
        main(["emu", "--topology", str(topo), "--flow", "A,B"])
    code, _ = run("emu", "--topology", str(topo), "--flow", "A,Z,10")
    assert code == 1
    code, _ = run("emu", "--topology", str(tmp_path / "missing.topo"))
    assert code == 1
