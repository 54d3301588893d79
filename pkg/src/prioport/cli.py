"""prioport: name server, connection management, admin sessions, bench, emulator.

Exit status is 0 on success, 1 with a one-line diagnostic on failure and 2
for usage errors. The name server is found via --nameserver, then
$PRIOPORT_NAMESERVER, then 127.0.0.1:10000.
"""

from __future__ import annotations

import argparse
import signal
import sys
import threading
import time

from . import errors
from .nameserver import DEFAULT_ADDRESS, NameClient, NameServer, parse_address, resolve_address
from .wire import CARRIERS

PROG = "prioport"


class CliError(Exception):
    """Failure to report as ``prioport: <message>`` with exit status 1."""


# -- argument types ----------------------------------------------------------------

def _address(text):
    try:
        return parse_address(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _fractions(text):
    out = []
    for part in text.split(","):
        try:
            f = float(part)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {part!r}") from None
        if not 0 <= f <= 1:
            raise argparse.ArgumentTypeError(f"load fraction {f:g} not in [0, 1]")
        out.append(f)
    return out


def _qos_list(text):
    out = [q.strip() for q in text.split(",")]
    for q in out:
        if q not in ("on", "off"):
            raise argparse.ArgumentTypeError(f"qos must be on or off, not {q!r}")
    return out


def _carrier_pairs(text):
    if text == "all":
        return [(p, l) for p in ("tcp", "udp") for l in ("tcp", "udp")]
    pairs = []
    for part in text.split(","):
        probe, _, load = part.partition("/")
        load = load or probe
        for c in (probe, load):
            if c not in CARRIERS:
                raise argparse.ArgumentTypeError(f"unknown carrier {c!r}")
        pairs.append((probe, load))
    return pairs


def _positive(kind):
    def conv(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive: {text}")
        return value
    return conv


def _non_negative_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0: {text}")
    return value


def _name_client(args) -> NameClient:
    return NameClient(resolve_address(args.nameserver))


# -- subcommands -------------------------------------------------------------------

def cmd_nameserver(args, out):
    host, port = args.listen
    try:
        server = NameServer(host, port)
    except OSError as exc:
        raise CliError(f"cannot listen on {host}:{port}: {exc}") from exc
    print(f"name server listening on {server.address[0]}:{server.address[1]}", file=out,
          flush=True)
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    server.start()
    try:
        while not stop.wait(0.2):
            pass
    finally:
        server.stop()
    return 0


def cmd_port(args, out):
    from .port import open_port

    port = open_port(args.name, _name_client(args), host=args.host, listen_port=args.listen_port)
    ep = port.endpoint
    print(f"{args.name} at {ep.host}:{ep.port_number}", file=out, flush=True)
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    deadline = time.monotonic() + args.duration if args.duration else None
    next_pub = time.monotonic()
    try:
        while not stop.is_set() and (deadline is None or time.monotonic() < deadline):
            if args.publish is not None and time.monotonic() >= next_pub:
                port.publish(args.publish.encode())
                next_pub += args.interval
            try:
                msg = port.read(timeout=0.05)
            except errors.ReadTimeout:
                continue
            if args.print:
                print(f"{msg.source} {msg.message_id} "
                      f"{msg.payload.decode('utf-8', 'replace')}", file=out, flush=True)
    finally:
        port.close()
    return 0


def _admin_status(reply: str) -> int:
    return 0 if reply.startswith("ok") else 1


def cmd_connect(args, out):
    from .port import admin_session

    client = _name_client(args)
    src = client.lookup(args.src)
    dst = client.lookup(args.dst)
    with admin_session(args.src, client) as session:
        reply = session.request(f"connect {args.dst} {args.carrier}")
    if _admin_status(reply):
        raise CliError(f"{args.src} -> {args.dst}: {reply}")
    print(f"{args.src} ({src.host}:{src.port_number}) -> {args.dst} "
          f"({dst.host}:{dst.port_number}) carrier {args.carrier}", file=out)
    return 0


def cmd_disconnect(args, out):
    from .port import admin_session

    with admin_session(args.src, _name_client(args)) as session:
        reply = session.request(f"disconnect {args.dst}")
    if _admin_status(reply):
        raise CliError(f"{args.src} -> {args.dst}: {reply}")
    print(reply, file=out)
    return 0


def cmd_admin(args, out):
    from .port import admin_session

    lines = list(args.command or [])
    if args.script:
        with open(args.script) as fh:
            lines.extend(fh.read().splitlines())
    scripted = bool(lines)
    status = 0
    with admin_session(args.target, _name_client(args)) as session:
        source = lines if scripted else _interactive_lines(args.target)
        for line in source:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line in ("quit", "exit"):
                break
            reply = session.request(line)
            print(reply, file=out, flush=True)
            status = _admin_status(reply)
    return status if scripted else 0


def _interactive_lines(target):
    prompt = sys.stdin.isatty()
    while True:
        if prompt:
            print(f"{target}> ", end="", file=sys.stderr, flush=True)
        line = sys.stdin.readline()
        if not line:
            return
        yield line


def cmd_bench(args, out):
    from .bench.scenario import run_matrix, topology_loader
    from .bench.stats import write_csv

    kwargs = dict(count=args.count, warmup=args.warmup, rate_hz=args.rate,
                  probe_size=args.probe_size, load_size=args.load_size)
    if args.emulate:
        kwargs["seed"] = args.seed
        if args.topology:
            kwargs["emu_topology"] = topology_loader(args.topology)
    elif args.topology:
        raise CliError("--topology needs --emulate")
    elif args.nameserver:
        kwargs["nameserver"] = resolve_address(args.nameserver)

    rows = []
    sink = open(args.output, "w", newline="") if args.output else out
    write_csv([], sink)

    def on_row(row):
        rows.append(row)
        write_csv([row], sink, header=False)
        sink.flush()

    try:
        report = run_matrix(args.scenario, args.qos, args.load, args.carriers,
                            emulate=args.emulate, on_row=on_row, **kwargs)
    finally:
        if args.output:
            sink.close()
    if args.plot:
        from .plotting import plot_report
        plot_report(report, args.plot)
    return 0


def _parse_flow(text):
    """``SRC,DST,SIZE[,key=value...]`` with keys tos, count, interval, start, carrier."""
    from .netemu.topofile import parse_duration_ns

    parts = text.split(",")
    if len(parts) < 3:
        raise argparse.ArgumentTypeError(f"flow needs SRC,DST,SIZE: {text!r}")
    flow = {"src": parts[0], "dst": parts[1], "tos": 0, "count": 1, "interval": 0,
            "start": 0, "carrier": "tcp", "priority": 0}
    try:
        flow["size"] = int(parts[2])
        for kv in parts[3:]:
            key, _, value = kv.partition("=")
            if key in ("interval", "start"):
                flow[key] = parse_duration_ns(value)
            elif key in ("tos", "count", "priority"):
                flow[key] = int(value, 0)
            elif key == "carrier" and value in CARRIERS:
                flow[key] = value
            else:
                raise ValueError(f"bad flow option {kv!r}")
    except (ValueError, errors.PrioportError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if flow["size"] <= 0 or flow["count"] < 0:
        raise argparse.ArgumentTypeError(f"bad flow {text!r}")
    return flow


def cmd_emu(args, out):
    from .netemu.topofile import load_topology, write_trace

    topo = load_topology(args.topology, args.seed)
    topo.record_packets = True
    stats = []
    for i, flow in enumerate(args.flow):
        st = {"flow": i, "delivered": 0, "lost": 0, "latency": []}
        stats.append(st)

        def done(xfer, st=st):
            st["delivered"] += 1
            st["latency"].append(xfer.delivered_ns - xfer.submit_ns)

        def lost(xfer, st=st):
            st["lost"] += 1

        for k in range(flow["count"]):
            topo.schedule(flow["start"] + k * flow["interval"],
                          lambda f=flow, d=done, l=lost: topo.send_message(
                              f["src"], f["dst"], f["size"], f["tos"], priority=f["priority"],
                              carrier=f["carrier"], on_delivered=d, on_lost=l))
    topo.run()
    print("flow,src,dst,messages,delivered,lost,mean_latency_ns", file=out)
    for flow, st in zip(args.flow, stats):
        lat = st["latency"]
        mean = f"{sum(lat) / len(lat):.1f}" if lat else ""
        print(f"{st['flow']},{flow['src']},{flow['dst']},{flow['count']},{st['delivered']},"
              f"{st['lost']},{mean}", file=out)
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            write_trace(topo.packets, fh)
    return 0


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description=__doc__.splitlines()[0])
    parser.add_argument("--nameserver", metavar="HOST:PORT",
                        help="name server address (overrides $PRIOPORT_NAMESERVER)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("nameserver", help="run the name server")
    p.add_argument("--listen", type=_address, default=DEFAULT_ADDRESS, metavar="HOST:PORT")
    p.set_defaults(func=cmd_nameserver)

    p = sub.add_parser("port", help="run a port until interrupted")
    p.add_argument("name")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--listen-port", type=int, default=0)
    p.add_argument("--print", action="store_true", help="print received messages")
    p.add_argument("--publish", metavar="TEXT", help="publish TEXT periodically")
    p.add_argument("--interval", type=_positive(float), default=1.0, metavar="SECONDS")
    p.add_argument("--duration", type=_positive(float), metavar="SECONDS")
    p.set_defaults(func=cmd_port)

    for name, func, helptext in (("connect", cmd_connect, "connect SRC to DST"),
                                 ("disconnect", cmd_disconnect, "drop SRC's channel to DST")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("src")
        p.add_argument("dst")
        if name == "connect":
            p.add_argument("--carrier", choices=CARRIERS, default="tcp")
        p.set_defaults(func=func)

    p = sub.add_parser("admin", help="admin session with a port")
    p.add_argument("target")
    p.add_argument("-c", "--command", action="append", metavar="LINE",
                   help="run LINE and exit (repeatable)")
    p.add_argument("-f", "--script", metavar="FILE", help="run the lines of FILE and exit")
    p.set_defaults(func=cmd_admin)

    p = sub.add_parser("bench", help="RTT under load; CSV to stdout")
    p.add_argument("--scenario", choices=("nic", "switch", "nic_congestion",
                                          "switch_congestion"), default="nic")
    p.add_argument("--load", type=_fractions, default=[0.2, 0.7], metavar="F[,F...]")
    p.add_argument("--qos", type=_qos_list, default=["on", "off"], metavar="on,off")
    p.add_argument("--carriers", type=_carrier_pairs, default=[("tcp", "tcp")],
                   metavar="PROBE/LOAD[,...]|all")
    p.add_argument("--emulate", action="store_true", help="deterministic virtual-time run")
    p.add_argument("--topology", metavar="FILE", help="topology file (with --emulate)")
    p.add_argument("--count", type=_non_negative_int, default=300)
    p.add_argument("--warmup", type=_non_negative_int, default=100)
    p.add_argument("--rate", type=_positive(float), default=100.0, metavar="HZ")
    p.add_argument("--probe-size", type=_positive(int), metavar="BYTES")
    p.add_argument("--load-size", type=_positive(int), default=32 * 1024, metavar="BYTES")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", metavar="FILE", help="write CSV here instead of stdout")
    p.add_argument("--plot", metavar="FILE", help="also render a bar chart")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("emu", help="run flows through an emulated topology")
    p.add_argument("--topology", required=True, metavar="FILE")
    p.add_argument("--flow", type=_parse_flow, action="append", default=[],
                   metavar="SRC,DST,SIZE[,tos=N,count=N,interval=T,start=T,carrier=C]")
    p.add_argument("--trace", metavar="FILE", help="write the per-packet trace CSV")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_emu)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.nameserver:
        try:
            parse_address(args.nameserver)
        except ValueError as exc:
            parser.error(str(exc))
    try:
        return args.func(args, out)
    except (CliError, errors.PrioportError, OSError) as exc:
        code = getattr(exc, "code", None)
        detail = str(exc)
        msg = f"{code}: {detail}" if code and detail and code not in detail else (detail or code)
        print(f"{PROG}: {msg}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
