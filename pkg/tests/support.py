"""Helpers shared by several test modules."""

import os
import subprocess
import sys
import textwrap

UNPRIVILEGED_UID = 65534

DEGRADED_SCRIPT = textwrap.dedent("""
    import os, sys
    # import first: the package directory may not be readable after the drop
    from prioport.nameserver import NameServer
    from prioport.port import AdminSession, open_port
    if os.geteuid() == 0:
        os.setgid(%(uid)d)
        os.setuid(%(uid)d)
    with NameServer() as ns:
        pub = open_port("/publisher1", ns.address)
        sub = open_port("/subscriber1", ns.address)
        pub.connect("/subscriber1", "tcp")
        with AdminSession(pub.endpoint) as s:
            print(s.request("prop set /subscriber1 (sched ((policy SCHED_FIFO) (priority 30)))"))
            print(s.request("prop set /subscriber1 (qos ((priority HIGH)))"))
            print(s.request("prop get /subscriber1"))
        for i in range(20):
            pub.publish(str(i).encode())
        got = [int(sub.read(timeout=5).payload) for _ in range(20)]
        print("received", got == list(range(20)))
        pub.close()
        sub.close()
""") % {"uid": UNPRIVILEGED_UID}


def run_unprivileged_admin():
    """Request FIFO/30 from a process without real-time privileges.

    Returns the subprocess's stdout lines. As root the child drops to an
    unprivileged uid after importing; RLIMIT_RTPRIO is 0 for such a user
    by default.
    """
    env = dict(os.environ)
    src = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src")
    env["PYTHONPATH"] = src + os.pathsep + env.get("PYTHONPATH", "")
    proc = subprocess.run([sys.executable, "-c", DEGRADED_SCRIPT], capture_output=True,
                          text=True, timeout=60, env=env, cwd="/")
    if proc.returncode != 0:
        raise RuntimeError(proc.stderr.strip().splitlines()[-1] if proc.stderr else "failed")
    return proc.stdout.splitlines()
