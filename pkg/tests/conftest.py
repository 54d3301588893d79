import os

import pytest
from hypothesis import HealthCheck, settings

from prioport.nameserver import NameServer
from prioport.netemu import EmuNetwork, EmuTopology
from prioport.port import open_port

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def nameserver():
    with NameServer() as ns:
        yield ns


@pytest.fixture
def ports(nameserver):
    """Factory for ports registered with a private name server."""
    opened = []

    def make(name, **config):
        p = open_port(name, nameserver.address, **config)
        opened.append(p)
        return p

    yield make
    for p in reversed(opened):
        p.close()


def two_host_topology():
    topo = EmuTopology()
    topo.add_host("A")
    topo.add_host("B")
    topo.add_switch("S")
    topo.add_link("A", "S")
    topo.add_link("B", "S")
    return topo


@pytest.fixture
def emu_net():
    with EmuNetwork(two_host_topology()) as net:
        yield net


@pytest.fixture
def emu_pair(ports, emu_net):
    """/pub on emulated host A connected over emu to /sub on host B."""
    pub = ports("/pub", emu=emu_net, emu_host="A")
    sub = ports("/sub", emu=emu_net, emu_host="B")
    pub.connect("/sub", "emu")
    return pub, sub, emu_net
