"""Assembly of the full two-node stack on one simulator."""

from __future__ import annotations

from typing import Optional

from .link import QEGP, LinkConfig, TdmaSchedule
from .netsim import ClassicalChannel, Simulator
from .noise import NoiseParams
from .phys import DeviceController, MidpointLink, PhysConfig, QuantumHardware
from .qstate import Node
from .units import MS


class Network:
    """Client and server nodes: device controllers, QEGP peers, LAN channel."""

    def __init__(self, noise: Optional[NoiseParams] = None, phys: Optional[PhysConfig] = None,
                 link: Optional[LinkConfig] = None, schedule: Optional[TdmaSchedule] = None,
                 channel_latency: int = MS // 10, channel_loss: float = 0.0, seed: int = 0,
                 trace: bool = False):
        self.noise = noise or NoiseParams()
        self.phys_cfg = phys or PhysConfig()
        self.link_cfg = link or LinkConfig()
        self.schedule = schedule or TdmaSchedule()
        self.sim = Simulator(seed, trace=trace)
        self.hw = QuantumHardware()
        self.midpoint = MidpointLink(self.sim, self.hw, self.noise, self.phys_cfg)
        self.channel = ClassicalChannel(self.sim, channel_latency, channel_loss)
        self.devices = {}
        self.qegp = {}
        for node in (Node.CLIENT, Node.SERVER):
            dev = DeviceController(self.sim, node, self.hw, self.noise, self.phys_cfg, self.midpoint)
            self.devices[node] = dev
            self.qegp[node] = QEGP(self.sim, node, dev, self.channel, self.schedule, self.link_cfg)

    @property
    def client(self) -> QEGP:
        return self.qegp[Node.CLIENT]

    @property
    def server(self) -> QEGP:
        return self.qegp[Node.SERVER]

    def run(self, until: Optional[int] = None) -> None:
        self.sim.run(until)
