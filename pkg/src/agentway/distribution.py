"""Push-model code distribution over a segmented topology.

Itineraries are resolved to address literals exactly once at launch time.
Code travels a two-phase tree in hierarchical mode: manager to its local
segment hosts and to each remote segment's relay (MDM), then each relay
fans out inside its own segment, so every inter-segment link carries the
code image exactly once.
"""

from __future__ import annotations

import ipaddress
import json
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import wire
from .agency import CodeImage
from .transport import Endpoint, LinkModel, LinkStats, TransportOpts, parse_endpoint
from .wire import Frame, FrameKind


class DistributionError(Exception):
    pass


@dataclass
class InstrumentedLink:
    link_id: str
    stats: LinkStats = field(default_factory=LinkStats)
    model: Optional[LinkModel] = None


def link_id_for(seg_a: str, seg_b: str) -> str:
    if seg_a == seg_b:
        return f"local:{seg_a}"
    return "--".join(sorted((seg_a, seg_b)))


@dataclass
class Topology:
    segments: dict[str, list[Endpoint]]
    manager: Endpoint
    mdms: dict[str, Endpoint] = field(default_factory=dict)
    links: dict[str, InstrumentedLink] = field(default_factory=dict)
    protocol: str = "tcp"

    def __post_init__(self) -> None:
        seen: dict[tuple[str, int], str] = {}
        for seg, hosts in self.segments.items():
            for host in hosts:
                if host.key in seen:
                    raise DistributionError(
                        f"host {host} in both segments {seen[host.key]!r} and {seg!r}"
                    )
                seen[host.key] = seg
        self._segment_of = seen
        if self.manager.key not in seen:
            raise DistributionError(f"manager {self.manager} is not in any segment")
        manager_seg = seen[self.manager.key]
        for seg in self.segments:
            if seg == manager_seg:
                continue
            mdm = self.mdms.get(seg)
            if mdm is not None and seen.get(mdm.key) != seg:
                raise DistributionError(f"MDM {mdm} is not a member of segment {seg!r}")
        # make sure every declared link id exists as an instrumented object
        for seg_a in self.segments:
            for seg_b in self.segments:
                self.link(link_id_for(seg_a, seg_b))

    def segment_of(self, endpoint: Endpoint) -> str:
        seg = self._segment_of.get(endpoint.key)
        if seg is None:
            raise DistributionError(f"endpoint {endpoint} is not in the topology")
        return seg

    @property
    def manager_segment(self) -> str:
        return self._segment_of[self.manager.key]

    def link(self, link_id: str) -> InstrumentedLink:
        if link_id not in self.links:
            self.links[link_id] = InstrumentedLink(link_id)
        return self.links[link_id]

    def link_between(self, seg_a: str, seg_b: str) -> InstrumentedLink:
        return self.link(link_id_for(seg_a, seg_b))

    def link_between_endpoints(self, a: Endpoint, b: Endpoint) -> InstrumentedLink:
        return self.link_between(self.segment_of(a), self.segment_of(b))

    @classmethod
    def from_dict(cls, doc: dict) -> "Topology":
        protocol = doc.get("protocol", "tcp")
        segments = {
            seg: [parse_endpoint(h, protocol) for h in hosts]
            for seg, hosts in doc["segments"].items()
        }
        manager = parse_endpoint(doc["manager"], protocol)
        mdms = {seg: parse_endpoint(h, protocol) for seg, h in doc.get("mdms", {}).items()}
        topo = cls(segments=segments, manager=manager, mdms=mdms, protocol=protocol)
        for link_id, model in doc.get("links", {}).items():
            topo.link(link_id).model = LinkModel(
                bandwidth_bits_per_s=model["bandwidth_bps"],
                latency_s=model.get("latency_s", 0.0),
            )
        return topo

    @classmethod
    def load(cls, path: str) -> "Topology":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class PlanEdge:
    source: Endpoint
    target: Endpoint
    link_id: str
    phase: int  # 1 = from the manager, 2 = relay fan-out


@dataclass
class DistributionPlan:
    mode: str  # "flat" | "hierarchical"
    edges: list[PlanEdge]

    def edges_on_link(self, link_id: str) -> list[PlanEdge]:
        return [e for e in self.edges if e.link_id == link_id]


@dataclass
class LinkUsage:
    frames: int = 0
    code_bytes: int = 0


@dataclass
class DistributionReport:
    plan: DistributionPlan
    per_link: dict[str, LinkUsage]
    acks: dict[tuple[str, int], bool]
    errors: dict[tuple[str, int], str]
    elapsed_s: float

    @property
    def all_ok(self) -> bool:
        return all(self.acks.values()) and bool(self.acks)


# ---------------------------------------------------------------------------


def is_address_literal(name: str) -> bool:
    try:
        ipaddress.ip_address(name)
        return True
    except ValueError:
        return False


def resolve_itinerary(
    names: list[str],
    resolver: Optional[Callable[[str], str]] = None,
    default_port: int = 0,
    protocol: str = "tcp",
) -> list[Endpoint]:
    """Turn host names into address endpoints, exactly once, at launch time.

    Entries may be "host:port" or bare hosts (then default_port applies);
    address literals pass through without touching the resolver.
    """
    out = []
    for name in names:
        host, sep, port_text = name.rpartition(":")
        if sep and port_text.isdigit():
            port = int(port_text)
        else:
            host, port = name, default_port
        if is_address_literal(host):
            address = host
        else:
            if resolver is None:
                raise DistributionError(f"cannot resolve {host!r}: no resolver supplied")
            try:
                address = resolver(host)
            except Exception as exc:
                raise DistributionError(f"cannot resolve {host!r}: {exc}") from exc
            if address is None or not is_address_literal(address):
                raise DistributionError(f"resolver returned no address for {host!r}")
        out.append(Endpoint(address, port, protocol))
    return out


def plan_distribution(
    itinerary: list[Endpoint], topology: Topology, mode: str = "hierarchical"
) -> DistributionPlan:
    if mode not in ("flat", "hierarchical"):
        raise DistributionError(f"unknown distribution mode {mode!r}")
    targets: list[Endpoint] = []
    seen: set[tuple[str, int]] = set()
    for ep in itinerary:
        topology.segment_of(ep)  # raises if unknown
        if ep.key == topology.manager.key or ep.key in seen:
            continue
        seen.add(ep.key)
        targets.append(ep)

    manager = topology.manager
    manager_seg = topology.manager_segment
    edges: list[PlanEdge] = []

    if mode == "flat":
        for host in targets:
            edges.append(PlanEdge(
                manager, host, link_id_for(manager_seg, topology.segment_of(host)), phase=1
            ))
        return DistributionPlan("flat", edges)

    by_segment: dict[str, list[Endpoint]] = {}
    for host in targets:
        by_segment.setdefault(topology.segment_of(host), []).append(host)

    for host in by_segment.get(manager_seg, []):
        edges.append(PlanEdge(manager, host, link_id_for(manager_seg, manager_seg), phase=1))
    for seg in sorted(by_segment):
        if seg == manager_seg:
            continue
        mdm = topology.mdms.get(seg)
        if mdm is None:
            raise DistributionError(f"remote segment {seg!r} has no MDM")
        edges.append(PlanEdge(manager, mdm, link_id_for(manager_seg, seg), phase=1))
        for host in by_segment[seg]:
            if host.key == mdm.key:
                continue  # the relay already holds the code it received
            edges.append(PlanEdge(mdm, host, link_id_for(seg, seg), phase=2))
    return DistributionPlan("hierarchical", edges)


def push_code(
    plan: DistributionPlan,
    image: CodeImage,
    transport,
    opts: Optional[TransportOpts] = None,
    topology: Optional[Topology] = None,
) -> DistributionReport:
    """Execute a distribution plan: one identical CODE_PUSH frame per edge.

    Relay fan-out is requested with a separate FORWARD_REQUEST frame so every
    CODE_PUSH on the wire is byte-identical regardless of mode.
    """
    opts = opts or TransportOpts()
    image.verify()
    push_frame = Frame(
        FrameKind.CODE_PUSH,
        wire.CodePushPayload(image.kind_name, image.digest, image.code).encode(),
    )
    frame_bytes = len(wire.encode_frame(push_frame))
    payload_bytes = len(push_frame.payload)

    per_link: dict[str, LinkUsage] = {}
    acks: dict[tuple[str, int], bool] = {}
    errors: dict[tuple[str, int], str] = {}
    start = time.perf_counter()

    def note(link_id: str) -> None:
        usage = per_link.setdefault(link_id, LinkUsage())
        usage.frames += 1
        usage.code_bytes += frame_bytes

    fanouts: dict[tuple[str, int], list[PlanEdge]] = {}
    for edge in plan.edges:
        if edge.phase == 2:
            fanouts.setdefault(edge.source.key, []).append(edge)

    for edge in plan.edges:
        if edge.phase != 1:
            continue
        link = topology.link(edge.link_id) if topology else None
        try:
            receipt = transport.send_frame(edge.target, push_frame, opts, link=link)
        except Exception as exc:
            acks[edge.target.key] = False
            errors[edge.target.key] = str(exc)
            continue
        acks[edge.target.key] = receipt.ok
        if receipt.ok:
            note(edge.link_id)
        else:
            errors[edge.target.key] = f"code {receipt.error_code}: {receipt.error_message}"
            continue
        relay_edges = fanouts.get(edge.target.key)
        if not relay_edges:
            continue
        req = wire.ForwardRequestPayload(
            image.kind_name,
            image.digest,
            tuple(
                wire.ForwardTarget(e.target.address, e.target.port, e.link_id)
                for e in relay_edges
            ),
        )
        try:
            fwd_receipt = transport.send_frame(
                edge.target, Frame(FrameKind.FORWARD_REQUEST, req.encode()), opts, link=link
            )
        except Exception as exc:
            for e in relay_edges:
                acks[e.target.key] = False
                errors[e.target.key] = f"relay unreachable: {exc}"
            continue
        if not fwd_receipt.ok:
            for e in relay_edges:
                acks[e.target.key] = False
                errors[e.target.key] = f"relay refused: {fwd_receipt.error_message}"
            continue
        for res in wire.decode_forward_results(fwd_receipt.reply.payload):
            acks[(res.address, res.port)] = res.ok
            if res.ok:
                matching = [e for e in relay_edges if e.target.key == (res.address, res.port)]
                note(matching[0].link_id if matching else link_id_for("?", "?"))
            else:
                errors[(res.address, res.port)] = f"code {res.error_code}"

    return DistributionReport(
        plan=plan,
        per_link=per_link,
        acks=acks,
        errors=errors,
        elapsed_s=time.perf_counter() - start,
    )
