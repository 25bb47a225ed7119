"""Per-host agent runtime: admits transferred agents, instantiates them from
cached code, runs their behavior for one hop, and dispatches them onward.

Code images are carried, cached, digest-checked and counted but never
executed by the migration layer; behaviors are host-registered callables
bound by kind name. That registry is the seam where a real portable code
format would plug in.
"""

from __future__ import annotations

import hashlib
import os
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from . import wire
from .transport import Endpoint, Receipt, TransportOpts, parse_endpoint
from .wire import Frame, FrameKind, FieldDescriptor, StateRecord

DEFAULT_CACHE_ENTRIES = 64
DEFAULT_CACHE_BYTES = 16 * 1024 * 1024


class AgencyError(Exception):
    pass


class AdmissionError(AgencyError):
    def __init__(self, code: int, message: str) -> None:
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class CodeImage:
    kind_name: str
    digest: bytes
    code: bytes

    @property
    def size_bytes(self) -> int:
        return len(self.code)

    @classmethod
    def from_code(cls, kind_name: str, code: bytes) -> "CodeImage":
        return cls(kind_name=kind_name, digest=hashlib.sha256(code).digest(), code=code)

    def verify(self) -> None:
        if hashlib.sha256(self.code).digest() != self.digest:
            raise AgencyError(f"digest mismatch for code image {self.kind_name!r}")


@dataclass(frozen=True)
class CacheOutcome:
    action: str  # "stored" | "refreshed"
    evicted: tuple[str, ...] = ()


class CodeCache:
    """LRU-bounded store of code images: capacity in entries plus a byte ceiling."""

    def __init__(
        self,
        capacity: int = DEFAULT_CACHE_ENTRIES,
        byte_limit: int = DEFAULT_CACHE_BYTES,
    ) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.byte_limit = byte_limit
        self._lock = threading.RLock()
        self._entries: OrderedDict[str, CodeImage] = OrderedDict()
        self._total_bytes = 0
        self.hits = 0
        self.misses = 0
        self.evictions = 0

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def install(self, image: CodeImage) -> CacheOutcome:
        image.verify()
        with self._lock:
            if image.kind_name in self._entries:
                old = self._entries.pop(image.kind_name)
                self._total_bytes -= old.size_bytes
                self._entries[image.kind_name] = image
                self._total_bytes += image.size_bytes
                return CacheOutcome("refreshed")
            self._entries[image.kind_name] = image
            self._total_bytes += image.size_bytes
            evicted = []
            while len(self._entries) > self.capacity or (
                self._total_bytes > self.byte_limit and len(self._entries) > 1
            ):
                kind, victim = self._entries.popitem(last=False)
                self._total_bytes -= victim.size_bytes
                self.evictions += 1
                evicted.append(kind)
            return CacheOutcome("stored", tuple(evicted))

    def lookup(self, kind_name: str) -> Optional[CodeImage]:
        with self._lock:
            image = self._entries.get(kind_name)
            if image is None:
                self.misses += 1
                return None
            self._entries.move_to_end(kind_name)
            self.hits += 1
            return image


@dataclass(frozen=True)
class HostContext:
    host_name: str
    address: str
    agency_id: str

    def now(self) -> float:
        return time.time()


@dataclass
class Behavior:
    """A named executor bound to a kind: schema plus on-arrival and task steps."""

    name: str
    schema: list[FieldDescriptor]
    on_arrival: Callable[[StateRecord, HostContext], None]
    task: Callable[[StateRecord, HostContext], None]


def _bump_hop(state: StateRecord, ctx: HostContext) -> None:
    if "hop" in state.values:
        state.set("hop", state.get("hop") + 1)


def _noop(state: StateRecord, ctx: HostContext) -> None:
    pass


def _collect_host(state: StateRecord, ctx: HostContext) -> None:
    folder = list(state.get("data"))
    folder.append(ctx.host_name)
    state.set("data", folder)


def pingpong_behavior(schema: list[FieldDescriptor]) -> Behavior:
    """A→B→A round-tripper that performs no task at all."""
    return Behavior("pingpong", schema, on_arrival=_bump_hop, task=_noop)


def collector_behavior(schema: list[FieldDescriptor]) -> Behavior:
    """Appends the visited host's name to the agent's data folder."""
    return Behavior("collector", schema, on_arrival=_bump_hop, task=_collect_host)


BUILTIN_BEHAVIORS: dict[str, Callable[[list[FieldDescriptor]], Behavior]] = {
    "pingpong": pingpong_behavior,
    "collector": collector_behavior,
}


@dataclass
class AgentInstance:
    agent_id: bytes
    state: StateRecord
    behavior: Behavior
    hop_index: int


@dataclass
class HopResult:
    status: str  # "dispatched" | "completed" | "failed"
    dispatched_to: Optional[Endpoint] = None
    data: Optional[list] = None
    error: Optional[str] = None
    receipt: Optional[Receipt] = None


def itinerary_endpoints(state: StateRecord, protocol: str) -> list[Endpoint]:
    return [parse_endpoint(entry, protocol) for entry in state.get("it")]


class Agency:
    """One host's runtime: listener, code cache, behavior registry, completions."""

    def __init__(
        self,
        host_name: str,
        bind: Endpoint,
        transport,
        opts: Optional[TransportOpts] = None,
        cache_capacity: int = DEFAULT_CACHE_ENTRIES,
        cache_byte_limit: int = DEFAULT_CACHE_BYTES,
        topology=None,
        report_timings: bool = False,
    ) -> None:
        self.host_name = host_name
        self.bind = bind
        self.transport = transport
        self.opts = opts or TransportOpts(protocol=bind.protocol)
        self.cache = CodeCache(cache_capacity, cache_byte_limit)
        self.topology = topology
        self.report_timings = report_timings
        self.agency_id = os.urandom(8).hex()
        self._behaviors: dict[str, Behavior] = {}
        self._lock = threading.Lock()
        self.completions: dict[bytes, dict] = {}
        self.failures: dict[bytes, str] = {}
        self.timing_reports: dict[bytes, wire.TimingReportPayload] = {}
        self.phase_log: dict[bytes, dict] = {}
        self._listener = None

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        self._listener = self.transport.serve(self.bind, self.opts, self.handle_frame)

    def stop(self) -> None:
        if self._listener is not None:
            self._listener.close()
            self._listener = None

    def register_behavior(self, kind_name: str, behavior: Behavior) -> None:
        self._behaviors[kind_name] = behavior

    def context(self) -> HostContext:
        return HostContext(self.host_name, self.bind.address, self.agency_id)

    # -- code cache --------------------------------------------------------

    def install_code(self, image: CodeImage) -> CacheOutcome:
        return self.cache.install(image)

    def lookup_code(self, kind_name: str) -> Optional[CodeImage]:
        return self.cache.lookup(kind_name)

    # -- frame handling ----------------------------------------------------

    def handle_frame(self, frame: Frame, source: tuple) -> Frame:
        if frame.kind == FrameKind.CODE_PUSH:
            return self._handle_code_push(frame)
        if frame.kind == FrameKind.FORWARD_REQUEST:
            return self._handle_forward_request(frame)
        if frame.kind == FrameKind.AGENT_TRANSFER:
            return self._handle_transfer(frame)
        if frame.kind == FrameKind.TIMING_REPORT:
            report = wire.TimingReportPayload.decode(frame.payload)
            with self._lock:
                self.timing_reports[report.agent_id] = report
            return Frame(FrameKind.ACK)
        if frame.kind == FrameKind.ERROR:
            err = wire.ErrorPayload.decode(frame.payload)
            with self._lock:
                self.failures[err.agent_id] = err.message
            return Frame(FrameKind.ACK)
        return Frame(
            FrameKind.ERROR,
            wire.ErrorPayload(wire.ERR_BAD_FRAME, f"unexpected kind {frame.kind}").encode(),
        )

    def _nack(self, code: int, message: str, agent_id: bytes = b"\x00" * 16) -> Frame:
        return Frame(FrameKind.ERROR, wire.ErrorPayload(code, message, agent_id).encode())

    def _handle_code_push(self, frame: Frame) -> Frame:
        try:
            push = wire.CodePushPayload.decode(frame.payload)
        except wire.WireError as exc:
            return self._nack(wire.ERR_DECODE_FAILED, f"bad code push: {exc}")
        image = CodeImage(push.kind_name, push.digest, push.code)
        try:
            self.install_code(image)
        except AgencyError as exc:
            return self._nack(wire.ERR_DIGEST_MISMATCH, str(exc))
        return Frame(FrameKind.ACK)

    def _handle_forward_request(self, frame: Frame) -> Frame:
        try:
            req = wire.ForwardRequestPayload.decode(frame.payload)
        except wire.WireError as exc:
            return self._nack(wire.ERR_DECODE_FAILED, f"bad forward request: {exc}")
        image = self.lookup_code(req.kind_name)
        if image is None or image.digest != req.digest:
            return self._nack(wire.ERR_CODE_MISSING, f"no cached code for {req.kind_name!r}")
        image.verify()  # a corrupted relay copy must not multiply downstream
        push_frame = Frame(FrameKind.CODE_PUSH, wire.CodePushPayload(
            image.kind_name, image.digest, image.code).encode())
        results = []
        for target in req.targets:
            endpoint = Endpoint(target.address, target.port, self.opts.protocol)
            link = self._link_for(target.link_id)
            try:
                receipt = self.transport.send_frame(endpoint, push_frame, self.opts, link=link)
                results.append(
                    wire.ForwardResult(target.address, target.port, receipt.ok, receipt.error_code)
                )
            except Exception:
                results.append(
                    wire.ForwardResult(target.address, target.port, False, wire.ERR_INTERNAL)
                )
        return Frame(FrameKind.ACK, wire.encode_forward_results(results))

    def _link_for(self, link_id: str):
        if self.topology is None or not link_id:
            return None
        return self.topology.links.get(link_id)

    def _handle_transfer(self, frame: Frame) -> Frame:
        try:
            instance = self.admit_agent(frame)
        except AdmissionError as exc:
            agent_id = b"\x00" * 16
            try:
                agent_id = wire.AgentTransferPayload.decode(frame.payload).agent_id
            except wire.WireError:
                pass
            return self._nack(exc.code, str(exc), agent_id)
        if instance is None:  # probe: code present, nothing instantiated
            return Frame(FrameKind.ACK)
        self.transport.defer(lambda: self.run_hop(instance))
        return Frame(FrameKind.ACK)

    # -- admission and execution -------------------------------------------

    def admit_agent(self, frame: Frame) -> Optional[AgentInstance]:
        if frame.kind != FrameKind.AGENT_TRANSFER:
            raise AdmissionError(wire.ERR_BAD_FRAME, "not an agent transfer")
        t0 = time.perf_counter_ns()
        try:
            payload = wire.AgentTransferPayload.decode(frame.payload)
        except wire.WireError as exc:
            raise AdmissionError(wire.ERR_DECODE_FAILED, f"bad transfer payload: {exc}")
        state_bytes = payload.state
        try:
            if frame.compressed:
                state_bytes = wire.decompress_payload(state_bytes)
            kind_name = wire.peek_kind_name(state_bytes)
        except wire.WireError as exc:
            raise AdmissionError(wire.ERR_DECODE_FAILED, f"undecodable state: {exc}")
        image = self.lookup_code(kind_name)
        if image is None or image.digest != payload.digest:
            raise AdmissionError(
                wire.ERR_CODE_MISSING,
                f"no cached code for {kind_name!r}; push model does not fetch on demand",
            )
        if frame.flags & wire.FLAG_PROBE:
            return None
        behavior = self._behaviors.get(kind_name)
        if behavior is None:
            raise AdmissionError(wire.ERR_INTERNAL, f"no behavior registered for {kind_name!r}")
        try:
            state = wire.decode_state(state_bytes, behavior.schema)
        except wire.SchemaMismatchError as exc:
            raise AdmissionError(wire.ERR_SCHEMA_MISMATCH, str(exc))
        except wire.WireError as exc:
            raise AdmissionError(wire.ERR_DECODE_FAILED, str(exc))
        decode_ns = time.perf_counter_ns() - t0
        with self._lock:
            entry = self.phase_log.setdefault(payload.agent_id, {})
            entry["decode_ns"] = decode_ns
        return AgentInstance(payload.agent_id, state, behavior, payload.hop_index)

    def run_hop(self, instance: AgentInstance) -> HopResult:
        ctx = self.context()
        itinerary = itinerary_endpoints(instance.state, self.opts.protocol)
        origin = itinerary[-1]
        try:
            instance.behavior.on_arrival(instance.state, ctx)
            instance.behavior.task(instance.state, ctx)
        except Exception as exc:
            self._report_failure(origin, instance.agent_id, str(exc))
            return HopResult("failed", error=str(exc))
        if instance.hop_index >= len(itinerary) - 1:
            data = instance.state.values.get("data")
            with self._lock:
                self.completions[instance.agent_id] = {
                    "data": list(data) if data is not None else [],
                    "state": instance.state,
                    "completed_ns": time.perf_counter_ns(),
                }
            return HopResult("completed", data=list(data) if data is not None else [])
        dest = itinerary[instance.hop_index + 1]
        try:
            receipt, encode_ns = self.dispatch(instance, dest)
        except Exception as exc:
            self._report_failure(origin, instance.agent_id, f"dispatch failed: {exc}")
            return HopResult("failed", error=str(exc))
        if not receipt.ok:
            self._report_failure(
                origin, instance.agent_id,
                f"hop refused with code {receipt.error_code}: {receipt.error_message}",
            )
            return HopResult("failed", error=receipt.error_message, receipt=receipt)
        if self.report_timings:
            log = self.phase_log.get(instance.agent_id, {})
            report = wire.TimingReportPayload(
                instance.agent_id,
                decode_ns=log.get("decode_ns", 0),
                encode_ns=encode_ns,
                transfer_ns=int(receipt.send_duration_s * 1e9),
            )
            def ship_report() -> None:
                try:
                    self.transport.send_frame(
                        origin, Frame(FrameKind.TIMING_REPORT, report.encode()), self.opts
                    )
                except Exception:
                    pass  # instrumentation only; never fails the hop

            # deferred so the report lands outside the timed round-trip window
            self.transport.defer(ship_report)
        return HopResult("dispatched", dispatched_to=dest, receipt=receipt)

    def dispatch(self, instance: AgentInstance, dest: Endpoint) -> tuple[Receipt, int]:
        """Re-encode the agent's state and send it to the next itinerary stop."""
        t0 = time.perf_counter_ns()
        state_bytes = wire.encode_state(instance.state)
        flags = 0
        if self.opts.compress:
            state_bytes = wire.compress_payload(state_bytes, self.opts.compress_level)
            flags |= wire.FLAG_COMPRESSED
        image = self.lookup_code(instance.state.kind_name)
        if image is None:
            raise AgencyError(f"local cache lost code for {instance.state.kind_name!r}")
        payload = wire.AgentTransferPayload(
            instance.agent_id, image.digest, instance.hop_index + 1, state_bytes
        )
        frame = Frame(FrameKind.AGENT_TRANSFER, payload.encode(), flags)
        encode_ns = time.perf_counter_ns() - t0
        link = self._link_between(dest)
        receipt = self.transport.send_frame(dest, frame, self.opts, link=link)
        return receipt, encode_ns

    def _link_between(self, dest: Endpoint):
        if self.topology is None:
            return None
        try:
            return self.topology.link_between_endpoints(self.bind, dest)
        except Exception:
            return None

    def _report_failure(self, origin: Endpoint, agent_id: bytes, message: str) -> None:
        with self._lock:
            self.failures.setdefault(agent_id, message)
        if origin.key == self.bind.key:
            return
        try:
            self.transport.send_frame(
                origin,
                Frame(FrameKind.ERROR, wire.ErrorPayload(wire.ERR_INTERNAL, message, agent_id).encode()),
                self.opts,
            )
        except Exception:
            pass

    # -- launching -----------------------------------------------------------

    def launch(
        self,
        record: StateRecord,
        itinerary: list[Endpoint],
        agent_id: Optional[bytes] = None,
    ) -> bytes:
        """Dispatch a freshly created agent to the first itinerary stop.

        The itinerary must end back here (the origin); it is written into the
        record's "it" field as address literals so no hop ever resolves a name.
        """
        if not itinerary:
            raise AgencyError("itinerary is empty")
        if itinerary[-1].key != self.bind.key:
            raise AgencyError("itinerary must end at the launching agency")
        if "it" not in record.values:
            raise AgencyError('record needs an "it" string-array field')
        record.set("it", [str(ep) for ep in itinerary])
        agent_id = agent_id or os.urandom(16)
        instance = AgentInstance(agent_id, record, self._require_behavior(record.kind_name), -1)
        receipt, encode_ns = self.dispatch(instance, itinerary[0])
        if not receipt.ok:
            raise AgencyError(
                f"launch refused with code {receipt.error_code}: {receipt.error_message}"
            )
        with self._lock:
            self.phase_log[agent_id] = dict(
                self.phase_log.get(agent_id, {}),
                launch_encode_ns=encode_ns,
                launch_transfer_ns=int(receipt.send_duration_s * 1e9),
            )
        return agent_id

    def probe_code(self, endpoint: Endpoint, kind_name: str, digest: bytes) -> bool:
        """Check whether a remote agency holds a code image, without running it."""
        record = StateRecord(kind_name=kind_name)
        payload = wire.AgentTransferPayload(b"\x00" * 16, digest, 0, wire.encode_state(record))
        frame = Frame(FrameKind.AGENT_TRANSFER, payload.encode(), wire.FLAG_PROBE)
        receipt = self.transport.send_frame(endpoint, frame, self.opts)
        return receipt.ok

    def _require_behavior(self, kind_name: str) -> Behavior:
        behavior = self._behaviors.get(kind_name)
        if behavior is None:
            raise AgencyError(f"no behavior registered for {kind_name!r}")
        return behavior
