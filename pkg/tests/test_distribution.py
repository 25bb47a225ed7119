import random

import pytest

from agentway import wire
from agentway.agency import Agency, CodeImage
from agentway.distribution import (
    DistributionError,
    Topology,
    is_address_literal,
    link_id_for,
    plan_distribution,
    push_code,
    resolve_itinerary,
)
from agentway.transport import Endpoint, InProcNetwork, ModeledTransport, TransportOpts
from agentway.wire import Frame, FrameKind


def ep(seg: int, host: int, protocol="tcp") -> Endpoint:
    return Endpoint(f"10.0.{seg}.{host}", 9000, protocol)


def three_segment_topology() -> Topology:
    """Manager plus two hosts locally; two remote segments of three hosts each."""
    return Topology(
        segments={
            "seg1": [ep(1, 1), ep(1, 2), ep(1, 3)],
            "seg2": [ep(2, 1), ep(2, 2), ep(2, 3)],
            "seg3": [ep(3, 1), ep(3, 2), ep(3, 3)],
        },
        manager=ep(1, 1),
        mdms={"seg2": ep(2, 1), "seg3": ep(3, 1)},
    )


ALL_NINE = [ep(s, h) for s in (1, 2, 3) for h in (1, 2, 3)]


class TestResolve:
    def test_literals_pass_through_without_resolver(self):
        out = resolve_itinerary(["10.0.0.1:9000", "10.0.0.2:8000"])
        assert [(e.address, e.port) for e in out] == [("10.0.0.1", 9000), ("10.0.0.2", 8000)]

    def test_resolver_called_exactly_once_per_name(self):
        calls = []

        def resolver(name):
            calls.append(name)
            return "192.168.1.10"

        out = resolve_itinerary(["alpha:9000", "10.0.0.5:9000", "beta"],
                                resolver=resolver, default_port=7000)
        assert calls == ["alpha", "beta"]
        assert out[0] == Endpoint("192.168.1.10", 9000, "tcp")
        assert out[2].port == 7000

    def test_unresolvable_name_fails_the_launch(self):
        with pytest.raises(DistributionError, match="resolve"):
            resolve_itinerary(["no-such-host:9000"])

    def test_resolver_error_is_wrapped(self):
        def resolver(name):
            raise KeyError(name)

        with pytest.raises(DistributionError, match="gamma"):
            resolve_itinerary(["gamma:1"], resolver=resolver)

    def test_resolver_returning_non_literal_is_rejected(self):
        with pytest.raises(DistributionError, match="no address"):
            resolve_itinerary(["x:1"], resolver=lambda n: "still-a-name")

    def test_is_address_literal(self):
        assert is_address_literal("10.0.0.1")
        assert is_address_literal("::1")
        assert not is_address_literal("printer.example")


class TestTopology:
    def test_host_in_two_segments_rejected(self):
        with pytest.raises(DistributionError, match="both segments"):
            Topology(segments={"a": [ep(1, 1)], "b": [ep(1, 1)]}, manager=ep(1, 1))

    def test_manager_must_be_a_member(self):
        with pytest.raises(DistributionError, match="manager"):
            Topology(segments={"a": [ep(1, 1)]}, manager=ep(9, 9))

    def test_mdm_must_live_in_its_segment(self):
        with pytest.raises(DistributionError, match="MDM"):
            Topology(
                segments={"a": [ep(1, 1)], "b": [ep(2, 1)]},
                manager=ep(1, 1),
                mdms={"b": ep(1, 1)},
            )

    def test_link_ids_are_symmetric(self):
        assert link_id_for("b", "a") == link_id_for("a", "b") == "a--b"
        assert link_id_for("a", "a") == "local:a"

    def test_from_dict_roundtrip(self):
        doc = {
            "segments": {"a": ["10.0.1.1:9000", "10.0.1.2:9000"], "b": ["10.0.2.1:9000"]},
            "manager": "10.0.1.1:9000",
            "mdms": {"b": "10.0.2.1:9000"},
            "links": {"a--b": {"bandwidth_bps": 64000, "latency_s": 0.01}},
        }
        topo = Topology.from_dict(doc)
        assert topo.segment_of(Endpoint("10.0.2.1", 9000)) == "b"
        assert topo.link("a--b").model.bandwidth_bits_per_s == 64000


class TestPlanning:
    def test_hierarchical_nine_hosts_uses_each_wan_link_once(self):
        topo = three_segment_topology()
        plan = plan_distribution(ALL_NINE, topo, "hierarchical")
        # manager -> 2 local + 2 MDMs, then each MDM -> its 2 other hosts
        assert len(plan.edges) == 8
        assert len(plan.edges_on_link("seg1--seg2")) == 1
        assert len(plan.edges_on_link("seg1--seg3")) == 1
        assert len(plan.edges_on_link("local:seg2")) == 2
        assert {e.phase for e in plan.edges_on_link("local:seg2")} == {2}

    def test_flat_nine_hosts_repeats_the_wan_links(self):
        topo = three_segment_topology()
        plan = plan_distribution(ALL_NINE, topo, "flat")
        assert len(plan.edges) == 8  # everyone but the manager
        assert len(plan.edges_on_link("seg1--seg2")) == 3
        assert len(plan.edges_on_link("seg1--seg3")) == 3
        assert all(e.phase == 1 and e.source == topo.manager for e in plan.edges)

    def test_manager_segment_only_itinerary_makes_modes_identical(self):
        topo = three_segment_topology()
        local = [ep(1, 2), ep(1, 3), ep(1, 1)]
        flat = plan_distribution(local, topo, "flat")
        hier = plan_distribution(local, topo, "hierarchical")
        as_set = lambda plan: {(e.source.key, e.target.key, e.link_id) for e in plan.edges}
        assert as_set(flat) == as_set(hier)

    def test_duplicate_itinerary_stops_push_once(self):
        topo = three_segment_topology()
        plan = plan_distribution([ep(2, 2), ep(2, 2), ep(1, 1)], topo, "hierarchical")
        assert len([e for e in plan.edges if e.target == ep(2, 2)]) == 1

    def test_missing_mdm_is_an_error(self):
        topo = Topology(
            segments={"a": [ep(1, 1)], "b": [ep(2, 1)]},
            manager=ep(1, 1),
        )
        with pytest.raises(DistributionError, match="no MDM"):
            plan_distribution([ep(2, 1), ep(1, 1)], topo, "hierarchical")

    def test_unknown_host_rejected(self):
        topo = three_segment_topology()
        with pytest.raises(DistributionError, match="not in the topology"):
            plan_distribution([ep(7, 7)], topo, "flat")

    def test_random_itineraries_match_brute_force_link_counts(self):
        topo = three_segment_topology()
        rng = random.Random(515)
        for _ in range(50):
            itinerary = [rng.choice(ALL_NINE) for _ in range(rng.randint(1, 15))]
            targets = {e.key for e in itinerary} - {topo.manager.key}
            per_segment = {}
            for key in targets:
                seg = topo.segment_of(Endpoint(key[0], key[1]))
                per_segment[seg] = per_segment.get(seg, 0) + 1
            flat = plan_distribution(itinerary, topo, "flat")
            hier = plan_distribution(itinerary, topo, "hierarchical")
            for seg, count in per_segment.items():
                if seg == "seg1":
                    continue
                wan = link_id_for("seg1", seg)
                assert len(flat.edges_on_link(wan)) == count
                assert len(hier.edges_on_link(wan)) == 1
            assert len(flat.edges) == len(targets)
            assert {e.target.key for e in flat.edges} == targets
            assert {e.target.key for e in hier.edges} >= targets - set(
                mdm.key for mdm in topo.mdms.values() if mdm.key not in targets
            )


def live_cluster(topo: Topology, skip=()):
    """Start an in-process agency on every topology host except those in ``skip``."""
    network = InProcNetwork()
    opts = TransportOpts()
    agencies = {}
    for seg, hosts in topo.segments.items():
        for host in hosts:
            if host.key in skip:
                continue
            transport = ModeledTransport(network, host)
            agency = Agency(f"{host.address}", host, transport, opts, topology=topo)
            agency.start()
            agencies[host.key] = agency
    return network, opts, agencies


class TestPush:
    def test_flat_push_installs_everywhere(self):
        topo = three_segment_topology()
        network, opts, agencies = live_cluster(topo)
        image = CodeImage.from_code("MAExample", b"\xaa" * 512)
        try:
            plan = plan_distribution(ALL_NINE, topo, "flat")
            report = push_code(plan, image, agencies[topo.manager.key].transport, opts, topo)
            assert report.all_ok and len(report.acks) == 8
            for agency in agencies.values():
                if agency.bind.key == topo.manager.key:
                    continue
                assert agency.lookup_code("MAExample") is not None
        finally:
            for a in agencies.values():
                a.stop()

    def test_hierarchical_push_covers_all_and_wan_carries_code_once(self):
        topo = three_segment_topology()
        network, opts, agencies = live_cluster(topo)
        image = CodeImage.from_code("MAExample", b"\xbb" * 512)
        push_frame_bytes = len(wire.encode_frame(Frame(
            FrameKind.CODE_PUSH,
            wire.CodePushPayload(image.kind_name, image.digest, image.code).encode(),
        )))
        try:
            plan = plan_distribution(ALL_NINE, topo, "hierarchical")
            report = push_code(plan, image, agencies[topo.manager.key].transport, opts, topo)
            assert report.all_ok and len(report.acks) == 8
            for key, agency in agencies.items():
                if key != topo.manager.key:
                    assert agency.lookup_code("MAExample") is not None
            assert report.per_link["seg1--seg2"].frames == 1
            assert report.per_link["seg1--seg2"].code_bytes == push_frame_bytes
            # instrumented link saw exactly one CODE_PUSH worth of code payload
            code_payload = wire.CodePushPayload(
                image.kind_name, image.digest, image.code
            ).encode()
            assert topo.link("seg1--seg2").stats.code_bytes_sent == len(code_payload)
        finally:
            for a in agencies.values():
                a.stop()

    def test_flat_wan_bytes_are_host_count_times_hierarchical(self):
        image = CodeImage.from_code("MAExample", b"\xcc" * 1024)
        totals = {}
        for mode in ("flat", "hierarchical"):
            topo = three_segment_topology()
            network, opts, agencies = live_cluster(topo)
            try:
                plan = plan_distribution(ALL_NINE, topo, mode)
                report = push_code(plan, image, agencies[topo.manager.key].transport, opts, topo)
                assert report.all_ok
                totals[mode] = topo.link("seg1--seg2").stats.code_bytes_sent
            finally:
                for a in agencies.values():
                    a.stop()
        assert totals["flat"] == 3 * totals["hierarchical"]

    def test_one_silent_target_is_reported_without_aborting(self):
        topo = three_segment_topology()
        down = ep(2, 3).key
        network, opts, agencies = live_cluster(topo, skip={down})
        image = CodeImage.from_code("MAExample", b"\xdd" * 128)
        try:
            plan = plan_distribution(ALL_NINE, topo, "flat")
            report = push_code(plan, image, agencies[topo.manager.key].transport, opts, topo)
            assert not report.all_ok
            assert report.acks[down] is False and down in report.errors
            ok = [k for k, v in report.acks.items() if v]
            assert len(ok) == 7
        finally:
            for a in agencies.values():
                a.stop()

    def test_relay_reports_per_target_failures(self):
        topo = three_segment_topology()
        down = ep(3, 2).key  # behind the seg3 relay
        network, opts, agencies = live_cluster(topo, skip={down})
        image = CodeImage.from_code("MAExample", b"\xee" * 128)
        try:
            plan = plan_distribution(ALL_NINE, topo, "hierarchical")
            report = push_code(plan, image, agencies[topo.manager.key].transport, opts, topo)
            assert not report.all_ok
            assert report.acks[down] is False
            assert report.acks[ep(3, 3).key] is True  # sibling still covered
        finally:
            for a in agencies.values():
                a.stop()

    def test_tampered_image_refused_before_any_send(self):
        topo = three_segment_topology()
        image = CodeImage("MAExample", b"\x00" * 32, b"not matching")
        plan = plan_distribution(ALL_NINE, topo, "flat")
        with pytest.raises(Exception, match="digest"):
            push_code(plan, image, None, TransportOpts(), topo)
