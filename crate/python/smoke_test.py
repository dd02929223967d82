"""Smoke test for the primesim Python bindings.

Build first: pip install --no-build-isolation -e crates/py
Run: python3 python/smoke_test.py
"""

import itertools
import json

import primesim


def check_entropy():
    gen = primesim.EvGenerator([4, 2], seed=7)
    assert gen.counts == [4, 2]
    assert gen.path_count == 8
    first_round = gen.take(8)
    # One round of the generator visits every path exactly once.
    assert sorted(map(tuple, first_round)) == list(itertools.product(range(4), range(2)))
    for i in range(8):
        ev = primesim.ev_from_index(i, [4, 2])
        assert primesim.ev_index(ev, [4, 2]) == i
    # Hosts under one leaf share a single path with no entropy parts.
    assert primesim.EvGenerator([]).path_count == 1
    try:
        primesim.EvGenerator([4, 0])
    except ValueError:
        pass
    else:
        raise AssertionError("zero-width part accepted")


def check_history():
    h = primesim.CongestionHistory(8, p_ecn=9, p_nack=65)
    assert len(h) == 8 and h.all_clear()
    h.on_ecn(2)
    h.on_nack(5)
    assert h.penalty(2) == 9 and h.penalty(5) == 65
    assert h.least_penalized([2, 5]) == 2
    for _ in range(h.ticks_to_clear(65)):
        h.decay()
    assert h.all_clear()
    try:
        h.on_nack(8)
    except ValueError:
        pass
    else:
        raise AssertionError("out-of-range path accepted")


def check_topology():
    info = primesim.topology_info(3, 128, 8)
    assert info["hosts"] == 128
    assert info["tiers"] == 3
    assert len(info["part_widths"]) == 2


def check_run():
    scenario = {
        "version": 1,
        "name": "smoke",
        "seed": 1,
        "custom": True,
        "topology": {"tiers": 2, "hosts": 16, "switch_ports": 8},
        "link": {"bandwidth_gbps": 400, "delay_ns": 600},
        "traffic": {"pattern": "permutation", "flow_bytes": 262144},
    }
    text = json.dumps(scenario)
    primesim.validate_scenario(text)
    a = primesim.run_scenario(text, seed=3)
    b = primesim.run_scenario(text, seed=3)
    assert a == b
    assert len(a["flows"]) == 16
    assert a["summary"]["complete"]
    bad = dict(scenario, balancer={"sprayed": "LETFLOW"})
    try:
        primesim.validate_scenario(json.dumps(bad))
    except ValueError:
        pass
    else:
        raise AssertionError("unknown balancer accepted")


if __name__ == "__main__":
    check_entropy()
    check_history()
    check_topology()
    check_run()
    print("smoke test OK")
