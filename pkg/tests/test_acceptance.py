"""End-to-end acceptance checks, one test per criterion.

Each test records a pass/fail line through the ``criterion`` fixture; the lines
are printed as they finish and again in the terminal summary.
"""
from __future__ import annotations

import gc
import random
import time
import tracemalloc

import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from desco import OperationAborted, Simulation, TaskState, yield_now
from desco.combinators import AllOutcome, RaceOutcome, all_of, any_of, chain, pure
from desco.interop import rip, run_original
from desco.net import Network, Packet, build_topology
from desco.protocols.allreduce import MAX, SUM, World, naive_allreduce_oracle, ring_allreduce, ring_completion_time
from desco.protocols.allreduce_callback import ring_allreduce_callbacks
from desco.protocols.fetch_send import FetchSendConfig, compare_styles, default_config, run_fetch_send
from desco.protocols.rip import INFINITY, RipDomain, RipTimers, oracle_distances
from desco.scenario import parse_scenario, run_scenario
from desco.tasks import FrameMonitor, sleep, spawn
from desco.trace import Tracer

from test_hpcc_pfc import check_pause_schedule, pause_schedules
from test_interop import registrar_specs, round_trip_observations

GBPS = 1_000_000_000

# Upper bound on traced allocation for the 10^5-task stress run, in bytes per
# task.  Measured at about 2.4 KB; documented in the README.
STRESS_TASKS = 100_000
STRESS_BYTES_PER_TASK = 3_000
STRESS_MEMORY_CEILING = STRESS_TASKS * STRESS_BYTES_PER_TASK


# -- 1: kernel determinism ----------------------------------------------------


def _ring_links(names, rng):
    pairs = [(names[i], names[(i + 1) % len(names)]) for i in range(len(names))]
    if len(names) == 2:
        pairs = pairs[:1]
    return [{"a": a, "b": b, "latency": rng.randint(100, 2000), "bandwidth": rng.choice([10**8, GBPS, 10 * GBPS])}
            for a, b in pairs]


def _connected_edges(rng, n, max_links):
    edges = {(rng.randrange(v), v) for v in range(1, n)}
    for _ in range(rng.randint(0, max(0, min(max_links, n * (n - 1) // 2) - len(edges)))):
        a, b = rng.sample(range(n), 2)
        edges.add((min(a, b), max(a, b)))
    return sorted(edges)


def random_scenario_doc(rng: random.Random, index: int) -> dict:
    """A random but valid scenario document for one of the four protocols."""
    protocol = rng.choice(["allreduce", "hpcc-pfc", "rip", "fetch-and-send"])
    doc: dict = {"name": f"random-{index}", "protocol": protocol, "seed": rng.randrange(10**6)}
    if protocol == "allreduce":
        names = [f"r{i}" for i in range(rng.randint(2, 6))]
        doc["topology"] = {"nodes": names, "links": _ring_links(names, rng)}
        doc["params"] = {"length": rng.randint(1, 16), "op": rng.choice(["sum", "max"]),
                         "style": rng.choice(["tasks", "callbacks"])}
    elif protocol == "hpcc-pfc":
        hosts = [f"h{i}" for i in range(rng.randint(1, 3))]
        links = [{"a": h, "b": "sw", "latency": rng.randint(100, 2000), "bandwidth": GBPS} for h in hosts]
        links.append({"a": "sw", "b": "dst", "latency": 1000, "bandwidth": GBPS})
        xoff = rng.randint(2, 10)
        doc["topology"] = {"nodes": [*hosts, "sw", "dst"], "links": links}
        doc["params"] = {
            "switches": ["sw"], "xoff": xoff, "xon": rng.randint(1, xoff - 1),
            "quanta": rng.randint(1000, 30000), "low_mark": 1, "high_mark": rng.randint(2, 6),
            "flows": [{"src": h, "dst": "dst", "bytes": rng.randint(1000, 40000),
                       "window": rng.randint(2000, 16000), "start": rng.randint(0, 5000)} for h in hosts],
        }
    elif protocol == "rip":
        n = rng.randint(2, 8)
        edges = _connected_edges(rng, n, 12)
        doc["topology"] = {"nodes": [f"n{i}" for i in range(n)],
                           "links": [{"a": f"n{a}", "b": f"n{b}", "latency": 1000, "bandwidth": GBPS}
                                     for a, b in edges]}
        doc["run"] = {"until": rng.randint(100_000, 500_000)}
        doc["params"] = {"time_unit": 1000, "update_period": 30, "route_timeout": 180, "gc_timeout": 120,
                         "failures": [{"link": rng.randrange(len(edges)), "at": rng.randint(1, 200_000)}]}
    else:
        doc["topology"] = {"nodes": ["app", "store", "sink"], "links": [
            {"a": "app", "b": "store", "latency": rng.randint(100, 2000), "bandwidth": GBPS},
            {"a": "app", "b": "sink", "latency": rng.randint(100, 2000), "bandwidth": GBPS}]}
        doc["params"] = {
            "store_delay": rng.randint(0, 10000), "data_bytes": rng.randint(1, 4000),
            "style": rng.choice(["tasks", "callbacks"]),
            "keys": [{"key": f"k{i}", "source": rng.choice(["local", "remote"]), "value": rng.randint(0, 99)}
                     for i in range(rng.randint(1, 10))],
        }
    return doc


def test_criterion_01_kernel_determinism(criterion):
    with criterion(1, "kernel determinism: 100 random scenarios x 3 runs give identical digests") as c:
        rng = random.Random(20240901)
        start = time.perf_counter()
        protocols = {}
        for i in range(100):
            scenario = parse_scenario(yaml.safe_dump(random_scenario_doc(rng, i)), f"random-{i}.yaml")
            protocols[scenario.protocol] = protocols.get(scenario.protocol, 0) + 1
            digests = {run_scenario(scenario, keep_trace=False).digest for _ in range(3)}
            assert len(digests) == 1, f"scenario {i} produced {len(digests)} digests"
        elapsed = time.perf_counter() - start
        c.note(f"{elapsed:.1f} s, {dict(sorted(protocols.items()))}")
        assert elapsed < 60


# -- 2: task-state machine ----------------------------------------------------


def _random_workload(sim: Simulation, rng: random.Random, n_tasks: int) -> list:
    """Spawn ``n_tasks`` tasks mixing sleeps, yields, awaits, failures and aborts."""
    handles = []

    async def child(d):
        await sleep(sim, d)
        return d

    async def worker(plan, prev):
        for step, arg in plan:
            if step == "yield":
                await yield_now()
            elif step == "sleep":
                await sleep(sim, arg)
            elif step == "fail":
                raise RuntimeError("planned")
            elif step == "child":
                await spawn(sim, child(arg))
            elif step == "await" and prev is not None:
                try:
                    await prev
                except (OperationAborted, RuntimeError):
                    pass
        return len(plan)

    steps = ["yield", "sleep", "sleep", "fail", "child", "await"]
    for _ in range(n_tasks):
        plan = [(rng.choice(steps), rng.randint(0, 50)) for _ in range(rng.randint(0, 5))]
        prev = handles[-1].retain() if handles and rng.random() < 0.5 else None
        h = spawn(sim, worker(plan, prev))
        handles.append(h)
        if rng.random() < 0.2:
            sim.schedule(rng.randint(0, 60), h.frame.abort)
    return handles


def test_criterion_02_task_state_machine(criterion):
    with criterion(2, "task-state machine: no illegal transitions, double frees or leaks over 10^4 tasks") as c:
        rng = random.Random(7)
        total = illegal = double = leaked = 0
        for _ in range(50):
            sim = Simulation()
            mon = FrameMonitor()
            sim.frame_monitor = mon
            handles = _random_workload(sim, rng, 200)
            sim.run_to_completion()
            for h in handles:
                h.release()
            handles.clear()
            gc.collect()
            total += mon.created
            illegal += len(mon.illegal())
            double += sum(1 for n in mon.frees.values() if n != 1)
            leaked += (mon.created - len(mon.frees)) + sim.live_frames()
        c.note(f"{total} frames, {illegal} illegal, {double} double-freed, {leaked} leaked")
        assert total >= 10_000
        assert illegal == double == leaked == 0


# -- 3: locals preserved across suspension ------------------------------------

suspension_steps = st.lists(
    st.one_of(
        st.just(("yield", 0)),
        st.tuples(st.just("sleep"), st.integers(0, 20)),
        st.tuples(st.just("child"), st.integers(0, 20)),
        st.tuples(st.just("race"), st.integers(0, 20)),
    ),
    min_size=1, max_size=6,
)


def test_criterion_03_locals_survive_suspension(criterion):
    cases = []

    @settings(max_examples=1000, database=None)
    @given(st.lists(st.integers(), min_size=1, max_size=8), st.text(max_size=8), suspension_steps)
    def check(values, label, plan):
        sim = Simulation()

        async def child(d):
            await sleep(sim, d)
            return d

        async def body():
            numbers = list(values)
            text = label
            frozen = tuple(values)
            for step, arg in plan:
                if step == "yield":
                    await yield_now()
                elif step == "sleep":
                    await sleep(sim, arg)
                elif step == "child":
                    await spawn(sim, child(arg))
                else:
                    await any_of(sim, [spawn(sim, child(arg)), spawn(sim, child(arg + 1))])
            return numbers, text, frozen

        h = spawn(sim, body())
        sim.run_to_completion()
        assert h.result() == (values, label, tuple(values))
        cases.append(1)

    with criterion(3, "locals survive any suspension mix (>=1000 cases)") as c:
        check()
        c.note(f"{len(cases)} cases")
        assert len(cases) >= 1000


# -- 4: race and join ---------------------------------------------------------


async def _finish_after(sim, d, value, fail):
    await sleep(sim, d)
    if fail:
        raise RuntimeError(f"fail@{d}")
    return value


def test_criterion_04_race_and_join(criterion):
    counts = {"race": 0, "join": 0}
    entries = st.lists(st.tuples(st.integers(0, 30), st.booleans()), min_size=1, max_size=8)

    @settings(max_examples=500, database=None)
    @given(st.lists(st.integers(0, 30), min_size=1, max_size=8))
    def race(times):
        sim = Simulation()
        ops = [spawn(sim, _finish_after(sim, t, i, False)) for i, t in enumerate(times)]
        spies = [h.retain() for h in ops]
        outcome = any_of(sim, ops)
        leftover = []
        outcome.frame.add_waiter(lambda f: leftover.extend(sim.pending()))
        sim.run_to_completion()
        winner = min(range(len(times)), key=lambda i: (times[i], i))
        assert outcome.result() == RaceOutcome(winner, winner)
        assert sim.now() == times[winner]
        assert spies[winner].state is TaskState.COMPLETED
        assert all(s.state is TaskState.ABORTED for i, s in enumerate(spies) if i != winner)
        assert leftover == [], "orphan kernel events after the race resolved"
        counts["race"] += 1

    @settings(max_examples=500, database=None)
    @given(entries)
    def join(specs):
        sim = Simulation()
        ops = [spawn(sim, _finish_after(sim, t, i, fail)) for i, (t, fail) in enumerate(specs)]
        outcome = all_of(sim, ops)
        leftover = []
        outcome.frame.add_waiter(lambda f: leftover.extend(sim.pending()))
        sim.run_to_completion()
        failures = [(t, i) for i, (t, fail) in enumerate(specs) if fail]
        if failures:
            first_t, first_i = min(failures)
            assert outcome.state is TaskState.FAILED
            assert str(outcome.exception()) == f"fail@{first_t}"
            assert sim.now() == first_t
        else:
            assert outcome.result() == AllOutcome(tuple(range(len(specs))))
            assert sim.now() == max(t for t, _ in specs)
        assert leftover == []
        counts["join"] += 1

    with criterion(4, "any() picks argmin completion with index ties, all() ends at max time in input order") as c:
        race()
        join()
        c.note(f"{counts['race']} races, {counts['join']} joins")


# -- 5: chain laws ------------------------------------------------------------

stage_specs = st.lists(st.tuples(st.sampled_from(["add", "mul", "sub"]), st.integers(-5, 5)), max_size=6)


def _stage(kind, k, calls):
    def fn(x):
        calls.append(kind)
        return {"add": x + k, "mul": x * k, "sub": x - k}[kind]
    return fn


def _apply(specs, x):
    for kind, k in specs:
        x = {"add": x + k, "mul": x * k, "sub": x - k}[kind]
    return x


def test_criterion_05_chain_laws(criterion):
    cases = []

    @settings(max_examples=1000, database=None)
    @given(st.integers(-100, 100), stage_specs, stage_specs)
    def check(x, left, right):
        calls = []
        f = [_stage(kind, k, calls) for kind, k in left]
        g = [_stage(kind, k, calls) for kind, k in right]
        nested = chain(chain(pure(x), *f), *g)
        flat = chain(pure(x), *f, *g)
        assert calls == [], "a stage ran before the chain was awaited"
        expected = _apply(left + right, x)
        for c in (nested, flat):
            sim = Simulation()
            h = spawn(sim, c)
            sim.run_to_completion()
            assert h.result() == expected
        # each stage ran exactly once per awaited chain
        assert len(calls) == 2 * (len(left) + len(right))
        cases.append(1)

    with criterion(5, "chain associativity and laziness (>=1000 random chains)") as c:
        check()
        c.note(f"{len(cases)} chains")
        assert len(cases) >= 1000


# -- 6: interop equivalence ---------------------------------------------------


def test_criterion_06_interop_equivalence(criterion):
    counts = {"fetch-send": 0, "round-trip": 0, "rip": 0}

    def fetch_send_pairs():
        rng = random.Random(11)
        for _ in range(20):
            keys = tuple(f"k{i}" for i in range(rng.randint(1, 30)))
            local = {k: rng.randint(0, 9) for k in keys if rng.random() < 0.5}
            remote = {k: rng.randint(0, 9) for k in keys if k not in local}
            cfg = FetchSendConfig(keys, local, remote, data_bytes=rng.randint(1, 3000),
                                  store_delay=rng.randint(0, 8000))
            seq, cb, divergence = compare_styles(cfg)
            assert divergence is None, divergence
            assert seq.delivered == cb.delivered and seq.completed_at == cb.completed_at
            counts["fetch-send"] += 1

    @settings(max_examples=200, database=None)
    @given(registrar_specs)
    def round_trip(spec):
        assert round_trip_observations(spec, True) == round_trip_observations(spec, False)
        counts["round-trip"] += 1

    @settings(max_examples=200, database=None)
    @given(st.integers(-50, 50), st.integers(-50, 50), st.integers(0, 100), st.lists(st.integers(0, 100), max_size=4))
    def rip_pairs(a, b, delay, background):
        def setup(sim):
            for t in background:
                sim.schedule(t, lambda: None)

        async def body(sim):
            total = a * 2
            await sleep(sim, delay)
            return total + b

        pair = rip(body, lambda sim: {"total": a * 2}, delay, lambda sim, s: s["total"] + b, setup=setup)
        assert pair.external_state == {"total": a * 2}
        assert run_original(body, setup=setup).result == a * 2 + b
        counts["rip"] += 1

    with criterion(6, "callback and task styles trace-equal; round trips and ripped pairs equal") as c:
        fetch_send_pairs()
        round_trip()
        rip_pairs()
        c.note(", ".join(f"{n} {k}" for k, n in counts.items()))
        assert counts["round-trip"] >= 100


# -- 7: allreduce -------------------------------------------------------------


def _ring(n, latency, bandwidth):
    sim = Simulation()
    links = [{"a": i, "b": (i + 1) % n, "latency": latency, "bandwidth": bandwidth} for i in range(n)]
    net = Network(sim, build_topology(n, links if n > 2 else links[:1]))
    return sim, net


def test_criterion_07_allreduce(criterion):
    with criterion(7, "allreduce equals fold oracle; closed-form completion for equal chunks") as c:
        rng = random.Random(3)
        start = time.perf_counter()
        closed_form = 0
        for case in range(240):
            n = rng.randint(2, 16)
            length = rng.randint(1, 64)
            op = SUM if case % 2 == 0 else MAX
            latency = rng.choice([100, 1000, 5000])
            bandwidth = rng.choice([10**8, GBPS, 10 * GBPS])
            inputs = [[rng.randint(-1000, 1000) for _ in range(length)] for _ in range(n)]
            sim, net = _ring(n, latency, bandwidth)
            handles = ring_allreduce(net, World(tuple(range(n)), length), inputs, op)
            sim.run_to_completion()
            expected = naive_allreduce_oracle(inputs, op)
            assert all(h.result() == expected for h in handles), f"case {case}: N={n} L={length} {op.name}"
            if length % n == 0:
                serialization = net.topology.links[0].config.serialization(8 * (length // n))
                assert sim.now() == ring_completion_time(n, latency, serialization), f"case {case}"
                closed_form += 1
        elapsed = time.perf_counter() - start
        c.note(f"240 cases, {closed_form} closed-form checks, {elapsed:.1f} s")
        assert closed_form > 0 and elapsed < 30


# -- 8: PFC -------------------------------------------------------------------


def test_criterion_08_pfc(criterion):
    counts = {"schedules": 0, "refresh": 0}

    @settings(max_examples=1000, database=None)
    @given(pause_schedules)
    def schedules(frames):
        check_pause_schedule(frames)
        counts["schedules"] += 1

    @settings(max_examples=300, database=None)
    @given(st.integers(1, 5000), st.integers(0, 5000), st.integers(0, 5000))
    def refresh(first, refresh_at, second):
        # a refresh replaces the deadline: resume = refresh time + new quanta
        sim = Simulation()
        net = Network(sim, build_topology(2, [{"a": 0, "b": 1, "latency": 100, "bandwidth": GBPS}]))
        net.pause_priority(0, 0, 3, first)
        refresh_at = min(refresh_at, first - 1)
        sim.schedule(refresh_at, lambda: net.pause_priority(0, 0, 3, second))
        starts = []
        net.send_cb(0, 0, Packet(0, 1, 1000, priority=3), lambda d: starts.append(d.time - 8000))
        sim.run_to_completion()
        assert starts == [refresh_at + second]
        counts["refresh"] += 1

    with criterion(8, "PFC schedules: no early dequeue, exact refresh arithmetic, unique guard timers") as c:
        schedules()
        refresh()
        c.note(f"{counts['schedules']} schedules, {counts['refresh']} refresh cases")
        assert counts["schedules"] >= 1000


# -- 9: RIP -------------------------------------------------------------------

RIP_PERIOD = 30_000
RIP_TIMERS = RipTimers(RIP_PERIOD, 6 * RIP_PERIOD, 4 * RIP_PERIOD)


def test_criterion_09_rip(criterion):
    with criterion(9, "RIP converges to the hop-count oracle within 2x diameter periods, and after a cut") as c:
        rng = random.Random(5)
        start = time.perf_counter()
        partitions = 0
        for case in range(60):
            n = rng.randint(2, 20)
            edges = _connected_edges(rng, n, 40)
            sim = Simulation()
            topo = build_topology(n, [{"a": a, "b": b, "latency": 100, "bandwidth": GBPS} for a, b in edges])
            net = Network(sim, topo)
            dom = RipDomain(net, RIP_TIMERS)
            dom.start_all()
            sim.run_until(2 * topo.diameter() * RIP_PERIOD)
            assert dom.converged(), f"case {case}: {dom.mismatches()[:3]}"
            # cut one link, then allow the timeout, the garbage collection and
            # two diameters of the remaining graph
            cut = rng.randrange(len(edges))
            cut_at = sim.now() + 1
            dom.inject_link_failure(cut, cut_at)
            reach = [oracle_distances(net, v, [cut]) for v in range(n)]
            diameter = max(h for dist in reach for h in dist.values() if h < INFINITY)
            if any(len([h for h in dist.values() if h < INFINITY]) < n for dist in reach):
                partitions += 1
            sim.run_until(cut_at + RIP_TIMERS.route_timeout + RIP_TIMERS.gc_timeout
                          + 2 * max(diameter, 1) * RIP_PERIOD)
            assert dom.converged(excluded_links=[cut]), f"case {case} after cut: {dom.mismatches([cut])[:3]}"
            dom.stop()
        elapsed = time.perf_counter() - start
        c.note(f"60 topologies, {partitions} cuts partition the graph, {elapsed:.1f} s")
        assert elapsed < 60


# -- 10: overhead substitute --------------------------------------------------


def _allreduce_pair(style, n=16, length=4096):
    sim = Simulation(tracer=Tracer(keep=False))
    links = [{"a": i, "b": (i + 1) % n, "latency": 1000, "bandwidth": GBPS} for i in range(n)]
    net = Network(sim, build_topology(n, links))
    world = World(tuple(range(n)), length)
    inputs = [[r] * length for r in range(n)]
    t0 = time.perf_counter()
    if style == "tasks":
        ring_allreduce(net, world, inputs)
    else:
        ring_allreduce_callbacks(net, world, inputs)
    stats = sim.run_to_completion()
    return stats.final_time, stats.events_executed, time.perf_counter() - t0, sim.tracer.digest()


def _fetch_send_pair(style, cfg):
    run = run_fetch_send(cfg, style, tracer=Tracer(keep=False))
    return run.completed_at, run.stats.events_executed, run.wall_seconds, run.stats


def _stress_peak(n_tasks):
    gc.collect()
    tracemalloc.start()
    sim = Simulation()

    async def body(i):
        await sleep(sim, i % 997)
        return i

    for i in range(n_tasks):
        spawn(sim, body(i)).release()
    sim.run_to_completion()
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    return peak, sim.live_frames()


def test_criterion_10_overhead(criterion):
    with criterion(10, "paired runs equal in time and events, wall-clock within 25%, stress run under ceiling") as c:
        cfg = default_config(tuple(f"k{i}" for i in range(2000)))
        best: dict[tuple[str, str], float] = {}
        for _ in range(5):
            # interleaved, keeping the fastest of each to damp machine noise
            for style in ("tasks", "callbacks"):
                # start each timed run from a clean heap so earlier tests' garbage is not billed to it
                gc.collect()
                done, events, wall, _ = _fetch_send_pair(style, cfg)
                best[("fetch-send", style)] = min(best.get(("fetch-send", style), wall), wall)
                best[("fetch-send-sim", style)] = (done, events)
                gc.collect()
                done, events, wall, digest = _allreduce_pair(style)
                best[("allreduce", style)] = min(best.get(("allreduce", style), wall), wall)
                best[("allreduce-sim", style)] = (done, events, digest)
        assert best[("fetch-send-sim", "tasks")] == best[("fetch-send-sim", "callbacks")]
        assert best[("allreduce-sim", "tasks")] == best[("allreduce-sim", "callbacks")]

        peak, live = _stress_peak(STRESS_TASKS)
        c.note(f"stress peak {peak / 2**20:.0f} MiB = {peak / STRESS_TASKS:.0f} B/task, "
               f"ceiling {STRESS_BYTES_PER_TASK} B/task")

        ratios = {}
        for name in ("fetch-send", "allreduce"):
            ratios[name] = best[(name, "tasks")] / best[(name, "callbacks")]
            c.note(f"{name} tasks/callbacks wall {ratios[name]:.2f}")
        assert live == 0
        assert peak <= STRESS_MEMORY_CEILING
        for name, ratio in ratios.items():
            assert 0.75 <= ratio <= 1.25, f"{name} wall-clock ratio {ratio:.2f} outside 0.75..1.25"
