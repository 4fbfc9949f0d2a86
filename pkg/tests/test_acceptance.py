"""Release acceptance checks, one test per shipping criterion.

Each test prints a single PASS or FAIL line with its measurements; run
``pytest tests/test_acceptance.py -v -s`` to see them all.
"""

import random
import time
from pathlib import Path

import numpy as np

from teeguard.audio import (
    SAMPLE_MAX,
    SAMPLE_MIN,
    GeneratorConfig,
    I2sBitstream,
    MalformedStream,
    decode_bitstream,
    encode_frames,
    make_labeled_corpus,
)
from teeguard.cloud import MockCloud
from teeguard.driver import SecureAudioDriver
from teeguard.pipeline import PipelineConfig, run_pipeline
from teeguard.pta import (
    MemRefParam,
    NoneParam,
    PtaCommand,
    PtaResponse,
    PtaStatus,
    ValueParam,
    decode_command,
    decode_response,
    encode_command,
    encode_response,
)
from teeguard.relay import (
    FilterAction,
    FilterPolicy,
    RecordingTransport,
    RelayPacket,
    decode_frame,
    encode_frame,
)
from teeguard.sense import (
    ARCHITECTURES,
    TrainConfig,
    evaluate,
    init_attention,
    init_cnn,
    init_hybrid,
    train,
    trainable_params,
)
from teeguard.sense.training import group_by_length, loss_and_gradients, min_length
from teeguard.tcbtrace import build_task_graphs, emit_report, minimal_set, parse_trace
from teeguard.tee import (
    AccessMode,
    AccessViolation,
    AddressSpaceController,
    Decision,
    Memory,
    OverlapError,
    RegionOwner,
    World,
)
from teeguard.words import Label, keyword_label

DATA = Path(__file__).parent / "data"


def verdict(criterion: str, ok: bool, detail: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'}: {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


# -- 1: no sensitive payload ever reaches the cloud under the drop policy ---------


def test_no_sensitive_payload_reaches_the_cloud():
    keywords = GeneratorConfig().keywords
    delivered = 0
    leaked = 0
    started = time.perf_counter()
    for run in range(10):
        with MockCloud() as cloud:
            config = PipelineConfig(
                seed=run,
                utterances=1000,
                endpoint=cloud.address,
                policy=FilterPolicy(action=FilterAction.DROP),
            )
            result = run_pipeline(config)
            texts = [packet.payload.decode("utf-8") for packet in cloud.received()]
        assert len(texts) == result.metrics.forwarded
        assert result.metrics.sensitive > 0  # the generator did produce secrets
        delivered += len(texts)
        leaked += sum(1 for t in texts if keyword_label(t, keywords) is Label.SENSITIVE)
    elapsed = time.perf_counter() - started
    verdict(
        "leak-freedom",
        leaked == 0 and elapsed < 30.0,
        f"10 runs x 1000 utterances, {delivered} delivered, "
        f"{leaked} sensitive leaked, {elapsed:.1f}s",
    )


# -- 2: access decisions match a per-byte oracle; the driver buffer stays sealed ---


def secure_byte_map(asc: AddressSpaceController, space: int) -> np.ndarray:
    secure = np.zeros(space, dtype=bool)
    for region in asc.regions:
        if region.owner is RegionOwner.SECURE_ONLY:
            secure[region.base : region.end] = True
    return secure


def oracle_decision(secure: np.ndarray, world: World, base: int, length: int) -> Decision:
    if world is World.SECURE:
        return Decision.ALLOW
    return Decision.DENY if secure[base : base + length].any() else Decision.ALLOW


def test_access_control_matches_byte_oracle():
    rng = np.random.default_rng(0x7EE)
    space = 1 << 16
    checks = 0
    mismatches = 0
    for _ in range(40):
        asc = AddressSpaceController()
        for _ in range(12):
            base = int(rng.integers(0, space - 1))
            length = int(min(rng.integers(1, 4096), space - base))
            try:
                if rng.random() < 0.6:
                    asc.carve_secure_region(base, length)
                else:
                    owner = RegionOwner.SHARED if rng.random() < 0.5 else RegionOwner.NORMAL_ONLY
                    asc.map_region(base, length, owner)
            except OverlapError:
                pass
        secure = secure_byte_map(asc, space)
        for _ in range(150):
            base = int(rng.integers(0, space - 1))
            length = int(min(rng.integers(1, 2048), space - base))
            mode = AccessMode.READ if rng.random() < 0.5 else AccessMode.WRITE
            for world in (World.SECURE, World.NORMAL):
                got = asc.check_access(world, base, length, mode)
                checks += 1
                mismatches += got is not oracle_decision(secure, world, base, length)

    asc = AddressSpaceController()
    memory = Memory(asc)
    driver = SecureAudioDriver(asc, memory, capacity=64)
    base, length = driver.buffer_range
    probe_rng = np.random.default_rng(0x5EA1)
    mutations = 0
    sealed = True
    for _ in range(300):
        if probe_rng.random() < 0.6 or driver.occupancy() == 0:
            n = int(probe_rng.integers(1, 49))
            samples = probe_rng.integers(SAMPLE_MIN, SAMPLE_MAX + 1, size=(n, 2), dtype=np.int16)
            driver.ingest(encode_frames(samples))
        else:
            driver.read_block(
                int(probe_rng.integers(1, driver.occupancy() + 1)),
                World.SECURE,
                _secure_ctx(),
            )
        mutations += 1
        sealed &= asc.check_access(World.NORMAL, base, length) is Decision.DENY
        offset = int(probe_rng.integers(0, length))
        sealed &= asc.check_access(World.NORMAL, base + offset, 1) is Decision.DENY
        try:
            memory.read(World.NORMAL, base + offset, 1)
        except AccessViolation:
            pass
        else:
            sealed = False
    verdict(
        "isolation",
        mismatches == 0 and sealed and checks >= 10_000,
        f"{checks} oracle checks, {mismatches} mismatches; "
        f"driver buffer denied to the normal world after {mutations} mutations",
    )


def _secure_ctx():
    from teeguard.tee import WorldContext

    return WorldContext()


# -- 3: codec identity on random and corner frames; mutants never decode ----------


def test_codec_identity_and_mutant_rejection():
    rng = np.random.default_rng(0x125)
    extremes = (SAMPLE_MIN, SAMPLE_MIN + 1, -1, 0, 1, SAMPLE_MAX - 1, SAMPLE_MAX)
    corners = np.array(
        [(left, right) for left in extremes for right in extremes], dtype=np.int16
    )
    bulk = rng.integers(SAMPLE_MIN, SAMPLE_MAX + 1, size=(100_000, 2), dtype=np.int16)
    frames = np.concatenate([bulk, corners])
    identity_ok = np.array_equal(decode_bitstream(encode_frames(frames)), frames)

    mutants = 0
    false_accepts = 0
    for _ in range(300):
        n = int(rng.integers(1, 9))
        samples = rng.integers(SAMPLE_MIN, SAMPLE_MAX + 1, size=(n, 2), dtype=np.int16)
        stream = encode_frames(samples)
        total = len(stream.ws)

        flipped = stream.ws.copy()
        flipped[int(rng.integers(0, total))] ^= 1
        poisoned = stream.sd.copy()
        poisoned[int(rng.integers(0, total))] = 2
        cut = int(rng.integers(1, 32))
        shift = int(rng.integers(1, 32))
        broken = (
            I2sBitstream(ws=stream.ws[:-cut], sd=stream.sd[:-cut]),  # torn mid-frame
            I2sBitstream(ws=flipped, sd=stream.sd),  # ws run length broken
            I2sBitstream(ws=np.roll(stream.ws, shift), sd=stream.sd),  # ws phase error
            I2sBitstream(ws=stream.ws, sd=poisoned),  # non-binary level
        )
        for mutant in broken:
            mutants += 1
            try:
                decode_bitstream(mutant)
            except MalformedStream:
                pass
            else:
                false_accepts += 1
    verdict(
        "codec",
        identity_ok and false_accepts == 0 and mutants >= 1000,
        f"{len(frames)} frames round-tripped ({'ok' if identity_ok else 'CORRUPT'}); "
        f"{mutants} mutants, {false_accepts} falsely accepted",
    )


# -- 4: analytic gradients match central differences on random draws --------------


def sampled_gradcheck(model, rng: np.random.Generator, step: float = 1e-5) -> float:
    vocab = trainable_params(model)["embedding"].shape[0]
    lengths = [int(n) for n in rng.integers(1, 7, size=4)]
    token_lists = [[int(t) for t in rng.integers(0, vocab, n)] for n in lengths]
    labels = [Label.SENSITIVE if i % 2 else Label.BENIGN for i in range(len(lengths))]
    grouped = group_by_length(token_lists, labels, min_length(model))
    count = len(token_lists)

    _, grads = loss_and_gradients(model, grouped, count)
    worst = 0.0
    for name, param in trainable_params(model).items():
        flat = param.reshape(-1)
        analytic = grads[name].reshape(-1)
        picks = rng.choice(flat.size, size=min(flat.size, 6), replace=False)
        for i in (int(p) for p in picks):
            saved = flat[i]
            flat[i] = saved + step
            plus, _ = loss_and_gradients(model, grouped, count)
            flat[i] = saved - step
            minus, _ = loss_and_gradients(model, grouped, count)
            flat[i] = saved
            numeric = (plus - minus) / (2.0 * step)
            scale = max(1e-6, abs(numeric), abs(analytic[i]))
            worst = max(worst, abs(numeric - analytic[i]) / scale)
    return worst


def test_gradients_match_finite_differences_on_random_draws():
    rng = np.random.default_rng(0x9ADD)
    draws = 0
    worst = 0.0
    for architecture in ARCHITECTURES:
        for _ in range(20):
            vocab = int(rng.integers(3, 21))
            dim = int(rng.integers(2, 9))
            filters = int(rng.integers(1, 5))
            width = int(rng.integers(1, 4))
            init_rng = np.random.default_rng(int(rng.integers(0, 1 << 32)))
            if architecture == "cnn":
                model = init_cnn(vocab, dim, filters, width, init_rng)
            elif architecture == "attention":
                model = init_attention(vocab, dim, init_rng)
            else:
                model = init_hybrid(vocab, dim, filters, width, init_rng)
            worst = max(worst, sampled_gradcheck(model, rng))
            draws += 1
    verdict(
        "gradients",
        worst < 1e-4 and draws == 60,
        f"{draws} random draws over {len(ARCHITECTURES)} architectures, "
        f"worst relative error {worst:.2e}",
    )


# -- 5: trained classifiers clear their accuracy floors on held-out data ----------


def test_trained_classifiers_reach_target_accuracy():
    corpus = make_labeled_corpus(GeneratorConfig(), seed=41, count=1000)
    train_set, held_out = corpus[:800], corpus[800:]
    floors = {"cnn": (1.0, 0.95), "attention": (2.0, 0.90), "hybrid": (2.0, 0.90)}
    ok = True
    parts = []
    for architecture, (rate, floor) in floors.items():
        started = time.perf_counter()
        result = train(
            architecture, train_set, TrainConfig(learning_rate=rate, epochs=400)
        )
        accuracy = evaluate(result.model, result.vocab, held_out)
        elapsed = time.perf_counter() - started
        ok = ok and accuracy >= floor and elapsed < 120.0
        parts.append(f"{architecture} {accuracy:.3f} (floor {floor}, {elapsed:.0f}s)")
    verdict("classifier", ok, "800 train / 200 held out: " + ", ".join(parts))


# -- 6: required-function analysis equals independent reachability ----------------


def random_balanced_trace(rng: random.Random) -> list[str]:
    functions = [f"fn{i}" for i in range(rng.randint(3, 50))]
    tasks = [f"task{i}" for i in range(rng.randint(1, 3))]
    lines: list[str] = []
    clock = 0

    def emit(task: str, direction: str, function: str) -> None:
        nonlocal clock
        lines.append(f"{clock} {direction} {function} {task}")
        clock += rng.randint(1, 3)

    def call(task: str, depth: int) -> None:
        function = rng.choice(functions)
        emit(task, "E", function)
        while depth < 4 and rng.random() < 0.45:
            call(task, depth + 1)
        emit(task, "X", function)

    for task in tasks:
        for _ in range(rng.randint(1, 4)):
            call(task, 0)
    return lines


def independent_reachability(lines: list[str]) -> dict[str, set[str]]:
    """Stack replay and breadth-first closure written against the raw lines."""
    stacks: dict[str, list[str]] = {}
    adjacency: dict[str, dict[str, set[str]]] = {}
    roots: dict[str, set[str]] = {}
    for line in lines:
        _, direction, function, task = line.split()
        stack = stacks.setdefault(task, [])
        if direction == "E":
            if stack:
                adjacency.setdefault(task, {}).setdefault(stack[-1], set()).add(function)
            else:
                roots.setdefault(task, set()).add(function)
            stack.append(function)
        else:
            stack.pop()
    result: dict[str, set[str]] = {}
    for task in stacks:
        seen = set(roots.get(task, set()))
        queue = list(seen)
        while queue:
            function = queue.pop(0)
            for callee in adjacency.get(task, {}).get(function, ()):
                if callee not in seen:
                    seen.add(callee)
                    queue.append(callee)
        result[task] = seen
    return result


def test_minimal_set_matches_independent_reachability():
    rng = random.Random(0x7CB)
    traces = 0
    mismatches = 0
    for _ in range(500):
        lines = random_balanced_trace(rng)
        graphs = build_task_graphs(parse_trace("\n".join(lines) + "\n"))
        oracle = independent_reachability(lines)
        tasks = sorted(oracle)
        subset = [t for t in tasks if rng.random() < 0.5] or tasks[:1]
        for chosen in (tasks, subset):
            expected = set().union(*(oracle[t] for t in chosen))
            mismatches += minimal_set(graphs, chosen) != expected
        traces += 1

    trace_text = (DATA / "session.trace").read_text()
    inventory = [
        line.strip()
        for line in (DATA / "inventory.txt").read_text().splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    ]
    graphs = build_task_graphs(parse_trace(trace_text))
    report = emit_report(inventory, minimal_set(graphs, ["record"]))
    fixture_ok = f"{report.reduction_ratio:.4f}" == "0.4167"
    verdict(
        "tcb-analysis",
        mismatches == 0 and fixture_ok and traces == 500,
        f"{traces} random traces, {mismatches} mismatches; "
        f"fixture ratio {report.reduction_ratio:.4f}",
    )


# -- 7: world-switch and cost accounting are exact ---------------------------------


def test_world_switch_accounting_is_exact():
    cases = [(0, FilterAction.DROP), (1, FilterAction.DROP), (3, FilterAction.MASK), (7, FilterAction.MASK)]
    exact = True
    parts = []
    for seed, (cost, action) in enumerate(cases):
        transport = RecordingTransport()
        config = PipelineConfig(
            seed=seed,
            utterances=200,
            cost_per_switch=cost,
            policy=FilterPolicy(action=action),
        )
        metrics = run_pipeline(config, transport=transport).metrics
        exact = exact and metrics.switches == 2 * metrics.forwarded
        exact = exact and metrics.cost_units == metrics.switches * cost
        exact = exact and metrics.forwarded == len(transport.packets)
        parts.append(f"cost {cost}: {metrics.switches}=2x{metrics.forwarded}")
    verdict("switch-accounting", exact, "; ".join(parts))


# -- 8: command, response and frame serialization round-trip byte-exactly ----------


def test_wire_formats_round_trip():
    rng = random.Random(0x317E)

    def random_param():
        kind = rng.randrange(3)
        if kind == 0:
            return NoneParam()
        if kind == 1:
            return ValueParam(rng.randrange(1 << 32), rng.randrange(1 << 32))
        return MemRefParam(rng.randrange(1 << 32), rng.randrange(1 << 16), rng.randrange(1 << 16))

    messages = 0
    failures = 0
    for _ in range(4000):
        command = PtaCommand(
            rng.randrange(1 << 32),
            rng.randrange(1 << 32),
            tuple(random_param() for _ in range(rng.randrange(5))),
        )
        wire = encode_command(command)
        back = decode_command(wire)
        messages += 1
        failures += not (back == command and encode_command(back) == wire and len(wire) == 56)
    for _ in range(4000):
        status = PtaStatus(rng.randrange(len(PtaStatus)))
        params = (
            tuple(random_param() for _ in range(rng.randrange(5)))
            if status is PtaStatus.OK
            else ()
        )
        response = PtaResponse(status, params)
        wire = encode_response(response)
        back = decode_response(wire)
        messages += 1
        failures += not (back == response and encode_response(back) == wire and len(wire) == 52)
    for _ in range(4000):
        packet = RelayPacket(
            rng.randrange(1 << 32), rng.randrange(1 << 32), rng.randbytes(rng.randrange(400))
        )
        wire = encode_frame(packet)
        back = decode_frame(wire)
        messages += 1
        failures += not (back == packet and encode_frame(back) == wire)
    verdict(
        "wire-formats",
        failures == 0 and messages >= 10_000,
        f"{messages} random messages, {failures} round-trip failures",
    )


# -- 9: identical configuration and seed reproduce the run bit for bit -------------


def test_identical_configs_reproduce_runs():
    def one_run():
        with MockCloud() as cloud:
            config = PipelineConfig(
                seed=23,
                utterances=300,
                endpoint=cloud.address,
                cost_per_switch=2,
                policy=FilterPolicy(action=FilterAction.MASK),
            )
            result = run_pipeline(config)
            payloads = [bytes(packet.payload) for packet in cloud.received()]
        metrics = result.metrics.to_dict()
        metrics.pop("latency_us")
        return metrics, payloads

    first_metrics, first_payloads = one_run()
    second_metrics, second_payloads = one_run()
    same = first_metrics == second_metrics and first_payloads == second_payloads
    verdict(
        "determinism",
        same,
        f"two runs of 300 utterances: metrics {'match' if first_metrics == second_metrics else 'differ'}, "
        f"{len(first_payloads)} vs {len(second_payloads)} payloads "
        f"{'identical' if first_payloads == second_payloads else 'DIFFER'}",
    )
