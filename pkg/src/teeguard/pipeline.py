"""End-to-end pipeline: microphone capture to redacted cloud upload.

Three workers connected by bounded queues mirror the runtime split: a
capture/encode producer, an ingest worker feeding the secure ring, and the
trusted-side consumer that reads blocks through the PTA, classifies,
filters and relays.  Ring space is reserved ahead of each ingest, so the
driver never overruns and runs are reproducible for a given seed.
"""

from __future__ import annotations

import queue
import threading
import time
from collections.abc import Callable
from dataclasses import dataclass, field

from . import tee
from .audio import (
    GeneratorConfig,
    MicrophoneSource,
    encode_frames,
    filler_vocabulary,
    make_labeled_corpus,
)
from .driver import FRAME_BYTES, HEADER, EncodedBlock, SecureAudioDriver
from .pta import (
    CMD_GET_STATUS,
    CMD_READ_AUDIO,
    MEMREF_FIELD_LIMIT,
    MemRefParam,
    PtaBridge,
    PtaCommand,
    PtaStatus,
    ValueParam,
)
from .relay import (
    ACK_OK,
    FilterPolicy,
    RedactionLog,
    RedactionRecord,
    RelayPacket,
    SecureChannel,
    Supplicant,
    TcpTransport,
    apply_policy,
    encode_frame,
)
from .sense import (
    TrainConfig,
    Transcript,
    Verdict,
    Vocab,
    classify,
    load_corpus,
    load_model,
    train,
    transcribe,
)
from .words import Label, keyword_label

ARCHITECTURE_CHOICES = ("oracle", "cnn", "attention", "hybrid")
_ANNEX_HEADROOM = 2048  # output buffer slack for the attached transcript


class PipelineError(RuntimeError):
    def __init__(self, stage: str, detail: object):
        super().__init__(f"stage {stage}: {detail}")
        self.stage = stage


@dataclass(frozen=True)
class ClassifierConfig:
    architecture: str = "oracle"
    model_path: str | None = None
    corpus_path: str | None = None  # rebuilds the vocabulary for a loaded model
    train: TrainConfig = TrainConfig()
    train_utterances: int = 400

    def __post_init__(self) -> None:
        if self.architecture not in ARCHITECTURE_CHOICES:
            raise ValueError(f"architecture must be one of {ARCHITECTURE_CHOICES}")
        if self.model_path is not None and self.corpus_path is None:
            raise ValueError("a model file needs its training corpus for the vocabulary")
        if self.train_utterances < 2:
            raise ValueError("train_utterances must be at least 2")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    utterances: int = 100
    generator: GeneratorConfig = GeneratorConfig()
    classifier: ClassifierConfig = ClassifierConfig()
    policy: FilterPolicy = FilterPolicy()
    endpoint: tuple[str, int] = ("127.0.0.1", 9747)
    cost_per_switch: int = 1
    capacity: int = 2048
    frames_per_utterance: int = 160

    def __post_init__(self) -> None:
        if self.utterances < 1:
            raise ValueError("utterances must be at least 1")
        if self.frames_per_utterance < 1:
            raise ValueError("frames_per_utterance must be at least 1")
        if self.capacity < self.frames_per_utterance:
            raise ValueError("driver capacity must hold at least one utterance")
        if self.cost_per_switch < 0:
            raise ValueError("cost_per_switch must be non-negative")
        block_bound = HEADER.size + self.frames_per_utterance * FRAME_BYTES + _ANNEX_HEADROOM
        if block_bound >= MEMREF_FIELD_LIMIT:
            raise ValueError("frames_per_utterance too large for one output buffer")


@dataclass
class RunMetrics:
    processed: int = 0
    sensitive: int = 0
    redacted: int = 0
    forwarded: int = 0
    switches: int = 0
    cost_units: int = 0
    bytes_sent: int = 0
    latency_us: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "processed": self.processed,
            "sensitive": self.sensitive,
            "redacted": self.redacted,
            "forwarded": self.forwarded,
            "switches": self.switches,
            "cost_units": self.cost_units,
            "bytes_sent": self.bytes_sent,
            "latency_us": list(self.latency_us),
        }


@dataclass
class RunResult:
    metrics: RunMetrics
    log: RedactionLog
    utterances: list[tuple[str, Label]]  # generated payloads with truth labels
    sent_payloads: list[bytes]  # relay payload bytes in send order


def _oracle_vocab(generator: GeneratorConfig) -> Vocab:
    words = list(generator.keywords) + filler_vocabulary(generator)
    return Vocab.from_texts([" ".join(words)], max_size=len(words) + 1)


def build_classifier(
    config: PipelineConfig,
) -> tuple[Vocab, Callable[[Transcript], Verdict]]:
    """Resolve the configured classifier into (vocabulary, verdict function)."""
    cc = config.classifier
    threshold = config.policy.threshold
    if cc.architecture == "oracle":
        keywords = config.generator.keywords

        def oracle_verdict(transcript: Transcript) -> Verdict:
            hit = keyword_label(transcript.text, keywords) is Label.SENSITIVE
            score = 1.0 if hit else 0.0
            label = Label.SENSITIVE if score >= threshold else Label.BENIGN
            return Verdict(score=score, label=label, threshold=threshold)

        return _oracle_vocab(config.generator), oracle_verdict

    if cc.model_path is not None:
        model = load_model(cc.model_path)
        corpus = load_corpus(cc.corpus_path)
        vocab = Vocab.from_texts([text for text, _ in corpus], cc.train.vocab_size)
    else:
        corpus = make_labeled_corpus(config.generator, cc.train.seed, cc.train_utterances)
        result = train(cc.architecture, corpus, cc.train)
        model, vocab = result.model, result.vocab

    def model_verdict(transcript: Transcript) -> Verdict:
        return classify(model, transcript.tokens, threshold)

    return vocab, model_verdict


_STOP = object()


def run_pipeline(config: PipelineConfig, transport=None) -> RunResult:
    """Drive `config.utterances` utterances through capture, the secure ring,
    the PTA read path, classification, filtering and the relay.  Any worker
    error aborts the run with the failing stage named."""
    try:
        vocab, verdict_fn = build_classifier(config)
        asc = tee.AddressSpaceController()
        memory = tee.Memory(asc)
        driver = SecureAudioDriver(asc, memory, config.capacity)
        bridge = PtaBridge(driver, memory)
        session = bridge.open_session()
        out_len = HEADER.size + config.frames_per_utterance * FRAME_BYTES + _ANNEX_HEADROOM
        out_base = asc.find_free_range(out_len, 1 << 24)
        out_region = asc.carve_secure_region(out_base, out_len)
        ctx = tee.WorldContext(cost_per_switch=config.cost_per_switch)
        channel = SecureChannel(Supplicant(transport if transport is not None else TcpTransport()))
        channel.connect(config.endpoint)
    except Exception as exc:
        raise PipelineError("setup", exc) from exc

    metrics = RunMetrics()
    log = RedactionLog()
    utterances: list[tuple[str, Label]] = []
    sent_payloads: list[bytes] = []

    stop = threading.Event()
    failures: list[tuple[str, BaseException]] = []
    room = threading.Condition()
    available = [config.capacity]
    frames_q: queue.Queue = queue.Queue(maxsize=8)
    meta_q: queue.Queue = queue.Queue(maxsize=8)

    def abort(stage: str, exc: BaseException) -> None:
        failures.append((stage, exc))
        stop.set()
        with room:
            room.notify_all()

    def put(q: queue.Queue, item) -> bool:
        while not stop.is_set():
            try:
                q.put(item, timeout=0.05)
                return True
            except queue.Full:
                continue
        return False

    def get(q: queue.Queue):
        while not stop.is_set():
            try:
                return q.get(timeout=0.05)
            except queue.Empty:
                continue
        return _STOP

    def capture_worker() -> None:
        stage = "capture"
        try:
            mic = MicrophoneSource(config.generator, config.seed)
            for _ in range(config.utterances):
                if stop.is_set():
                    return
                stage = "capture"
                utt = mic.capture(config.frames_per_utterance)
                stage = "encode"
                stream = encode_frames(utt.frames)
                utterances.append((utt.payload_text, utt.truth_label))
                if not put(frames_q, (stream, utt.payload_text)):
                    return
            put(frames_q, None)
        except Exception as exc:
            abort(stage, exc)

    def ingest_worker() -> None:
        try:
            count = config.frames_per_utterance
            while True:
                item = get(frames_q)
                if item is _STOP:
                    return
                if item is None:
                    put(meta_q, None)
                    return
                stream, text = item
                with room:
                    while available[0] < count:
                        if stop.is_set():
                            return
                        room.wait(0.05)
                    available[0] -= count
                accepted = driver.ingest(stream, payload_text=text)
                if accepted != count:
                    raise RuntimeError(
                        f"ring accepted {accepted} of {count} reserved frames"
                    )
                if not put(meta_q, count):
                    return
        except Exception as exc:
            abort("ingest", exc)

    def trusted_worker() -> None:
        stage = "read"
        try:
            while True:
                item = get(meta_q)
                if item is _STOP or item is None:
                    return
                count = item
                started = time.perf_counter()
                stage = "read"
                cmd = PtaCommand(
                    session,
                    CMD_READ_AUDIO,
                    (MemRefParam(out_region, 0, out_len), ValueParam(count)),
                )
                resp = bridge.invoke(cmd, ctx)
                if resp.status is not PtaStatus.OK:
                    raise RuntimeError(f"read command returned {resp.status.name}")
                written = resp.params[1].b
                block = EncodedBlock.from_bytes(
                    memory.read(tee.World.SECURE, out_base, written)
                )
                stage = "transcribe"
                transcript = transcribe(block, vocab)
                stage = "classify"
                verdict = verdict_fn(transcript)
                stage = "filter"
                decision = apply_policy(config.policy, verdict.label, transcript.text)
                metrics.processed += 1
                if verdict.label is Label.SENSITIVE:
                    metrics.sensitive += 1
                if decision.redacted:
                    metrics.redacted += 1
                if decision.forward:
                    stage = "relay"
                    sequence = channel.next_sequence()
                    packet = RelayPacket(sequence, decision.flags, decision.text.encode("utf-8"))
                    status = channel.send(packet, ctx)
                    if status != ACK_OK:
                        raise RuntimeError(f"collector rejected frame with status {status}")
                    metrics.forwarded += 1
                    metrics.bytes_sent += len(encode_frame(packet))
                    sent_payloads.append(packet.payload)
                    log.append(RedactionRecord(sequence, verdict.score, verdict.label, decision.action))
                else:
                    log.append(RedactionRecord(None, verdict.score, verdict.label, decision.action))
                with room:
                    available[0] += count
                    room.notify_all()
                metrics.latency_us.append((time.perf_counter() - started) * 1e6)
        except Exception as exc:
            abort(stage, exc)

    workers = [
        threading.Thread(target=capture_worker, name="capture"),
        threading.Thread(target=ingest_worker, name="ingest"),
        threading.Thread(target=trusted_worker, name="trusted"),
    ]
    try:
        for w in workers:
            w.start()
        for w in workers:
            w.join()
        if failures:
            stage, exc = failures[0]
            raise PipelineError(stage, exc) from exc
        status_cmd = PtaCommand(session, CMD_GET_STATUS)
        status_resp = bridge.invoke(status_cmd, ctx)
        if status_resp.status is not PtaStatus.OK:
            raise PipelineError("read", f"status command returned {status_resp.status.name}")
        if status_resp.params[1].a != 0:
            raise PipelineError("ingest", f"{status_resp.params[1].a} frames overran the ring")
    finally:
        stop.set()
        try:
            channel.close()
        except Exception:
            pass
        bridge.close_session(session)

    metrics.switches = ctx.switch_count
    metrics.cost_units = ctx.switch_cost_units
    return RunResult(
        metrics=metrics, log=log, utterances=utterances, sent_payloads=sent_payloads
    )
