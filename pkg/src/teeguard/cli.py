"""Command-line front end: pipeline runs, training, trace analysis, serving.

Options come from an INI-style config file, command-line flags, or both;
flags win.  Metrics are emitted as a single JSON document when asked.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
import time
from pathlib import Path

from .audio import GeneratorConfig
from .cloud import BindError, MockCloud
from .pipeline import (
    ARCHITECTURE_CHOICES,
    ClassifierConfig,
    PipelineConfig,
    run_pipeline,
)
from .relay import FilterAction, FilterPolicy
from .sense import TrainConfig, evaluate, load_corpus, save_model, train
from .tcbtrace import (
    CallGraph,
    build_task_graphs,
    emit_report,
    minimal_set,
    parse_trace,
    render_report,
)


def _parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"endpoint must look like host:port, got {text!r}")
    return host, int(port)


def _parse_keywords(text: str) -> tuple[str, ...]:
    words = tuple(w.strip() for w in text.split(",") if w.strip())
    if not words:
        raise ValueError("keyword list is empty")
    return words


def _load_config_file(path: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    return parser


def _picker(cp: configparser.ConfigParser | None):
    def pick(flag, section: str, key: str, cast, default):
        if flag is not None:
            return flag
        if cp is not None and cp.has_option(section, key):
            return cast(cp.get(section, key))
        return default

    return pick


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    cp = _load_config_file(args.config) if args.config else None
    pick = _picker(cp)
    defaults = PipelineConfig()
    gen_defaults = GeneratorConfig()
    train_defaults = TrainConfig()
    cls_defaults = ClassifierConfig()

    generator = GeneratorConfig(
        keywords=pick(args.keywords, "generator", "keywords", _parse_keywords, gen_defaults.keywords),
        sensitivity=pick(args.sensitivity, "generator", "sensitivity", float, gen_defaults.sensitivity),
        vocab_size=pick(None, "generator", "vocab_size", int, gen_defaults.vocab_size),
        min_words=pick(None, "generator", "min_words", int, gen_defaults.min_words),
        max_words=pick(None, "generator", "max_words", int, gen_defaults.max_words),
    )
    train_cfg = TrainConfig(
        learning_rate=pick(args.learning_rate, "classifier", "learning_rate", float, train_defaults.learning_rate),
        epochs=pick(args.epochs, "classifier", "epochs", int, train_defaults.epochs),
        seed=pick(args.train_seed, "classifier", "seed", int, train_defaults.seed),
        dim=pick(None, "classifier", "dim", int, train_defaults.dim),
        filters=pick(None, "classifier", "filters", int, train_defaults.filters),
        width=pick(None, "classifier", "width", int, train_defaults.width),
        vocab_size=pick(None, "classifier", "vocab_size", int, train_defaults.vocab_size),
    )
    classifier = ClassifierConfig(
        architecture=pick(args.architecture, "classifier", "architecture", str, cls_defaults.architecture),
        model_path=pick(args.model, "classifier", "model", str, None),
        corpus_path=pick(args.corpus, "classifier", "corpus", str, None),
        train=train_cfg,
        train_utterances=pick(args.train_utterances, "classifier", "train_utterances", int, cls_defaults.train_utterances),
    )
    policy = FilterPolicy(
        threshold=pick(args.threshold, "policy", "threshold", float, FilterPolicy().threshold),
        action=FilterAction(pick(args.action, "policy", "action", str, FilterPolicy().action.value)),
        mask_token=pick(args.mask_token, "policy", "mask_token", str, FilterPolicy().mask_token),
    )
    return PipelineConfig(
        seed=pick(args.seed, "pipeline", "seed", int, defaults.seed),
        utterances=pick(args.utterances, "pipeline", "utterances", int, defaults.utterances),
        generator=generator,
        classifier=classifier,
        policy=policy,
        endpoint=pick(args.endpoint, "pipeline", "endpoint", _parse_endpoint, defaults.endpoint),
        cost_per_switch=pick(args.cost_per_switch, "pipeline", "cost_per_switch", int, defaults.cost_per_switch),
        capacity=pick(args.capacity, "pipeline", "capacity", int, defaults.capacity),
        frames_per_utterance=pick(args.frames, "pipeline", "frames_per_utterance", int, defaults.frames_per_utterance),
    )


def cmd_pipeline(args: argparse.Namespace) -> int:
    config = _pipeline_config(args)
    result = run_pipeline(config)
    m = result.metrics
    print(
        "processed={} sensitive={} redacted={} forwarded={} switches={} "
        "cost_units={} bytes_sent={}".format(
            m.processed, m.sensitive, m.redacted, m.forwarded, m.switches,
            m.cost_units, m.bytes_sent,
        )
    )
    if args.metrics_out:
        Path(args.metrics_out).write_text(json.dumps(m.to_dict(), indent=2) + "\n")
    if args.log_out:
        Path(args.log_out).write_text(result.log.render() + "\n")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    samples = load_corpus(args.corpus)
    config = TrainConfig(
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        seed=args.seed,
        dim=args.dim,
        filters=args.filters,
        width=args.width,
        vocab_size=args.vocab_size,
    )
    result = train(args.architecture, samples, config)
    save_model(args.model_out, result.model)
    if args.history_out:
        lines = "\n".join(f"{loss:.8f}" for loss in result.loss_history)
        Path(args.history_out).write_text(lines + "\n")
    accuracy = evaluate(result.model, result.vocab, samples)
    print(f"final train accuracy: {accuracy:.4f}")
    return 0


def _load_inventory(path: str) -> list[str]:
    names = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            names.append(line)
    return names


def cmd_trace(args: argparse.Namespace) -> int:
    graphs: dict[str, CallGraph] = {}
    for path in args.traces:
        try:
            events = parse_trace(Path(path).read_text(encoding="utf-8"))
            per_task = build_task_graphs(events)
        except ValueError as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            return 2
        for task, graph in per_task.items():
            if task in graphs:
                prior = graphs[task]
                edges = dict(prior.edges)
                for key, count in graph.edges.items():
                    edges[key] = edges.get(key, 0) + count
                graphs[task] = CallGraph(
                    nodes=prior.nodes | graph.nodes,
                    edges=edges,
                    roots=prior.roots | graph.roots,
                )
            else:
                graphs[task] = graph
    inventory = _load_inventory(args.inventory)
    tasks = list(args.tasks.split(",")) if args.tasks else sorted(graphs)
    required = minimal_set(graphs, tasks)
    report = emit_report(inventory, required)
    text = render_report(report) + "\n"
    if args.report_out:
        Path(args.report_out).write_text(text)
    else:
        print(text, end="")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    cloud = MockCloud(host=args.host, port=args.port, dump_path=args.dump)
    cloud.start()
    host, port = cloud.address
    print(f"listening on {host}:{port}", flush=True)
    try:
        while True:
            time.sleep(0.2)
    except KeyboardInterrupt:
        pass
    finally:
        count = len(cloud.received())
        naks = cloud.nak_count
        cloud.stop()
        print(f"received {count} payloads, rejected {naks}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="teeguard",
        description="Secured audio capture pipeline with in-enclave redaction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pipeline", help="run the end-to-end pipeline")
    p.add_argument("--config", help="INI config file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--utterances", type=int)
    p.add_argument("--endpoint", type=_parse_endpoint, help="collector host:port")
    p.add_argument("--architecture", choices=ARCHITECTURE_CHOICES)
    p.add_argument("--model", help="serialized model file (needs --corpus)")
    p.add_argument("--corpus", help="training corpus for the model's vocabulary")
    p.add_argument("--train-utterances", type=int, dest="train_utterances")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--train-seed", type=int, dest="train_seed")
    p.add_argument("--threshold", type=float)
    p.add_argument("--action", choices=[a.value for a in FilterAction])
    p.add_argument("--mask-token", dest="mask_token")
    p.add_argument("--keywords", type=_parse_keywords)
    p.add_argument("--sensitivity", type=float)
    p.add_argument("--cost-per-switch", type=int, dest="cost_per_switch")
    p.add_argument("--capacity", type=int)
    p.add_argument("--frames", type=int, help="frames per utterance")
    p.add_argument("--metrics-out", dest="metrics_out", help="write metrics JSON here")
    p.add_argument("--log-out", dest="log_out", help="write the redaction log here")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("train", help="train a classifier on a labeled corpus")
    p.add_argument("--corpus", required=True, help="label<TAB>text lines")
    p.add_argument("--architecture", required=True, choices=["cnn", "attention", "hybrid"])
    p.add_argument("--model-out", dest="model_out", required=True)
    p.add_argument("--history-out", dest="history_out", help="write per-epoch loss here")
    p.add_argument("--epochs", type=int, default=TrainConfig().epochs)
    p.add_argument("--learning-rate", type=float, dest="learning_rate",
                   default=TrainConfig().learning_rate)
    p.add_argument("--seed", type=int, default=TrainConfig().seed)
    p.add_argument("--dim", type=int, default=TrainConfig().dim)
    p.add_argument("--filters", type=int, default=TrainConfig().filters)
    p.add_argument("--width", type=int, default=TrainConfig().width)
    p.add_argument("--vocab-size", type=int, dest="vocab_size", default=TrainConfig().vocab_size)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("trace", help="call-trace analysis and exclusion report")
    p.add_argument("traces", nargs="+", help="trace log files")
    p.add_argument("--inventory", required=True, help="one function name per line")
    p.add_argument("--tasks", help="comma-separated task ids (default: all traced)")
    p.add_argument("--report-out", dest="report_out", help="write the report here")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("serve", help="run the mock collector until interrupted")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=9747)
    p.add_argument("--dump", help="append received payload text here, one per line")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError, ConnectionError, LookupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
