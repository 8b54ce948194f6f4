"""Command-line front end: ``infer``, ``check`` and ``bench``."""

from __future__ import annotations

import argparse
import csv
import io
import multiprocessing as mp
import sys
import time
from dataclasses import dataclass, field
from typing import Sequence

from . import guard, ldjt
from .model import ModelError, load_model

ALGORITHMS = ("ldjt_extended", "ldjt_original", "ljt_unrolled")
EXIT_PARSE = 1
EXIT_INFERENCE = 2
EXIT_IRREDUCIBLE = 3
BENCH_HEADER = ("algorithm", "max_t", "rep", "seconds", "grounding_events")


@dataclass(frozen=True)
class BenchConfig:
    model: str
    max_ts: tuple[int, ...]
    algorithms: tuple[str, ...] = ("ldjt_extended",)
    domains: dict = field(default_factory=dict)
    seed: int = 0
    reps: int = 1
    timeout: float = 300.0
    jobs: int = 1

    def __post_init__(self):
        if not self.max_ts or any(b <= a for a, b in zip(self.max_ts, self.max_ts[1:])):
            raise ValueError("maximum time steps must be strictly increasing")
        if any(t < 0 for t in self.max_ts):
            raise ValueError("maximum time steps must be >= 0")
        if self.reps < 1:
            raise ValueError("repetitions must be >= 1")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {a}")


def _domain(text: str) -> tuple[str, int]:
    name, eq, size = text.partition("=")
    if not eq or not name or not size.isdigit() or int(size) < 1:
        raise argparse.ArgumentTypeError(f"expected NAME=SIZE, got {text!r}")
    return name, int(size)


def load(path: str, domains: Sequence[tuple[str, int]] = (), seed: int = 0, redraw: bool = False):
    pdm = load_model(path, seed=seed)
    if domains:
        pdm = pdm.with_domains(dict(domains))
    if redraw:
        pdm = pdm.with_potentials(seed)
    return pdm


def execute(pdm, T: int, algorithm: str) -> ldjt.RunResult:
    if algorithm == "ldjt_extended":
        return ldjt.run(pdm, T)
    if algorithm == "ldjt_original":
        return ldjt.run(pdm, T, expand=False)
    if algorithm == "ljt_unrolled":
        return ldjt.run_unrolled(pdm, T)
    raise ValueError(f"unknown algorithm {algorithm}")


def format_answer(a: ldjt.Answer) -> str:
    term = a.term if a.target == a.step else f"{a.term}@{a.target}"
    return f"t={a.step} P({term}) = " + " ".join(f"{p:.12g}" for p in a.probs)


def cmd_infer(args, out=sys.stdout) -> int:
    try:
        pdm = load(args.model, args.domain, args.seed)
    except (OSError, ModelError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    try:
        result = execute(pdm, args.max_t, args.algorithm)
    except (ModelError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFERENCE
    if args.csv:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["t", "target", "term", "probabilities"])
        for a in result.answers:
            w.writerow([a.step, a.target, a.term, " ".join(f"{p:.12g}" for p in a.probs)])
    else:
        for a in result.answers:
            print(format_answer(a), file=out)
    return 0


def cmd_check(args, out=sys.stdout) -> int:
    try:
        pdm = load(args.model, args.domain, args.seed)
    except (OSError, ModelError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    try:
        structures = ldjt.build_temporal_structures(pdm)
        _, report = guard.prevent_all(structures)
    except ModelError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFERENCE
    print(report.render(), file=out)
    return EXIT_IRREDUCIBLE if report.irreducible else 0


def _timed(config: BenchConfig, algorithm: str, T: int, queue) -> None:
    try:
        pdm = load(config.model, tuple(config.domains.items()), config.seed, redraw=True)
        tic = time.perf_counter()
        result = execute(pdm, T, algorithm)
        queue.put(("ok", time.perf_counter() - tic, result.counter.events))
    except Exception as e:  # reported in the parent
        queue.put(("error", str(e), 0))


def bench_rows(config: BenchConfig):
    """Yield CSV rows; each run happens in its own worker process."""
    ctx = mp.get_context("fork" if "fork" in mp.get_all_start_methods() else "spawn")
    jobs = [(a, T, r) for a in config.algorithms for T in config.max_ts for r in range(config.reps)]
    running: list = []
    results: dict = {}

    def reap(block: bool):
        for item in list(running):
            key, proc, queue, started = item
            remaining = config.timeout - (time.monotonic() - started)
            if block:
                proc.join(max(0.0, min(remaining, 0.05)))
            if not queue.empty():
                results[key] = queue.get()
                proc.join()
                running.remove(item)
            elif time.monotonic() - started > config.timeout:
                proc.terminate()
                proc.join()
                results[key] = ("timeout", None, None)
                running.remove(item)
            elif not proc.is_alive() and queue.empty():
                proc.join()
                results[key] = ("error", "worker died", 0)
                running.remove(item)

    pending = list(jobs)
    while pending or running:
        while pending and len(running) < max(1, config.jobs):
            key = pending.pop(0)
            queue = ctx.Queue()
            proc = ctx.Process(target=_timed, args=(config, key[0], key[1], queue), daemon=True)
            proc.start()
            running.append((key, proc, queue, time.monotonic()))
        reap(block=True)
    for key in jobs:
        status, seconds, events = results[key]
        a, T, r = key
        if status == "ok":
            yield (a, T, r, f"{seconds:.6f}", events)
        elif status == "timeout":
            yield (a, T, r, "timeout", "")
        else:
            raise ModelError(f"{a} at max_t={T}: {seconds}")


def cmd_bench(args, out=sys.stdout) -> int:
    try:
        load(args.model, args.domain, args.seed)
    except (OSError, ModelError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    try:
        config = BenchConfig(
            args.model,
            tuple(args.max_t),
            tuple(args.algorithm),
            dict(args.domain),
            args.seed,
            args.reps,
            args.timeout_secs,
            args.jobs,
        )
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFERENCE
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_HEADER)
    try:
        for row in bench_rows(config):
            w.writerow(row)
    except ModelError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFERENCE
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            fh.write(buf.getvalue())
    out.write(buf.getvalue())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="liftedjt", description="Lifted exact inference for dynamic relational models.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--model", required=True, help="model file")
        sp.add_argument("--domain", type=_domain, action="append", default=[], metavar="X=N",
                        help="override the size of a logvar domain (repeatable)")
        sp.add_argument("--seed", type=int, default=0, help="seed for random potentials")

    inf = sub.add_parser("infer", help="answer the model's queries step by step")
    common(inf)
    inf.add_argument("--max-t", type=int, required=True)
    inf.add_argument("--algorithm", choices=ALGORITHMS, default="ldjt_extended")
    inf.add_argument("--csv", action="store_true", help="print answers as CSV")
    inf.set_defaults(func=cmd_infer)

    chk = sub.add_parser("check", help="report groundings and the actions preventing them")
    common(chk)
    chk.set_defaults(func=cmd_check)

    b = sub.add_parser("bench", help="time runs over maximum time steps")
    common(b)
    b.add_argument("--max-t", type=int, nargs="+", required=True)
    b.add_argument("--algorithm", choices=ALGORITHMS, nargs="+", default=["ldjt_extended"])
    b.add_argument("--reps", type=int, default=1)
    b.add_argument("--timeout-secs", type=float, default=300.0)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--csv", metavar="PATH", help="also write the CSV to PATH")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
