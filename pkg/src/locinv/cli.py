"""Command-line front end: layering, sensitivity profiles, qFIM, counts
emission and drift tests. Reports are written as JSON and CSV."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import inverted_distribution, profile
from .circuit import Circuit, CircuitError, TwirlConfig, load_circuit
from .drift import ContextCounts, two_step
from .fixtures import FIXTURES, get_fixture
from .sim import counts_rows, read_counts_csv, sample, simulate, write_counts_csv
from .superop import ErrorModel, LogDomainError, NotCPTPError, bundled_model, load_model

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

# job batching used when emitting counts
JOBS = 6
CIRCUITS_PER_JOB = 300
SHOTS = 1024


class InputError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    circuit: Circuit
    model: ErrorModel
    m: int = 1
    twirl: TwirlConfig | None = None
    shots: int | None = None
    seed: int = 0
    bootstrap: int = 0
    out: Path | None = None

    def __post_init__(self):
        if self.m < 1:
            raise InputError("--m must be >= 1")
        if self.shots is not None and self.shots < 1:
            raise InputError("--shots must be >= 1")
        if self.bootstrap and self.shots is None:
            raise InputError("--bootstrap needs --shots")
        if self.bootstrap == 1 or self.bootstrap < 0:
            raise InputError("--bootstrap needs B >= 2")


def _dump(doc) -> str:
    return json.dumps(doc, indent=2) + "\n"


def _dump_layers(doc: dict) -> str:
    """Layered circuit JSON with one layer per line."""
    lines = [json.dumps(layer) for layer in doc["layers"]]
    body = ",\n    ".join(lines)
    return (f'{{\n  "n": {doc["n"]},\n  "tags": {json.dumps(doc["tags"])},\n'
            f'  "layers": [\n    {body}\n  ]\n}}\n')


def _write(out: Path | None, name: str, text: str) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _circuit(args, absorb: bool | None = None) -> Circuit:
    absorb = getattr(args, "absorb_virtual", False) if absorb is None else absorb
    if args.circuit and args.fixture:
        raise InputError("give --circuit or --fixture, not both")
    if args.fixture:
        return get_fixture(args.fixture).circuit()
    if args.circuit:
        return load_circuit(args.circuit, absorb_virtual=absorb)
    raise InputError("need --circuit or --fixture")


def _model(args) -> ErrorModel:
    if args.noise == "ideal":
        return ErrorModel.ideal()
    if args.noise:
        return load_model(args.noise)
    if args.fixture:
        return get_fixture(args.fixture).model()
    return bundled_model()


def _config(args) -> RunConfig:
    twirl = TwirlConfig(args.twirl_instances, args.seed) if args.twirl else None
    return RunConfig(_circuit(args), _model(args), args.m, twirl, args.shots, args.seed,
                     args.bootstrap, Path(args.out) if args.out else None)


def cmd_layers(args) -> int:
    c = _circuit(args)
    doc = c.to_json()
    doc["tags"] = ["virtual" if layer.is_virtual else "physical" for layer in c.layers]
    _write(Path(args.out) if args.out else None, "layers.json", _dump_layers(doc))
    return EXIT_OK


def cmd_profile(args) -> int:
    cfg = _config(args)
    rep = profile(cfg.circuit, cfg.model, cfg.m, cfg.twirl, cfg.shots, cfg.seed,
                  cfg.bootstrap, with_ideal=True, with_qfim=True)
    if cfg.out is None:
        sys.stdout.write(_dump(rep.to_json()))
    else:
        _write(cfg.out, "profile.json", _dump(rep.to_json()))
        _write(cfg.out, "profile.csv", rep.to_csv())
    return EXIT_OK


def cmd_qfim(args) -> int:
    cfg = _config(args)
    rep = profile(cfg.circuit, cfg.model, cfg.m, cfg.twirl, cfg.shots, cfg.seed,
                  with_ideal=False, with_qfim=True)
    q = rep.qfim
    doc = {
        "matrix": q.matrix.tolist(),
        "eigenvalues": [float(v) for v in q.eigenvalues],
        "top_eigenvector": [float(v) for v in q.top_eigenvector],
        "dominant_layer": q.dominant_layer,
        "m": cfg.m,
        "shots": cfg.shots,
    }
    spectrum = "rank,eigenvalue\n" + "".join(f"{k},{v!r}\n" for k, v in
                                             enumerate(map(float, q.eigenvalues), start=1))
    top = "i,component\n" + "".join(f"{k},{v!r}\n" for k, v in
                                    enumerate(map(float, q.top_eigenvector), start=1))
    if cfg.out is None:
        sys.stdout.write(_dump(doc))
    else:
        _write(cfg.out, "qfim.json", _dump(doc))
        _write(cfg.out, "qfim_spectrum.csv", spectrum)
        _write(cfg.out, "qfim_top.csv", top)
    return EXIT_OK


def cmd_counts(args) -> int:
    """Sample baseline + d inverted circuits in jobs; one context per job."""
    cfg = _config(args)
    c = cfg.circuit
    shots = cfg.shots or SHOTS
    if args.jobs < 1 or args.circuits_per_job < c.depth + 1:
        raise InputError("need >= 1 job holding at least the d+1 circuits")
    reps = args.circuits_per_job // (c.depth + 1)
    dists = [simulate(c, cfg.model)]
    dists += [inverted_distribution(c, cfg.model, i, cfg.m, cfg.twirl) for i in range(1, c.depth + 1)]
    names = ["C"] + [f"C{i}" for i in range(1, c.depth + 1)]
    rows = []
    for job in range(args.jobs):
        for k, (name, p) in enumerate(zip(names, dists)):
            rng = np.random.default_rng([cfg.seed, job, k])
            x = sum(sample(p, shots, rng) for _ in range(reps))
            rows += counts_rows(name, f"job{job}", x, c.n, keep_zeros=True)
    if cfg.out is None:
        sys.stdout.write("circuit_id,context_id,bitstring,count\n")
        sys.stdout.write("".join(",".join(map(str, r)) + "\n" for r in rows))
    else:
        cfg.out.mkdir(parents=True, exist_ok=True)
        write_counts_csv(cfg.out / "counts.csv", rows)
    return EXIT_OK


def cmd_drift(args) -> int:
    if not args.counts:
        raise InputError("need --counts")
    circuits, contexts, x = read_counts_csv(args.counts)
    if len(contexts) < 2:
        raise InputError("drift testing needs at least two contexts")
    if np.any(x.sum(axis=2) == 0):
        raise InputError("some circuit has no counts in some context")
    rep = two_step(ContextCounts(x, tuple(circuits), tuple(contexts)), args.alpha, args.comparisons)
    out = Path(args.out) if args.out else None
    if out is None:
        sys.stdout.write(_dump(rep.to_json()))
    else:
        _write(out, "drift.json", _dump(rep.to_json()))
        _write(out, "drift_matrix.csv", rep.matrix_csv())
    return EXIT_OK


def cmd_fixtures(args) -> int:
    for name in sorted(FIXTURES):
        sys.stdout.write(f"{name}\t{FIXTURES[name].description}\n")
    return EXIT_OK


def _add_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--circuit", help="circuit JSON (flat 'gates' or layered 'layers')")
    p.add_argument("--fixture", choices=sorted(FIXTURES), help="built-in circuit")
    p.add_argument("--absorb-virtual", action="store_true",
                   help="fold Z rotations into frames of physical layers")


def _add_run(p: argparse.ArgumentParser) -> None:
    _add_source(p)
    p.add_argument("--noise", help="noise-model JSON, or 'ideal' (default: bundled model)")
    p.add_argument("--m", type=int, default=1, help="inversion repetitions")
    p.add_argument("--twirl", action="store_true", help="random Pauli twirl of the inverse layer")
    p.add_argument("--twirl-instances", type=int, default=100)
    p.add_argument("--shots", type=int, help="sample this many shots per circuit (default: exact)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bootstrap", type=int, default=0, help="bootstrap replicates B (shots mode)")
    p.add_argument("--out", help="output directory (default: JSON on stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="locinv", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("layers", help="split a circuit into layers")
    _add_source(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_layers)

    p = sub.add_parser("profile", help="TVD sensitivity profile")
    _add_run(p)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("qfim", help="qFIM eigen-analysis")
    _add_run(p)
    p.set_defaults(func=cmd_qfim)

    p = sub.add_parser("counts", help="sample the d+1 circuits in jobs and write counts CSV")
    _add_run(p)
    p.add_argument("--jobs", type=int, default=JOBS)
    p.add_argument("--circuits-per-job", type=int, default=CIRCUITS_PER_JOB)
    p.set_defaults(func=cmd_counts)

    p = sub.add_parser("drift", help="two-step drift test on a counts CSV")
    p.add_argument("--counts", help="counts CSV grouped by context_id")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--comparisons", type=int, help="override the number of comparisons alpha is split over")
    p.add_argument("--out")
    p.set_defaults(func=cmd_drift)

    p = sub.add_parser("fixtures", help="list built-in circuits")
    p.set_defaults(func=cmd_fixtures)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (LogDomainError, NotCPTPError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, CircuitError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
