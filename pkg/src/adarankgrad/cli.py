"""``argd`` command-line entry point.

Subcommands::

    argd train <config>
    argd dynamics <config>
    argd ssrf-bench <config>
    argd extract-adapter <pre> <ft> [--rel-tol X] [--out DIR]

Exit codes: 0 ok, 2 configuration error, 3 numerical divergence,
4 I/O or file-format error, 5 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import adapter, config, dynamics, experiments, linalg, lowrank, metrics, network
from .errors import (
    ArgdError,
    CheckpointFormatError,
    ConfigError,
    DivergenceError,
    InvariantError,
    TraceTooShortError,
    VacuousBoundError,
)

log = logging.getLogger("argd")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4
EXIT_INVARIANT = 5

BENCH_COLUMNS = ("n", "m", "r", "ssrf_ms", "svd_ms", "ssrf_residual", "oracle_residual")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_bytes(columns, rows, config_hash: str) -> bytes:
    """Header, rows, then a ``# config_sha256=...`` comment line."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(x) for x in row])
    buf.write(f"# config_sha256={config_hash}\n")
    return buf.getvalue().encode()


def json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n").encode()


def _clean(obj):
    # JSON has no NaN/Inf; write null instead.
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


# -- train --------------------------------------------------------------------


def _check_optimizer_invariants(opt) -> None:
    for j, st in enumerate(getattr(opt, "states", [])):
        if st.v is not None and np.any(st.v < 0):
            raise InvariantError(f"layer {j}: negative second-moment entry")
        if st.projection is not None and linalg.orthonormality_error(st.projection.q) > 1e-8:
            raise InvariantError(f"layer {j}: projection basis lost orthonormality")


def run_train(cfg: config.ExperimentConfig, out: Path) -> dict:
    net = cfg.network
    spec = network.NetworkSpec(net.layer_dims, net.activation, net.loss, cfg.seed, net.leaky_slope)
    dims = (net.layer_dims[0], net.layer_dims[-1])
    batch, _ = network.make_synthetic(
        cfg.data.kind, dims, cfg.data.n_samples, cfg.seed, rank=cfg.data.rank,
        noise=cfg.data.noise, separation=cfg.data.separation,
    )
    hp = cfg.optim.hp
    opt = experiments.make_optimizer(cfg.optim.name, spec.shapes, hp, cfg.optim.galore_rank, cfg.optim.galore_interval)
    w0 = network.init_weights(spec)
    res = experiments.train(spec, batch, opt, cfg.steps, weights=w0)
    _check_optimizer_invariants(opt)

    digest = cfg.sha256()
    linalg.atomic_write_bytes(out / "trace.csv", csv_bytes(experiments.TRACE_COLUMNS, res.rows, digest))
    for j, (a, b) in enumerate(zip(w0, res.weights)):
        linalg.write_matrix(out / "init" / f"layer_{j}.argd", a)
        linalg.write_matrix(out / f"layer_{j}.argd", b)

    baseline = cfg.optim.baseline_rank or cfg.optim.galore_rank or hp.r_max
    traces = [
        metrics.LayerTrace(j, (spec.layer_dims[j], spec.layer_dims[j + 1]), res.rank_series(j), baseline)
        for j in range(spec.n_layers)
    ]
    summary = metrics.summary(traces)
    summary.update(
        optimizer=cfg.optim.name,
        steps_run=len(res.losses) - 1,
        initial_loss=res.losses[0],
        final_loss=res.final_loss,
        converged_at=res.converged_at,
        config_sha256=digest,
    )
    if cfg.data.kind == "classification":
        summary["train_accuracy"] = network.accuracy(spec, res.weights, batch)
    linalg.atomic_write_bytes(out / "summary.json", json_bytes(_clean(summary)))
    return summary


# -- dynamics -----------------------------------------------------------------


def run_dynamics(cfg: config.ExperimentConfig, out: Path) -> dynamics.DecayReport:
    d = cfg.dynamics
    system = dynamics.make_system(
        d.n, d.m, d.n_terms, d.b_spectrum, d.c_spectrum, seed=cfg.seed, alpha=d.alpha,
        shared_eigenbasis=d.shared_eigenbasis,
    )
    trace = dynamics.simulate(system, d.steps)
    digest = cfg.sha256()
    linalg.atomic_write_bytes(out / "trace.csv", csv_bytes(dynamics.TRACE_COLUMNS, trace.csv_rows(), digest))
    report = dynamics.analyze(system, trace)
    payload = json.loads(report.to_json())
    payload["config_sha256"] = digest
    linalg.atomic_write_bytes(out / "report.json", json_bytes(_clean(payload)))
    return report


# -- ssrf-bench ---------------------------------------------------------------


def bench_matrix(n: int, m: int, decay: float, seed: int) -> np.ndarray:
    k = min(n, m)
    u = linalg.qr_orthonormal(linalg.gaussian_matrix(n, k, linalg.derive_seed(seed, n, m, 0)))
    v = linalg.qr_orthonormal(linalg.gaussian_matrix(m, k, linalg.derive_seed(seed, n, m, 1)))
    return (u * decay ** np.arange(k)) @ v.T


def _best_ms(fn, repeats: int) -> float:
    best = math.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return 1e3 * best


def run_ssrf_bench(cfg: config.ExperimentConfig, out: Path) -> list[tuple]:
    b = cfg.bench
    rows = []
    for n, m in b.sizes:
        a = bench_matrix(n, m, b.decay, cfg.seed)
        svd_ms = _best_ms(lambda: np.linalg.svd(a, full_matrices=False), b.repeats)
        for r in b.ranks:
            if r > min(n, m):
                raise ConfigError(f"rank {r} exceeds min({n}, {m})")
            seed = linalg.derive_seed(cfg.seed, n, m, r)
            ssrf_ms = _best_ms(lambda: lowrank.ssrf(a, r, seed), b.repeats)
            q = lowrank.ssrf(a, r, seed).basis
            resid = linalg.fro_norm(a - q @ (q.T @ a))
            oracle = lowrank.eckart_young_residual(a, r)
            if resid < oracle - 1e-12:
                raise InvariantError(f"randomized residual {resid} beat the optimal {oracle}")
            rows.append((n, m, r, round(ssrf_ms, 3), round(svd_ms, 3), resid, oracle))
    linalg.atomic_write_bytes(out / "ssrf_bench.csv", csv_bytes(BENCH_COLUMNS, rows, cfg.sha256()))
    return rows


# -- extract-adapter ----------------------------------------------------------


def _checkpoint_pairs(pre: Path, ft: Path) -> list[tuple[str, Path, Path]]:
    if pre.is_dir() != ft.is_dir():
        raise CheckpointFormatError("pre and ft must both be files or both be directories")
    if not pre.is_dir():
        return [("", pre, ft)]
    names = sorted(p.name for p in pre.glob("layer_*.argd"))
    if not names:
        raise CheckpointFormatError(f"no layer_<j>.argd files in {pre}")
    missing = [n for n in names if not (ft / n).is_file()]
    if missing:
        raise CheckpointFormatError(f"{ft} lacks {missing}")
    return [(n[: -len(".argd")] + "_", pre / n, ft / n) for n in names]


def run_extract(pre: Path, ft: Path, rel_tol: float, out: Path) -> dict:
    reports = []
    for prefix, p, f in _checkpoint_pairs(pre, ft):
        pair, report = adapter.extract(linalg.read_matrix(p), linalg.read_matrix(f), rel_tol)
        entry = report.to_dict()
        if prefix:
            entry["layer"] = prefix.rstrip("_")
        if pair is not None:
            linalg.write_matrix(out / f"{prefix}adapter_A.argd", pair.a)
            linalg.write_matrix(out / f"{prefix}adapter_B.argd", pair.b)
        reports.append(entry)
    payload = reports[0] if len(reports) == 1 and "layer" not in reports[0] else {"layers": reports}
    payload = dict(payload, rel_tol=rel_tol)
    linalg.atomic_write_bytes(out / "adapter_report.json", json_bytes(_clean(payload)))
    return payload


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="argd", description="Adaptive low-rank gradient experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("train", "train a network and record rank traces"),
        ("dynamics", "simulate linear gradient dynamics and fit the kappa decay"),
        ("ssrf-bench", "time the randomized range finder against a full SVD"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", type=Path)
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides config)")
    p = sub.add_parser("extract-adapter", help="factor the difference of two checkpoints")
    p.add_argument("pre", type=Path)
    p.add_argument("ft", type=Path)
    p.add_argument("--rel-tol", type=float, default=1e-6)
    p.add_argument("--out", type=Path, default=Path("."))
    return parser


def _dispatch(args) -> None:
    if args.command == "extract-adapter":
        if not args.rel_tol >= 0:
            raise ConfigError("--rel-tol must be nonnegative")
        for path in (args.pre, args.ft):
            if not path.exists():
                raise FileNotFoundError(f"{path} does not exist")
        payload = run_extract(args.pre, args.ft, args.rel_tol, args.out)
        log.info("adapter report: %s", payload)
        return
    cfg = config.load(args.config)
    if cfg.kind != args.command:
        raise ConfigError(f"config kind is {cfg.kind!r} but the command is {args.command!r}")
    out = args.out if args.out is not None else Path(cfg.output_dir)
    if args.command == "train":
        summary = run_train(cfg, out)
        log.info("final loss %.6g", summary["final_loss"])
    elif args.command == "dynamics":
        report = run_dynamics(cfg, out)
        log.info("slope %.6g predicted %.6g", report.measured_slope, report.predicted_slope)
    else:
        rows = run_ssrf_bench(cfg, out)
        log.info("%d benchmark rows", len(rows))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        _dispatch(args)
    except (ConfigError, VacuousBoundError, TraceTooShortError) as exc:
        print(f"argd: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"argd: divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, CheckpointFormatError) as exc:
        print(f"argd: file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvariantError as exc:
        print(f"argd: internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValueError as exc:
        # Invalid parameter combinations surface as ValueError from the library.
        print(f"argd: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArgdError, AssertionError) as exc:
        print(f"argd: internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
