"""Command-line entry points.

Every flag can also be set through an environment variable named
``TRACEMAP_`` plus the flag name in upper case with dashes as underscores
(``--sigma-t`` -> ``TRACEMAP_SIGMA_T``).  Explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bayes_refine import McmcConfig, PriorHyperparams, refined_risk_map, sample_posterior
from .distribution import (
    DEFAULT_THRESHOLD,
    DirectoryMapStore,
    MapClient,
    MapRequest,
    MapServer,
    RecordingTransport,
    TcpTransport,
    assess,
    read_tile,
    write_tile,
)
from .distribution.server import parse_bind
from .errors import DegenerateLabelsError, ParameterDomainError
from .grid_map import DEFAULT_EPS, GridSpec, build_risk_map, discretize
from .io import (
    read_observations_csv,
    read_path_csv,
    read_trajectory_csv,
    read_trials_csv,
    write_manifest,
    write_posterior_csv,
    write_roc_csv,
    write_scatter_csv,
    write_trials_csv,
)
from .risk_model import DEFAULT_P0, RiskParams
from .simulation import (
    SIGMA_T_SWEEP,
    SIMULATION_EPS,
    ScenarioConfig,
    auc,
    roc,
    run_experiment,
    scores_and_labels,
)

ENV_PREFIX = "TRACEMAP_"
log = logging.getLogger("tracemap")


def _env(flag: str, default, cast=str, many=False):
    raw = os.environ.get(ENV_PREFIX + flag.lstrip("-").upper().replace("-", "_"))
    if raw is None:
        return default
    if many:
        return [cast(v) for v in raw.replace(",", " ").split()]
    return cast(raw)


def _add(p, flag, default, cast=str, many=False, **kw):
    kw.setdefault("type", cast)
    if many:
        kw["nargs"] = "+"
    p.add_argument(flag, default=_env(flag, default, cast, many), **kw)


def _model_flags(p, sigma_t_many=False):
    _add(p, "--p0", DEFAULT_P0, float, help="per-contact infection probability (default 0.01/sqrt(2 pi))")
    _add(p, "--sigma-xy", 1.0, float, help="spatial decay scale in meters")
    if sigma_t_many:
        _add(p, "--sigma-t", list(SIGMA_T_SWEEP), float, many=True, help="temporal decay scale(s) in seconds")
    else:
        _add(p, "--sigma-t", 100.0, float, help="temporal decay scale in seconds")


def _params(args, sigma_t=None) -> RiskParams:
    st = args.sigma_t if sigma_t is None else sigma_t
    return RiskParams(args.p0, args.sigma_xy, args.sigma_xy, st)


def _tag(sigma_t: float) -> str:
    return f"sigma_t-{sigma_t:g}"


def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = ScenarioConfig(n_trials=args.trials, rng_seed=args.seed)
    outputs = []
    for st in args.sigma_t:
        params = _params(args, st)
        records = run_experiment(config, params, eps=args.eps)
        tag = _tag(st)
        names = {"trials": f"trials_{tag}.csv", "scatter": f"scatter_{tag}.csv"}
        write_trials_csv(out / names["trials"], records)
        write_scatter_csv(out / names["scatter"], records)
        outputs += names.values()
        line = f"sigma_t={st:g}: {len(records)} trials, {sum(r.infected for r in records)} infected"
        for metric in ("risk", "proximity"):
            try:
                curve = roc(records, metric)
            except DegenerateLabelsError:
                continue
            name = f"roc_{metric}_{tag}.csv"
            write_roc_csv(out / name, curve)
            outputs.append(name)
            line += f", AUC({metric})={curve.auc:.4f}"
        print(line)
    cfg = {"trials": args.trials, "sigma_t": args.sigma_t, "sigma_xy": args.sigma_xy, "p0": args.p0,
           "eps": args.eps, "scenario": {k: v for k, v in vars(config).items()}}
    write_manifest(out, "simulate", cfg, args.seed, outputs)
    return 0


def cmd_roc(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = read_trials_csv(args.trials_file)
    metrics = ("risk", "proximity") if args.metric == "both" else (args.metric,)
    outputs = []
    for metric in metrics:
        try:
            curve = roc(records, metric)
        except DegenerateLabelsError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        name = f"roc_{metric}.csv"
        write_roc_csv(out / name, curve)
        outputs.append(name)
        print(f"AUC({metric}) = {auc(*scores_and_labels(records, metric)):.6f}")
    write_manifest(out, "roc", {"trials_file": str(args.trials_file), "metric": args.metric}, None, outputs)
    return 0


def cmd_build_map(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = GridSpec()
    patients = [read_trajectory_csv(p, spec) for p in args.patients]
    risk_map = build_risk_map(patients, _params(args), spec, args.eps)
    write_tile(out / args.name, risk_map)
    cfg = {"patients": [str(p) for p in args.patients], "p0": args.p0, "sigma_xy": args.sigma_xy,
           "sigma_t": args.sigma_t, "eps": args.eps}
    write_manifest(out, "build-map", cfg, None, [args.name])
    print(f"wrote {out / args.name} with {len(risk_map)} cells")
    return 0


def cmd_serve(args) -> int:
    store = DirectoryMapStore(args.map_dir)
    host, port = parse_bind(args.bind)
    with MapServer(store, (host, port)) as server:
        print(f"serving {len(store.versions())} map version(s) from {args.map_dir} on "
              f"{server.endpoint[0]}:{server.endpoint[1]}", flush=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
    return 0


def _request(args) -> MapRequest:
    if args.region is None:
        return MapRequest(map_version=args.map_version)
    i0, i1, j0, j1, k0, k1 = args.region
    return MapRequest((i0, i1), (j0, j1), (k0, k1), args.map_version)


def cmd_evaluate(args) -> int:
    if (args.endpoint is None) == (args.tile is None):
        print("error: give exactly one of --endpoint or --tile", file=sys.stderr)
        return 2
    if args.tile is not None:
        tile = read_tile(args.tile)
        version = None
    else:
        transport = TcpTransport(*parse_bind(args.endpoint))
        if args.capture:
            transport = RecordingTransport(transport)
        version, tile = MapClient(transport).fetch(_request(args))
        if args.capture:
            Path(args.capture).write_bytes(transport.outbound)
    # the trajectory is only read once the tile is local
    trajectory = discretize(read_path_csv(args.trajectory), tile.spec)
    risk, advise = assess(tile, trajectory, args.threshold)
    print(json.dumps({"risk": risk, "advise_test": advise, "threshold": args.threshold, "map_version": version}))
    return 0


def cmd_refine(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = GridSpec()
    nominal = RiskParams(args.p0, args.sigma_xy, args.sigma_xy, args.sigma_t)
    centered = PriorHyperparams.centered_on(nominal)
    prior = PriorHyperparams(
        args.alpha if args.alpha is not None else centered.alpha,
        args.beta if args.beta is not None else centered.beta,
        args.alpha_t if args.alpha_t is not None else centered.alpha_t,
        args.beta_t if args.beta_t is not None else centered.beta_t,
    )
    mcmc = McmcConfig(args.iterations, args.burn_in, args.thin, (args.proposal_scale, args.proposal_scale))
    patients = [read_trajectory_csv(p, spec) for p in args.patients]
    patient_cells = [c for p in patients for c in p.cells]
    observations = read_observations_csv(args.observations, spec) if args.observations else []
    result = sample_posterior(observations, patient_cells, prior, args.p0, mcmc, np.random.default_rng(args.seed))
    write_posterior_csv(out / "posterior.csv", result)
    summary = result.summary()
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    samples = result.samples
    if args.map_samples and len(samples) > args.map_samples:
        pick = np.linspace(0, len(samples) - 1, args.map_samples).round().astype(int)
        samples = [samples[i] for i in pick]
    refined = refined_risk_map(samples, patients, spec, args.p0, args.eps)
    write_tile(out / "refined.tile", refined)
    cfg = {"observations": args.observations and str(args.observations),
           "patients": [str(p) for p in args.patients],
           "prior": vars(prior), "mcmc": {k: v for k, v in vars(mcmc).items()},
           "p0": args.p0, "eps": args.eps, "map_samples": args.map_samples}
    write_manifest(out, "refine", cfg, args.seed, ["posterior.csv", "summary.json", "refined.tile"])
    print(f"tau mean {summary['tau']['mean']:.6g}, tau_t mean {summary['tau_t']['mean']:.6g}, "
          f"acceptance {result.acceptance_rate:.2f}, refined map {len(refined)} cells")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tracemap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the walker/patient Monte Carlo experiment")
    _add(p, "--trials", 20_000, int)
    _add(p, "--seed", 0, int)
    _model_flags(p, sigma_t_many=True)
    _add(p, "--eps", SIMULATION_EPS, float, help="map truncation probability")
    _add(p, "--out", "simulate-out", Path)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("roc", help="ROC staircase from a trials file")
    p.add_argument("trials_file", type=Path)
    _add(p, "--metric", "both", choices=("risk", "proximity", "both"))
    _add(p, "--out", "roc-out", Path)
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("build-map", help="aggregate patient trajectory files into a tile")
    p.add_argument("patients", nargs="*", type=Path, help="CSV files of t_seconds,x_meters,y_meters")
    _model_flags(p)
    _add(p, "--eps", DEFAULT_EPS, float)
    _add(p, "--name", "map.tile")
    _add(p, "--out", "map-out", Path)
    p.set_defaults(func=cmd_build_map)

    p = sub.add_parser("serve", help="publish every tile in a directory")
    _add(p, "--map-dir", "maps", Path)
    _add(p, "--bind", "127.0.0.1:8765")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("evaluate", help="download a tile (or read one) and score a trajectory locally")
    _add(p, "--endpoint", None, help="host:port of a map server")
    _add(p, "--tile", None, Path)
    p.add_argument("--trajectory", type=Path, required=True)
    _add(p, "--threshold", DEFAULT_THRESHOLD, float)
    p.add_argument("--region", type=int, nargs=6, metavar=("I0", "I1", "J0", "J1", "K0", "K1"),
                   help="requested index ranges (default: everything)")
    _add(p, "--map-version", 0, int)
    _add(p, "--capture", None, Path, help="write every outbound byte to this file")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("refine", help="posterior sampling of the decay precisions and a refined map")
    _add(p, "--observations", None, Path, help="CSV of trajectory_file,outcome")
    _add(p, "--patients", [], Path, many=True)
    _model_flags(p)
    for flag in ("--alpha", "--beta", "--alpha-t", "--beta-t"):
        _add(p, flag, None, float)
    _add(p, "--iterations", 10_000, int)
    _add(p, "--burn-in", 1_000, int)
    _add(p, "--thin", 5, int)
    _add(p, "--proposal-scale", 0.3, float)
    _add(p, "--seed", 0, int)
    _add(p, "--eps", DEFAULT_EPS, float)
    _add(p, "--map-samples", 100, int, help="posterior samples averaged into the refined map (0 = all)")
    _add(p, "--out", "refine-out", Path)
    p.set_defaults(func=cmd_refine)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ParameterDomainError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
