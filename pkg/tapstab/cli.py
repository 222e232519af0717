"""
tapstab command line: generate graphs, build oracles, run STAB/CELF and sweep
the external influence level.
"""

import csv
import json
import logging
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import typer
from rich.console import Console
from rich.logging import RichHandler

from .baselines import (
    CSV_COLUMNS,
    CSV_SCHEMA_VERSION,
    DEFAULT_TIME_LIMIT,
    celf_tap,
    evaluate_seed_set,
    exhaustive_tap,
)
from .config import WORKERS_ENV, ExperimentConfig, load_config, resolve_setting, save_config
from .errors import OracleMismatchError, ResourceGuardError, TapInputError
from .graph import (
    DirectedGraph,
    degree_stats,
    generate_ba,
    generate_er,
    graph_digest,
    load_snap_edgelist,
    read_graph_cache,
    write_graph_cache,
)
from .models import (
    InfluenceSpec,
    exact_sigma,
    influence_spec_from_document,
    influence_spec_to_document,
    sample_worlds,
    with_external,
)
from .sketch import SketchOracle, build_oracles, read_oracle, write_oracle
from .stab import Estimator, StabConfig, TapSolution, choose_sample_counts, run_stab

app = typer.Typer(help="Threshold activation with sketch oracles (STAB) and baselines.")
console = Console()

SWEEP_COLUMNS = [
    "schema_version",
    "ep_max",
    "threshold",
    "seeds",
    "mean",
    "stderr",
    "normalized",
    "offset",
    "external_fraction",
    "stopped_by",
    "oracle_ms",
    "greedy_ms",
]

ConfigOption = typer.Option(None, "--config", "-c", help="Experiment config (JSON or YAML)")


def _say(message: str) -> None:
    console.print(message, markup=False, highlight=False, soft_wrap=True)


@contextmanager
def _exit_codes():
    try:
        yield
    except ResourceGuardError as e:
        _say(f"❌ {e}")
        raise typer.Exit(code=3)
    except TapInputError as e:
        _say(f"❌ {e}")
        raise typer.Exit(code=2)


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging")):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


# ---------------- helpers ---------------- #


def _load_experiment(path: Optional[Path], seed: Optional[int]) -> Tuple[dict, ExperimentConfig]:
    doc = load_config(path)
    cfg = ExperimentConfig.from_document(doc)
    if seed is not None:
        cfg.seed = int(seed)
    return doc, cfg


def _workers(flag: Optional[int], doc: dict, cfg: ExperimentConfig) -> int:
    value = int(resolve_setting(flag, WORKERS_ENV, doc, "workers", cfg.workers))
    if value < 1:
        raise TapInputError(f"workers must be >= 1, got {value}")
    return value


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _write_json(path: Path, doc: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return path


def _read_json(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise TapInputError(f"missing metadata file {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise TapInputError(f"{path}: {e}") from None


def _append_rows(path: Path, columns: List[str], rows: List[Dict[str, Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        if new:
            writer.writeheader()
        writer.writerows(rows)


def _load_graph(path: Path) -> DirectedGraph:
    """TAPG cache, or a SNAP edge list for anything else."""
    if path.suffix == ".tapg":
        return read_graph_cache(path)
    g, _ = load_snap_edgelist(path)
    return g


def _influence_doc(
    cfg: ExperimentConfig,
    model: Optional[str] = None,
    ip_max: Optional[float] = None,
    ep_max: Optional[float] = None,
) -> Dict[str, Any]:
    doc = dict(cfg.influence)
    if model is not None:
        doc["model"] = model
    if ip_max is not None:
        doc["ip_max"] = ip_max
    if ep_max is not None:
        doc["ext"] = _external_doc(ep_max)
    # parameters must be reproducible from the document alone
    doc.setdefault("param_seed", cfg.stream_seeds()["params"])
    return doc


def _external_doc(ep_max: float) -> Dict[str, Any]:
    if ep_max == 0:
        return {"kind": "none"}
    return {"kind": "bernoulli", "ep_max": float(ep_max)}


def _stab_config(base: Dict[str, Any], threshold: float, **overrides: Any) -> StabConfig:
    doc = dict(base)
    doc.update({k: v for k, v in overrides.items() if v is not None})
    doc["threshold"] = float(threshold)
    return StabConfig.from_document(doc)


# stab settings that shape the greedy only; the rest stays as the oracle was built
SOLVE_STAB_KEYS = ("estimator", "lazy_eval", "enforce_cea_stop")


def _oracle_stab_base(meta: Dict[str, Any], file_stab: Dict[str, Any]) -> Dict[str, Any]:
    if "stab" not in meta:
        return dict(file_stab)
    base = dict(meta["stab"])
    base.update({k: v for k, v in file_stab.items() if k in SOLVE_STAB_KEYS})
    return base


def _thresholds(flag: Optional[List[float]], cfg: ExperimentConfig) -> List[float]:
    if flag:
        cfg.thresholds = [float(t) for t in flag]
    return cfg.require_thresholds()


# ---------------- commands ---------------- #


@app.command()
def generate(
    kind: str = typer.Argument(..., help="er, ba or snap"),
    n: Optional[int] = typer.Option(None, "--n", help="Node count (er, ba)"),
    p: Optional[float] = typer.Option(None, "--p", help="ER edge probability, default 2/n"),
    edges_per_node: Optional[int] = typer.Option(None, "--edges-per-node", "-m", help="BA attachments per node"),
    input_path: Optional[Path] = typer.Option(None, "--input", "-i", help="SNAP edge list (snap)"),
    symmetrize: Optional[bool] = typer.Option(None, "--symmetrize/--no-symmetrize", help="Add reverse edges (snap)"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed"),
    out: Path = typer.Option(Path("graph.tapg"), "--out", "-o", help="Graph cache to write"),
    config: Optional[Path] = ConfigOption,
):
    """Generate or ingest a graph and write the binary cache."""
    with _exit_codes():
        _, cfg = _load_experiment(config, seed)
        section = cfg.graph
        kind = kind.lower()
        graph_seed = cfg.stream_seeds()["graph"]
        meta: Dict[str, Any] = {"kind": kind}

        if kind == "er":
            n = int(resolve_setting(n, None, section, "n", 1000))
            if n < 1:
                raise TapInputError(f"n must be >= 1, got {n}")
            p = float(resolve_setting(p, None, section, "p", min(1.0, 2.0 / n)))
            _say(f"🔍 Generating ER graph n={n} p={p:.6g}")
            g = generate_er(n, p, graph_seed)
            meta.update({"n": n, "p": p})
        elif kind == "ba":
            n = int(resolve_setting(n, None, section, "n", 1000))
            m0 = int(resolve_setting(edges_per_node, None, section, "edges_per_node", 1))
            _say(f"🔍 Generating BA graph n={n} edges_per_node={m0}")
            g = generate_ba(n, m0, graph_seed)
            meta.update({"n": n, "edges_per_node": m0})
        elif kind == "snap":
            source = resolve_setting(input_path, None, section, "path")
            if source is None:
                raise TapInputError("snap ingestion needs --input FILE")
            sym = bool(resolve_setting(symmetrize, None, section, "symmetrize", False))
            _say(f"🔍 Reading SNAP edge list {source}")
            g, id_map = load_snap_edgelist(Path(source), symmetrize=sym)
            meta.update({"path": str(source), "symmetrize": sym, "id_map": id_map.tolist()})
        else:
            raise TapInputError(f"unknown graph kind {kind!r} (expected er, ba or snap)")

        write_graph_cache(g, out)
        stats = degree_stats(g)
        meta.update({"graph_sha256": graph_digest(g), "stats": stats, "config_echo": cfg.echo()})
        _write_json(_sidecar(out), meta)
        _say(
            f"✅ {out}: n={stats['n']} m={stats['m']} "
            f"max_out={stats['max_out_degree']} max_in={stats['max_in_degree']} "
            f"mean_out={stats['mean_out_degree']:.3f}"
        )


@app.command("build-oracles")
def build_oracles_cmd(
    graph: Path = typer.Option(..., "--graph", "-g", help="Graph cache or edge list"),
    out: Path = typer.Option(Path("oracle.tapo"), "--out", "-o", help="Oracle file to write"),
    model: Optional[str] = typer.Option(None, "--model", help="ic or lt"),
    ip_max: Optional[float] = typer.Option(None, "--ip-max", help="Edge parameters ~ U[0, ip_max]"),
    ep_max: Optional[float] = typer.Option(None, "--ep-max", help="External probabilities ~ U[0, ep_max]"),
    alpha: Optional[float] = typer.Option(None, "--alpha"),
    delta: Optional[float] = typer.Option(None, "--delta"),
    eps_sketch: Optional[float] = typer.Option(None, "--eps-sketch"),
    ell: Optional[int] = typer.Option(None, "--ell", help="Override the number of worlds"),
    k: Optional[int] = typer.Option(None, "--k", help="Override the sketch size"),
    threshold: Optional[List[float]] = typer.Option(None, "--threshold", "-T"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed"),
    workers: Optional[int] = typer.Option(None, "--workers", "-w"),
    config: Optional[Path] = ConfigOption,
):
    """Sample worlds, build the bottom-k oracles and write the TAPO file."""
    with _exit_codes():
        doc, cfg = _load_experiment(config, seed)
        n_workers = _workers(workers, doc, cfg)
        g = _load_graph(graph)
        if threshold:
            cfg.thresholds = [float(t) for t in threshold]
        # T only feeds validation and the alpha_t sketch-size rule
        t_for_counts = max(cfg.thresholds) if cfg.thresholds else float(g.node_count)
        stab_cfg = _stab_config(
            cfg.stab, t_for_counts, alpha=alpha, delta=delta, eps_sketch=eps_sketch,
            ell_override=ell, k_override=k,
        )
        influence = _influence_doc(cfg, model, ip_max, ep_max)
        spec = influence_spec_from_document(influence, g)
        seeds = cfg.stream_seeds()

        ell_, k_ = choose_sample_counts(stab_cfg, g.node_count)
        _say(f"🔍 Sampling {ell_} worlds (k={k_}) with {n_workers} workers")
        started = time.perf_counter()
        worlds = sample_worlds(g, spec, ell_, seeds["worlds"], workers=n_workers)
        oracle = build_oracles(worlds, k_, seeds["ranks"], workers=n_workers)
        elapsed = time.perf_counter() - started
        write_oracle(oracle, out)

        cfg_echo = cfg.echo()
        cfg_echo["workers"] = n_workers
        _write_json(_sidecar(out), {
            "graph_sha256": graph_digest(g),
            "n": oracle.n,
            "ell": oracle.ell,
            "k": oracle.k,
            "offset": oracle.offset,
            "rank_seed": oracle.rank_seed,
            "influence": influence_spec_to_document(spec),
            "stab": stab_cfg.to_document(),
            "build_seconds": elapsed,
            "config_echo": cfg_echo,
        })
        _say(f"✅ {out}: ell={oracle.ell} k={oracle.k} offset={oracle.offset:.4f} built in {elapsed:.2f}s")


def _paired_oracle(g: DirectedGraph, oracle_path: Path) -> Tuple[SketchOracle, Dict[str, Any]]:
    meta = _read_json(_sidecar(oracle_path))
    digest = graph_digest(g)
    if meta.get("graph_sha256") != digest:
        raise OracleMismatchError(
            f"{oracle_path} was built for graph {str(meta.get('graph_sha256'))[:12]}, "
            f"this graph is {digest[:12]}"
        )
    return read_oracle(oracle_path), meta


@app.command()
def run(
    graph: Path = typer.Option(..., "--graph", "-g", help="Graph cache or edge list"),
    oracle_path: Optional[Path] = typer.Option(None, "--oracle", help="TAPO file (stab)"),
    threshold: Optional[List[float]] = typer.Option(None, "--threshold", "-T"),
    algorithm: str = typer.Option("stab", "--algorithm", "-a", help="stab or celf"),
    estimator: Optional[Estimator] = typer.Option(None, "--estimator", help="c1 or c2"),
    lazy: Optional[bool] = typer.Option(None, "--lazy/--no-lazy", help="Lazy gain re-evaluation"),
    cea_stop: Optional[bool] = typer.Option(None, "--cea-stop/--no-cea-stop", help="Stop on gain < 1"),
    eval_samples: Optional[int] = typer.Option(None, "--eval-samples"),
    celf_samples: Optional[int] = typer.Option(None, "--celf-samples"),
    time_limit: float = typer.Option(DEFAULT_TIME_LIMIT, "--time-limit", help="CELF wall-clock limit (s)"),
    model: Optional[str] = typer.Option(None, "--model", help="ic or lt (celf without oracle)"),
    ip_max: Optional[float] = typer.Option(None, "--ip-max"),
    ep_max: Optional[float] = typer.Option(None, "--ep-max"),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir", "-o"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed"),
    workers: Optional[int] = typer.Option(None, "--workers", "-w"),
    config: Optional[Path] = ConfigOption,
):
    """Solve TAP for every threshold, evaluate by Monte Carlo and append CSV rows."""
    with _exit_codes():
        doc, cfg = _load_experiment(config, seed)
        n_workers = _workers(workers, doc, cfg)
        thresholds = _thresholds(threshold, cfg)
        algorithm = algorithm.lower()
        if algorithm not in ("stab", "celf"):
            raise TapInputError(f"unknown algorithm {algorithm!r} (expected stab or celf)")
        g = _load_graph(graph)

        oracle: Optional[SketchOracle] = None
        meta: Dict[str, Any] = {}
        if oracle_path is not None:
            oracle, meta = _paired_oracle(g, oracle_path)
            influence = dict(meta["influence"])
            if seed is None and "config_echo" in meta:
                cfg.seed = int(meta["config_echo"].get("seed", cfg.seed))
        elif algorithm == "stab":
            raise TapInputError("stab needs --oracle (build one with build-oracles)")
        else:
            influence = _influence_doc(cfg, model, ip_max, ep_max)
        spec = influence_spec_from_document(influence, g)

        seeds = cfg.stream_seeds()
        n_eval = int(resolve_setting(eval_samples, None, doc, "eval_samples", cfg.eval_samples))
        n_celf = int(resolve_setting(celf_samples, None, doc, "celf_samples", cfg.celf_samples))
        out = Path(resolve_setting(out_dir, None, doc, "output_dir", cfg.output_dir))

        rows = []
        guard_tripped = False
        for t in thresholds:
            _say(f"🔍 {algorithm.upper()} T={t:g}")
            started = time.perf_counter()
            if algorithm == "stab":
                stab_cfg = _stab_config(
                    _oracle_stab_base(meta, cfg.stab), t,
                    estimator=estimator, lazy_eval=lazy, enforce_cea_stop=cea_stop,
                )
                solution = run_stab(g, spec, stab_cfg, oracle)
                label = f"stab-{stab_cfg.estimator.value}"
            else:
                solution = celf_tap(g, spec, t, n_celf, seeds["celf"], time_limit=time_limit, workers=n_workers)
                label = "celf"
                guard_tripped |= bool(solution.config_echo.get("time_limit_hit"))
            runtime_ms = (time.perf_counter() - started) * 1000.0

            report = evaluate_seed_set(g, spec, solution.seeds, n_eval, seeds["eval"], threshold=t, workers=n_workers)
            rows.append(report.to_csv_row(t, label, len(solution.seeds), runtime_ms))
            _write_solution(out / f"{label}_T{t:g}.json", solution, report, runtime_ms, cfg, meta)
            _say(
                f"✅ T={t:g}: {len(solution.seeds)} seeds, sigma={report.mean_activation:.2f} "
                f"({report.normalized:.3f} of T), {solution.stopped_by.value}"
            )

        _append_rows(out / "results.csv", CSV_COLUMNS, rows)
        save_config(cfg.echo(), out / "config_echo.json")
        _say(f"📁 Results in {out}")
        if guard_tripped:
            raise ResourceGuardError(f"CELF hit the {time_limit:g}s time limit; partial results written")


def _write_solution(path, solution: TapSolution, report, runtime_ms, cfg: ExperimentConfig, meta) -> None:
    doc = solution.to_document()
    doc.update({
        "evaluation": report.to_document(),
        "runtime_ms": runtime_ms,
        "experiment": cfg.echo(),
        "oracle": {key: meta[key] for key in ("graph_sha256", "ell", "k", "offset", "rank_seed") if key in meta},
    })
    _write_json(path, doc)


@app.command("sweep-external")
def sweep_external(
    graph: Path = typer.Option(..., "--graph", "-g", help="Graph cache or edge list"),
    ep_max: Optional[List[float]] = typer.Option(None, "--ep-max", help="Repeat for each sweep point"),
    threshold: Optional[List[float]] = typer.Option(None, "--threshold", "-T"),
    model: Optional[str] = typer.Option(None, "--model"),
    ip_max: Optional[float] = typer.Option(None, "--ip-max"),
    alpha: Optional[float] = typer.Option(None, "--alpha"),
    ell: Optional[int] = typer.Option(None, "--ell"),
    k: Optional[int] = typer.Option(None, "--k"),
    eval_samples: Optional[int] = typer.Option(None, "--eval-samples"),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir", "-o"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    workers: Optional[int] = typer.Option(None, "--workers", "-w"),
    config: Optional[Path] = ConfigOption,
):
    """For each ep_max rebuild the external part and the oracles, then run STAB-C2."""
    with _exit_codes():
        doc, cfg = _load_experiment(config, seed)
        n_workers = _workers(workers, doc, cfg)
        thresholds = _thresholds(threshold, cfg)
        if ep_max:
            cfg.ep_max_sweep = [float(e) for e in ep_max]
        cfg.validate()
        g = _load_graph(graph)
        base = influence_spec_from_document(_influence_doc(cfg, model, ip_max), g)
        seeds = cfg.stream_seeds()
        n_eval = int(resolve_setting(eval_samples, None, doc, "eval_samples", cfg.eval_samples))
        out = Path(resolve_setting(out_dir, None, doc, "output_dir", cfg.output_dir))

        rows = []
        for ep in cfg.ep_max_sweep:
            spec = with_external(base, _external_doc(ep), g)
            oracles: Dict[Tuple[int, int], Tuple[SketchOracle, float]] = {}
            for t in thresholds:
                stab_cfg = _stab_config(
                    cfg.stab, t, estimator=Estimator.C2, alpha=alpha, ell_override=ell, k_override=k,
                )
                counts = choose_sample_counts(stab_cfg, g.node_count)
                if counts not in oracles:
                    started = time.perf_counter()
                    worlds = sample_worlds(g, spec, counts[0], seeds["worlds"], workers=n_workers)
                    built = build_oracles(worlds, counts[1], seeds["ranks"], workers=n_workers)
                    oracles[counts] = (built, (time.perf_counter() - started) * 1000.0)
                oracle, oracle_ms = oracles[counts]

                started = time.perf_counter()
                solution = run_stab(g, spec, stab_cfg, oracle)
                greedy_ms = (time.perf_counter() - started) * 1000.0
                report = evaluate_seed_set(g, spec, solution.seeds, n_eval, seeds["eval"], threshold=t, workers=n_workers)
                rows.append({
                    "schema_version": CSV_SCHEMA_VERSION,
                    "ep_max": ep,
                    "threshold": t,
                    "seeds": len(solution.seeds),
                    "mean": report.mean_activation,
                    "stderr": report.std_error,
                    "normalized": report.normalized,
                    "offset": oracle.offset,
                    "external_fraction": oracle.offset / t,
                    "stopped_by": solution.stopped_by.value,
                    "oracle_ms": round(oracle_ms, 3),
                    "greedy_ms": round(greedy_ms, 3),
                })
                _say(f"✅ ep_max={ep:g} T={t:g}: {len(solution.seeds)} seeds, O/T={oracle.offset / t:.3f}")

        _append_rows(out / "sweep_external.csv", SWEEP_COLUMNS, rows)
        save_config(cfg.echo(), out / "config_echo.json")
        _say(f"📁 Sweep written to {out / 'sweep_external.csv'}")


def _parse_seeds(text: Optional[str]) -> Optional[List[int]]:
    if text is None:
        return None
    try:
        return [int(tok) for tok in text.replace(",", " ").split()]
    except ValueError:
        raise TapInputError(f"seeds must be a comma separated list of node ids, got {text!r}") from None


@app.command("brute-force")
def brute_force(
    graph: Path = typer.Option(..., "--graph", "-g", help="Graph cache or edge list"),
    seed_set: Optional[str] = typer.Option(None, "--seeds", help="Node ids, e.g. 0,3"),
    threshold: Optional[float] = typer.Option(None, "--threshold", "-T"),
    model: Optional[str] = typer.Option(None, "--model"),
    ip_max: Optional[float] = typer.Option(None, "--ip-max"),
    ep_max: Optional[float] = typer.Option(None, "--ep-max"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Also write the JSON here"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    config: Optional[Path] = ConfigOption,
):
    """Exact sigma of a seed set and the exhaustive TAP optimum on tiny graphs."""
    with _exit_codes():
        _, cfg = _load_experiment(config, seed)
        g = _load_graph(graph)
        influence = _influence_doc(cfg, model, ip_max, ep_max)
        spec: InfluenceSpec = influence_spec_from_document(influence, g)
        result: Dict[str, Any] = {"influence": influence, "config_echo": cfg.echo()}

        chosen = _parse_seeds(seed_set)
        if chosen is not None:
            value = exact_sigma(g, spec, chosen)
            result["seeds"] = chosen
            result["exact_sigma"] = str(value)
            result["exact_sigma_float"] = float(value)
        if threshold is not None:
            best = sorted(exhaustive_tap(g, spec, threshold))
            result["threshold"] = threshold
            result["optimum"] = best
            result["optimum_size"] = len(best)
        if chosen is None and threshold is None:
            raise TapInputError("give --seeds, --threshold or both")

        text = json.dumps(result, indent=2, sort_keys=True)
        if out is not None:
            _write_json(out, result)
        typer.echo(text)


if __name__ == "__main__":
    app()
