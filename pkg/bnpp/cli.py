from __future__ import annotations

import json
from contextlib import contextmanager
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional

import typer
from rich.console import Console
from rich.table import Table

from . import paths
from .beliefs import BeliefSet, PathValue
from .config import Settings, load as load_config, write_default
from .counting import RngSeed, UEstimate, estimate_u_exact, estimate_u_fact, estimate_u_full, sample_uniform_dag
from .db import connect
from .errors import BnppError, DimensionError
from .experiments import (
    BeliefGenSpec,
    ExperimentReport,
    chain_experiment,
    collider_experiment,
    fact_vs_full_experiment,
    large_experiment,
    small_n_approx_experiment,
)
from .graph import MAX_ENUMERATION_NODES, edge_differences, shd, to_pdag
from .joint import JointPrior, fit_joint
from .log import configure
from .network import forward_sample, synthetic_network
from .score import ScoreConfig
from .search import Scorer, exhaustive_search, greedy_search
from .serialize import (
    graph_to_json,
    read_beliefs,
    read_beliefs_names,
    read_dataset,
    read_graph,
    read_network,
    write_dataset,
    write_graph,
    write_network,
    write_pdag,
    write_prior,
    write_provenance,
    write_trace,
)

app = typer.Typer(add_completion=False, help="bnpp: Bayesian-network structure learning with path-belief priors.")
console = Console()


class UMethod(str, Enum):
    fact = "FACT"
    full = "FULL"
    exact = "EXACT"


class Operator(str, Enum):
    standard = "standard"
    swap = "swap"


class ExperimentName(str, Enum):
    chain = "chain"
    collider = "collider"
    fact_vs_full = "fact-vs-full"
    small_n_approx = "small-n-approx"
    large = "large"


@contextmanager
def _errors() -> Iterator[None]:
    try:
        yield
    except BnppError as exc:
        console.print(f"[red]error[/red]: {exc}")
        raise typer.Exit(code=exc.exit_code) from exc


def _settings(**overrides) -> Settings:
    return load_config(paths.config_path()).override(**overrides)


def _estimate_u(R: BeliefSet, n: int, method: UMethod, cfg: Settings) -> UEstimate:
    if method is UMethod.exact:
        return estimate_u_exact(R, n)
    estimate = estimate_u_fact if method is UMethod.fact else estimate_u_full
    return estimate(R, n, cfg.samples, cfg.laplace, cfg.seed, workers=cfg.workers)


def _count_source(U: UEstimate, R: BeliefSet, n: int) -> UEstimate | None:
    # exact counts whenever enumeration is affordable
    if U.method != "EXACT" and n <= 5:
        return estimate_u_exact(R, n)
    return None


def _fit(beliefs: Path, names: tuple[str, ...], n: int, method: UMethod, cfg: Settings) -> JointPrior:
    bf = read_beliefs(beliefs, names)
    U = _estimate_u(bf.R, n, method, cfg)
    K = bf.resolve(U)
    return fit_joint(K, U, tol=cfg.tol, max_sweeps=cfg.max_sweeps, max_outer=cfg.max_outer)


@app.callback()
def main(
    log_level: Optional[str] = typer.Option(None, "--log-level", help="DEBUG, INFO, WARNING or ERROR."),
):
    with _errors():
        cfg = _settings()
    configure(log_level or cfg.log_level)


@app.command()
def init():
    """
    Write the default config file and create the records database.
    """
    cfg_path = paths.config_path()
    write_default(cfg_path)
    con = connect(paths.db_path())
    con.close()
    console.print(f"[bold]config[/bold]: {cfg_path}")
    console.print(f"[bold]db[/bold]: {paths.db_path()}")


@app.command()
def learn(
    data: Path = typer.Option(..., "--data", help="Dataset CSV."),
    beliefs: Optional[Path] = typer.Option(None, "--beliefs", help="Path beliefs JSON."),
    arities: Optional[Path] = typer.Option(None, "--arities", help="Sidecar JSON of state counts."),
    method: UMethod = typer.Option(UMethod.fact, "--method", help="How U is obtained."),
    samples: Optional[int] = typer.Option(None, "--samples", help="Sampled DAGs for U."),
    laplace: Optional[float] = typer.Option(None, "--laplace", help="Laplace correction."),
    ess: Optional[float] = typer.Option(None, "--ess", help="BDeu equivalent sample size."),
    operator: Operator = typer.Option(Operator.standard, "--operator", help="Add the swap-equivalent step."),
    uniform_prior: bool = typer.Option(False, "--uniform-prior", help="Ignore beliefs."),
    exhaustive: bool = typer.Option(False, "--exhaustive", help="Score every DAG (up to 5 variables)."),
    drop_count_factor: bool = typer.Option(False, "--drop-count-factor", help="Prior is log J_C only."),
    seed: Optional[int] = typer.Option(None, "--seed"),
    workers: Optional[int] = typer.Option(None, "--workers"),
    out: Path = typer.Option(Path("."), "--out", help="Output directory."),
):
    """
    Learn a network from data, optionally guided by path beliefs.
    """
    with _errors():
        cfg = _settings(samples=samples, laplace=laplace, ess=ess, seed=seed, workers=workers)
        dataset = read_dataset(data, arities)
        J = None
        if beliefs is not None and not uniform_prior:
            J = _fit(beliefs, dataset.names, dataset.n_vars, method, cfg)
        count_source = _count_source(J.u, J.beliefs, dataset.n_vars) if J is not None else None
        score_cfg = ScoreConfig(
            ess=cfg.ess,
            prior="uniform" if J is None else "informative",
            drop_count_factor=drop_count_factor,
            count_source=count_source,
        )
        if exhaustive:
            result = exhaustive_search(dataset, J, score_cfg)
        else:
            result = greedy_search(
                dataset, J, score_cfg, swap=operator is Operator.swap, swap_limit=cfg.swap_limit
            )

    out = paths.run_dir(out)
    write_graph(out / paths.GRAPH_FILE, result.dag, dataset.names)
    write_pdag(out / paths.PDAG_FILE, to_pdag(result.dag), dataset.names)
    write_trace(out / paths.TRACE_FILE, result.trace)
    if J is not None:
        write_prior(out / paths.PRIOR_FILE, J, dataset.names)
    write_provenance(
        out / paths.PROVENANCE_FILE,
        command="learn",
        data=str(data),
        beliefs=str(beliefs) if beliefs else None,
        method=method.value if J is not None else None,
        samples=cfg.samples,
        laplace=cfg.laplace,
        seed=cfg.seed,
        ess=cfg.ess,
        operator=operator.value,
        uniform_prior=J is None,
        exhaustive=exhaustive,
        drop_count_factor=drop_count_factor,
    )

    table = Table(title="learned", show_header=True, header_style="bold")
    table.add_column("edges", justify="right")
    table.add_column("data score", justify="right")
    table.add_column("prior score", justify="right")
    table.add_column("steps", justify="right")
    table.add_row(
        str(result.dag.num_edges),
        f"{result.state.data_score:.4f}",
        f"{result.state.prior_score:.4f}",
        str(len(result.trace) - 1),
    )
    console.print(table)
    console.print(f"[bold]out[/bold]: {out}")


@app.command()
def priors(
    beliefs: Path = typer.Option(..., "--beliefs", help="Path beliefs JSON."),
    nodes: int = typer.Option(..., "--nodes", help="Number of nodes of the graphs."),
    method: UMethod = typer.Option(UMethod.fact, "--method", help="How U is obtained."),
    samples: Optional[int] = typer.Option(None, "--samples"),
    laplace: Optional[float] = typer.Option(None, "--laplace"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    workers: Optional[int] = typer.Option(None, "--workers"),
    out: Path = typer.Option(Path("."), "--out", help="Output directory."),
):
    """
    Fit the joint prior J and report how the beliefs were adjusted.
    """
    with _errors():
        cfg = _settings(samples=samples, laplace=laplace, seed=seed, workers=workers)
        names = read_beliefs_names(beliefs)
        if nodes < len(names):
            raise DimensionError(f"beliefs mention {len(names)} nodes but --nodes is {nodes}")
        names = names + tuple(f"_h{i}" for i in range(nodes - len(names)))
        J = _fit(beliefs, names, nodes, method, cfg)

    out = paths.run_dir(out)
    write_prior(out / paths.PRIOR_FILE, J, names)
    write_provenance(
        out / paths.PROVENANCE_FILE, command="priors", beliefs=str(beliefs), nodes=nodes,
        method=method.value, samples=cfg.samples, laplace=cfg.laplace, seed=cfg.seed,
    )

    adjusted = J.adjusted_marginals()
    table = Table(title="coherent" if J.coherent else "incoherent, adjusted", show_header=True, header_style="bold")
    table.add_column("pair")
    for v in PathValue:
        table.add_column(v.symbol, justify="right")
    for k, (var, dist) in enumerate(zip(J.beliefs.variables, J.beliefs.dists)):
        cells = [f"{a:.3f} -> {b:.3f}" for a, b in zip(dist.as_array(), adjusted[k])]
        table.add_row(f"{names[var.source]}, {names[var.target]}", *cells)
    console.print(table)
    agg = sum(p.i_aggregate for p in J.parts)
    console.print(f"[bold]i-aggregate[/bold]: {agg:.6g}")


@app.command()
def score(
    data: Path = typer.Option(..., "--data", help="Dataset CSV."),
    graph: Path = typer.Option(..., "--graph", help="Graph JSON."),
    beliefs: Optional[Path] = typer.Option(None, "--beliefs", help="Path beliefs JSON."),
    arities: Optional[Path] = typer.Option(None, "--arities"),
    method: UMethod = typer.Option(UMethod.fact, "--method"),
    samples: Optional[int] = typer.Option(None, "--samples"),
    laplace: Optional[float] = typer.Option(None, "--laplace"),
    ess: Optional[float] = typer.Option(None, "--ess"),
    seed: Optional[int] = typer.Option(None, "--seed"),
):
    """
    Print data, prior and total score of one graph.
    """
    with _errors():
        cfg = _settings(samples=samples, laplace=laplace, ess=ess, seed=seed)
        dataset = read_dataset(data, arities)
        dag, _ = read_graph(graph, dataset.names)
        J = _fit(beliefs, dataset.names, dataset.n_vars, method, cfg) if beliefs else None
        score_cfg = ScoreConfig(
            ess=cfg.ess,
            prior="uniform" if J is None else "informative",
            count_source=_count_source(J.u, J.beliefs, dataset.n_vars) if J is not None else None,
        )
        state = Scorer(dataset, J, score_cfg).state(dag)

    table = Table(show_header=True, header_style="bold")
    table.add_column("data score", justify="right")
    table.add_column("prior score", justify="right")
    table.add_column("configuration", justify="right")
    table.add_column("total", justify="right")
    table.add_row(
        f"{state.data_score:.4f}",
        f"{state.prior_score:.4f}",
        "-" if state.config_index is None else f"C_{state.config_index} {state.configuration}",
        f"{state.total:.4f}",
    )
    console.print(table)


@app.command()
def simulate(
    network: Path = typer.Option(..., "--network", help="Network JSON."),
    rows: int = typer.Option(200, "--rows", min=0),
    seed: Optional[int] = typer.Option(None, "--seed"),
    out: Path = typer.Option(Path("data.csv"), "--out", help="Dataset CSV to write."),
):
    """
    Sample a dataset from a network.
    """
    with _errors():
        cfg = _settings(seed=seed)
        bn = read_network(network)
        dataset = forward_sample(bn, rows, RngSeed(cfg.seed).generator())
    write_dataset(out, dataset)
    console.print(f"simulated: {rows} rows -> {out}")


@app.command("sample-dags")
def sample_dags(
    nodes: int = typer.Option(..., "--nodes", min=1),
    count: int = typer.Option(..., "--count", min=1),
    seed: Optional[int] = typer.Option(None, "--seed"),
    out: Path = typer.Option(Path("dags.jsonl"), "--out", help="JSON lines, one graph each."),
):
    """
    Draw labeled DAGs uniformly at random.
    """
    with _errors():
        cfg = _settings(seed=seed)
    rng = RngSeed(cfg.seed).generator()
    names = tuple(f"V{i}" for i in range(nodes))
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as fh:
        for _ in range(count):
            fh.write(json.dumps(graph_to_json(sample_uniform_dag(nodes, rng), names)) + "\n")
    console.print(f"sampled: {count} DAGs on {nodes} nodes -> {out}")


@app.command()
def evaluate(
    graph: Path = typer.Option(..., "--graph", help="Learned graph JSON."),
    network: Optional[Path] = typer.Option(None, "--network", help="True network JSON."),
    true_graph: Optional[Path] = typer.Option(None, "--true-graph", help="True graph JSON."),
):
    """
    Structural Hamming distance between learned and true PDAGs.
    """
    with _errors():
        if (network is None) == (true_graph is None):
            raise typer.BadParameter("give exactly one of --network and --true-graph")
        if network is not None:
            bn = read_network(network)
            true_dag, names = bn.dag, bn.names
        else:
            true_dag, names = read_graph(true_graph)
        learned, _ = read_graph(graph, names)
        lp, tp = to_pdag(learned), to_pdag(true_dag)
        diffs = edge_differences(lp, tp)

    table = Table(show_header=True, header_style="bold")
    for col in ("shd", "extra", "missing", "misoriented"):
        table.add_column(col, justify="right")
    table.add_row(str(shd(lp, tp)), str(diffs["extra"]), str(diffs["missing"]), str(diffs["misoriented"]))
    console.print(table)


def _parse_ints(text: Optional[str]) -> Optional[list[int]]:
    if text is None:
        return None
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise typer.BadParameter(f"expected comma-separated integers, got {text!r}") from exc


@app.command()
def experiment(
    name: ExperimentName = typer.Argument(..., help="Which experiment to run."),
    reps: Optional[int] = typer.Option(None, "--reps"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    workers: Optional[int] = typer.Option(None, "--workers"),
    samples: Optional[int] = typer.Option(None, "--samples", help="Sampled DAGs for U."),
    laplace: Optional[float] = typer.Option(None, "--laplace"),
    ess: Optional[float] = typer.Option(None, "--ess"),
    rows: int = typer.Option(200, "--rows", help="Largest dataset of the three-node experiments."),
    step: int = typer.Option(10, "--step", help="Dataset size step of the three-node experiments."),
    nodes: Optional[str] = typer.Option(None, "--nodes", help="Comma-separated node counts."),
    sizes: Optional[str] = typer.Option(None, "--sizes", help="Comma-separated sample sizes."),
    network: Optional[Path] = typer.Option(None, "--network", help="True network for 'large'."),
    nc: int = typer.Option(3, "--nc", help="Belief components for 'large'."),
    cs: int = typer.Option(4, "--cs", help="Nodes per component for 'large'."),
    coherent: bool = typer.Option(False, "--coherent/--incoherent", help="Coherence target for 'large'."),
    out: Path = typer.Option(Path("."), "--out", help="Output directory."),
):
    """
    Run a replicated experiment and write report.csv.
    """
    out = paths.run_dir(out)
    node_list, size_list = _parse_ints(nodes), _parse_ints(sizes)
    with _errors():
        cfg = _settings(reps=reps, seed=seed, workers=workers, samples=samples, laplace=laplace, ess=ess)
        con = connect(out / paths.RECORDS_FILE)
        try:
            report = _run_experiment(name, cfg, con, rows, step, node_list, size_list, network, nc, cs, coherent, out)
        finally:
            con.close()

    report.write_csv(out / paths.REPORT_FILE)
    write_provenance(out / paths.PROVENANCE_FILE, command="experiment", experiment=report.experiment,
                     run_id=report.run_id, seed=report.seed, params=report.params)
    console.print(f"[bold]{report.experiment}[/bold]: {len(report.rows)} rows -> {out / 'report.csv'}")


def _run_experiment(
    name: ExperimentName,
    cfg: Settings,
    con,
    rows: int,
    step: int,
    node_list: Optional[list[int]],
    size_list: Optional[list[int]],
    network: Optional[Path],
    nc: int,
    cs: int,
    coherent: bool,
    out: Path,
) -> ExperimentReport:
    common = {"seed": cfg.seed, "workers": cfg.workers, "con": con}
    if name is ExperimentName.chain:
        return chain_experiment(cfg.reps, max_rows=rows, step=step, ess=cfg.ess, **common)
    if name is ExperimentName.collider:
        return collider_experiment(cfg.reps, max_rows=rows, step=step, ess=cfg.ess, **common)
    if name is ExperimentName.fact_vs_full:
        return fact_vs_full_experiment(node_list or tuple(range(10, 36)), cfg.samples, 0.0, **common)
    if name is ExperimentName.small_n_approx:
        if node_list and max(node_list) > MAX_ENUMERATION_NODES:
            raise DimensionError(f"exact U needs at most {MAX_ENUMERATION_NODES} nodes")
        return small_n_approx_experiment(
            node_list or (4, 5, 6), size_list or tuple(range(100, 10_001, 100)), 1.0, cfg.reps, **common
        )
    if network is not None:
        bn = read_network(network)
    else:
        bn = synthetic_network(20, 3, RngSeed(cfg.seed, 1 << 20).generator())
        write_network(out / "network.json", bn)
    spec = BeliefGenSpec(nc, cs, "coherent" if coherent else "incoherent")
    kwargs = {} if size_list is None else {"sample_sizes": size_list}
    return large_experiment(
        bn, spec, reps=cfg.reps, S=cfg.samples, laplace=cfg.laplace, ess=cfg.ess,
        swap_limit=cfg.swap_limit, tol=cfg.tol, max_sweeps=cfg.max_sweeps, max_outer=cfg.max_outer,
        **kwargs, **common,
    )
