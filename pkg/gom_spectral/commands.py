"""
The command-line operations: simulate a dataset, fit it, score a fit against
the truth, run a benchmark suite, and run the Gibbs baseline. Each command
writes its files plus one manifest into its output directory.
"""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .config import GGOM_CACHE_DIR, resolve_jobs, resolve_seed
from .data_model import (
    BlockPartition,
    Family,
    FlatMatrix,
    ModelParams,
    QuasiTensor,
    flatten,
    halve_binomial,
    unflatten,
)
from .estimator import DEFAULT_EPSILON, FitConfig, fit
from .exceptions import GomError, UsageError, ValidationError
from .formats import (
    RunManifest,
    read_categories,
    read_json,
    read_matrix,
    read_scenario,
    read_suite,
    write_categories,
    write_json,
    write_matrix,
    write_table,
)
from .gibbs import GibbsConfig, gibbs_fit
from .linalg import SvdFactors
from .metrics import aligned_error, noise_stats, residual_covariance, theory_bounds
from .simulate import SimScenario, result_record, run_replications, simulate_data
from .utils import StageTimer
from .vertex_hunting import PruneConfig

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]
DEFAULT_PRUNE = "10,0.4,0.2"


def _profile_columns(K: int) -> List[str]:
    return [f"profile{k + 1}" for k in range(K)]


def parse_column_range(text: str) -> Tuple[int, int]:
    """'a:b' -> half-open 0-based column range (a, b)"""
    try:
        start, stop = (int(part) for part in text.split(":"))
    except ValueError:
        raise UsageError(f"column range must look like a:b, got {text!r}") from None
    if not 0 <= start < stop:
        raise UsageError(f"column range {text!r} is empty or negative")
    return start, stop


def _prune_config(prune: Union[str, PruneConfig, Dict[str, Any], None]) -> Optional[PruneConfig]:
    if prune is None or isinstance(prune, PruneConfig):
        return prune
    if isinstance(prune, dict):
        return PruneConfig(**prune)
    return PruneConfig.parse(str(prune))


def load_data(
    data_path: PathLike,
    family: Union[str, Family],
    categories_path: Optional[PathLike] = None,
    flat: bool = False,
) -> Tuple[FlatMatrix, Optional[QuasiTensor]]:
    """
    Reads a data CSV as the flat matrix of its family.

    Polytomous data is an N x L table of 1-based responses with a category file,
    or with flat=True the one-hot matrix itself. Binomial counts are halved.
    For bernoulli data the optional category file gives column block sizes.
    """
    family = Family.parse(family)
    values = read_matrix(data_path)
    counts = read_categories(categories_path) if categories_path else None
    try:
        if family is Family.BERNOULLI_ONEHOT:
            if counts is None:
                raise UsageError("polytomous data needs a category count file")
            if flat:
                data = FlatMatrix(values, BlockPartition(counts), family)
                return data, unflatten(data)
            quasi = QuasiTensor(values, counts)
            return flatten(quasi), quasi
        if family is Family.BINOMIAL_HALVED:
            partition = BlockPartition(counts) if counts else None
            return halve_binomial(values, partition), None
        partition = BlockPartition(counts) if counts else BlockPartition.singletons(
            values.shape[1]
        )
        return FlatMatrix(values, partition, family), None
    except ValidationError as error:
        where = f"{data_path}" if error.location is None else f"{data_path} {error.location}"
        error.location = where
        raise


def _data_table(truth_data: FlatMatrix, quasi: Optional[QuasiTensor]) -> np.ndarray:
    if quasi is not None:
        return quasi.responses
    if truth_data.family is Family.BINOMIAL_HALVED:
        return 2.0 * truth_data.values
    return truth_data.values


def cmd_simulate(
    scenario_path: PathLike,
    out_dir: PathLike,
    seed: Optional[int] = None,
    replication: int = 0,
) -> RunManifest:
    """
    Simulates one replication of a scenario into out_dir: data.csv (with
    categories.txt or blocks.txt when the family has blocks), truth_pi.csv,
    truth_theta.csv, truth.json and the manifest
    """
    out_dir = Path(out_dir)
    scenario = read_scenario(scenario_path)
    scenario = replace(
        scenario, seed=resolve_seed(seed if seed is not None else scenario.seed)
    )
    manifest = RunManifest(
        "simulate",
        {"scenario": scenario.to_dict(), "replication": int(replication)},
        scenario.seed,
    )
    manifest.add_input(scenario_path)
    run_id = manifest.run_id

    timer = StageTimer()
    with timer.stage("simulate"):
        truth = simulate_data(scenario, replication)
    params = truth.params
    K = params.n_profiles
    blocks = params.partition.sizes

    with timer.stage("write"):
        columns = None
        if truth.quasi is not None:
            columns = [f"item{l + 1}" for l in range(truth.quasi.n_items)]
        written = [
            write_matrix(
                out_dir / "data.csv", _data_table(truth.data, truth.quasi), columns, run_id
            ),
            write_matrix(
                out_dir / "truth_pi.csv", params.memberships, _profile_columns(K), run_id
            ),
            write_matrix(
                out_dir / "truth_theta.csv", params.item_params, _profile_columns(K), run_id
            ),
        ]
        block_file = None
        if scenario.family is Family.BERNOULLI_ONEHOT:
            block_file = "categories.txt"
        elif max(blocks) > 1:
            block_file = "blocks.txt"
        if block_file:
            written.append(write_categories(out_dir / block_file, blocks))
        written.append(
            write_json(
                out_dir / "truth.json",
                {
                    "family": scenario.family.model_name,
                    "k": K,
                    "n": scenario.n,
                    "columns": scenario.n_columns,
                    "blocks": list(blocks),
                    "block_file": block_file,
                    "rho": truth.rho,
                    "replication": int(replication),
                    "clamped_thresholds": truth.clamped,
                    "manifest": "manifest.json",
                    "run_id": run_id,
                },
            )
        )
    for path in written:
        manifest.add_output(path)
    manifest.timings = dict(timer.timings)
    manifest.write(out_dir)
    LOGGER.info(f"Simulated scenario {scenario.name!r} into {out_dir}")
    return manifest


def cmd_fit(
    data_path: PathLike,
    out_dir: PathLike,
    k: int,
    family: Union[str, Family] = "polytomous",
    categories_path: Optional[PathLike] = None,
    prune: Union[str, PruneConfig, None] = DEFAULT_PRUNE,
    epsilon: float = DEFAULT_EPSILON,
    seed: Optional[int] = None,
    flat: bool = False,
) -> RunManifest:
    """
    Fits the spectral estimator and writes vertices, post-processed and raw
    Pi and Theta, the SVD factors, estimate.json and the manifest
    """
    out_dir = Path(out_dir)
    family = Family.parse(family)
    cfg = FitConfig(_prune_config(prune), float(epsilon), resolve_seed(seed))
    if int(k) < 1:
        raise UsageError(f"--k must be a positive integer, got {k}")
    data, _ = load_data(data_path, family, categories_path, flat)

    manifest = RunManifest(
        "fit",
        {"k": int(k), "family": family.model_name, "fit": cfg.as_dict(), "flat": flat},
        cfg.seed,
    )
    manifest.add_input(data_path)
    if categories_path:
        manifest.add_input(categories_path)
    run_id = manifest.run_id

    estimate = fit(data, int(k), cfg)
    profiles = _profile_columns(estimate.n_profiles)
    factors = estimate.factors
    written = [
        write_matrix(
            out_dir / "vertices.csv", np.asarray(estimate.vertices.indices), ["row"], run_id
        ),
        write_matrix(out_dir / "pi.csv", estimate.memberships, profiles, run_id),
        write_matrix(out_dir / "theta.csv", estimate.item_params, profiles, run_id),
        write_matrix(out_dir / "pi_raw.csv", estimate.memberships_raw, profiles, run_id),
        write_matrix(out_dir / "theta_raw.csv", estimate.item_params_raw, profiles, run_id),
        write_matrix(out_dir / "U.csv", factors.U, None, run_id),
        write_matrix(
            out_dir / "singular_values.csv", factors.singular_values, ["sigma"], run_id
        ),
        write_matrix(out_dir / "V.csv", factors.V, None, run_id),
    ]
    if family is Family.BINOMIAL_HALVED:
        written.append(
            write_matrix(
                out_dir / "theta_counts.csv", estimate.expected_counts(), profiles, run_id
            )
        )
    diagnostics = {
        key: value
        for key, value in estimate.diagnostics.items()
        if key not in ("runtime_seconds", "stage_seconds")
    }
    written.append(
        write_json(
            out_dir / "estimate.json",
            {
                "method": "spectral",
                "family": family.model_name,
                "k": estimate.n_profiles,
                "blocks": list(data.partition.sizes),
                "vertices": list(estimate.vertices.indices),
                "pruned": list(estimate.vertices.pruned),
                "diagnostics": diagnostics,
                "manifest": "manifest.json",
                "run_id": run_id,
            },
        )
    )
    for path in written:
        manifest.add_output(path)
    manifest.timings = dict(estimate.diagnostics["stage_seconds"])
    manifest.write(out_dir)
    return manifest


def _read_truth(truth_dir: Path) -> Tuple[ModelParams, Dict[str, Any]]:
    info = read_json(truth_dir / "truth.json")
    params = ModelParams(
        read_matrix(truth_dir / "truth_pi.csv"),
        read_matrix(truth_dir / "truth_theta.csv"),
        Family.parse(info["family"]),
        BlockPartition(info["blocks"]),
    )
    return params, info


def cmd_eval(
    estimate_dir: PathLike,
    truth_dir: PathLike,
    out_dir: Optional[PathLike] = None,
    covariance_columns: Optional[str] = None,
    bounds: bool = False,
) -> pd.DataFrame:
    """
    Scores an estimate directory against a truth directory into metrics.csv
    (by default under estimate_dir/eval, next to its own manifest).

    covariance_columns ('a:b') also writes the residual covariance of those
    columns under the estimate and under the truth; bounds writes bounds.json.
    """
    estimate_dir = Path(estimate_dir)
    truth_dir = Path(truth_dir)
    out_dir = Path(out_dir) if out_dir is not None else estimate_dir / "eval"
    info = read_json(estimate_dir / "estimate.json")
    Pi_hat = read_matrix(estimate_dir / "pi.csv")
    Theta_hat = read_matrix(estimate_dir / "theta.csv")
    truth, truth_info = _read_truth(truth_dir)
    if Pi_hat.shape != truth.memberships.shape or Theta_hat.shape != truth.item_params.shape:
        raise ValidationError(
            f"estimate shapes {Pi_hat.shape}, {Theta_hat.shape} do not match truth "
            f"{truth.memberships.shape}, {truth.item_params.shape}"
        )

    manifest = RunManifest(
        "eval",
        {"covariance_columns": covariance_columns, "bounds": bounds},
        0,
    )
    for path in (
        estimate_dir / "pi.csv",
        estimate_dir / "theta.csv",
        truth_dir / "truth_pi.csv",
        truth_dir / "truth_theta.csv",
    ):
        manifest.add_input(path)
    run_id = manifest.run_id

    error = aligned_error(Pi_hat, Theta_hat, truth)
    n_rows, K = truth.memberships.shape
    table = pd.DataFrame(
        [
            {
                "replication": truth_info.get("replication", 0),
                "method": info.get("method", "spectral"),
                "family": truth.family.model_name,
                "N": n_rows,
                "J": truth.item_params.shape[0],
                "K": K,
                "metric": metric,
                "value": value,
            }
            for metric, value in error.as_dict().items()
        ]
    )
    written = [write_table(out_dir / "metrics.csv", table, run_id)]

    if covariance_columns or bounds:
        block_file = truth_info.get("block_file")
        data, _ = load_data(
            truth_dir / "data.csv",
            truth.family,
            truth_dir / block_file if block_file else None,
        )
    if covariance_columns:
        start, stop = parse_column_range(covariance_columns)
        if stop > data.shape[1]:
            raise UsageError(f"column range {start}:{stop} exceeds J={data.shape[1]}")
        columns = [f"j{j}" for j in range(start, stop)]
        written.append(
            write_matrix(
                out_dir / "covariance_estimated.csv",
                residual_covariance(data.values, Pi_hat, Theta_hat, (start, stop)),
                columns,
                run_id,
            )
        )
        written.append(
            write_matrix(
                out_dir / "covariance_true.csv",
                residual_covariance(
                    data.values, truth.memberships, truth.item_params, (start, stop)
                ),
                columns,
                run_id,
            )
        )
    if bounds:
        factors = SvdFactors(
            read_matrix(estimate_dir / "U.csv"),
            read_matrix(estimate_dir / "singular_values.csv")[:, 0],
            read_matrix(estimate_dir / "V.csv"),
        )
        report = theory_bounds(
            truth, noise_stats(truth, float(truth_info.get("rho") or 0.0)), factors
        )
        written.append(write_json(out_dir / "bounds.json", report.as_dict()))

    for path in written:
        manifest.add_output(path)
    manifest.write(out_dir)
    LOGGER.info(
        f"Evaluated {estimate_dir}: l2inf(Pi)={error.l2inf_pi:.4g}, "
        f"max|Theta|={error.maxabs_theta:.4g}"
    )
    return table


def _gibbs_replications(
    scenario: SimScenario, cfg: GibbsConfig, jobs: int
) -> pd.DataFrame:
    """Gibbs posterior means scored like run_replications, one chain per replication"""
    records: List[Dict[str, Any]] = []
    indices = list(range(scenario.replications))

    def run_one(replication: int) -> List[Dict[str, Any]]:
        truth = simulate_data(scenario, replication)
        estimate = gibbs_fit(truth.quasi, scenario.k, cfg, stream=replication)
        error = aligned_error(estimate.memberships, estimate.item_params, truth.params)
        seconds = estimate.diagnostics["runtime_seconds"]
        return [
            result_record(scenario, replication, metric, value, seconds)
            for metric, value in error.as_dict().items()
        ]

    with ThreadPoolExecutor(max_workers=jobs) as executor:
        future_to_rep = {executor.submit(run_one, r): r for r in indices}
        for idx, future in enumerate(as_completed(future_to_rep)):
            replication = future_to_rep[future]
            try:
                records += future.result()
            except GomError as e:
                LOGGER.error(f"Gibbs replication {replication} of {scenario.name!r} failed: {e}")
                records.append(
                    result_record(
                        scenario,
                        replication,
                        "failed",
                        np.nan,
                        0.0,
                        status="failed",
                        error=f"{type(e).__name__}: {e}",
                    )
                )
            LOGGER.info(
                f"-- Gibbs replication percentage: {round((idx + 1) / len(indices) * 100, 2)}%"
            )
    table = pd.DataFrame.from_records(records)
    return table.sort_values(["replication", "metric"], kind="stable").reset_index(drop=True)


def _method_seconds(table: pd.DataFrame) -> float:
    ok = table[table["status"] == "ok"]
    if ok.empty:
        return float("nan")
    return float(ok.groupby("replication")["seconds"].first().mean())


def summarize_bench(table: pd.DataFrame) -> Dict[str, Any]:
    """Per scenario and method: failure count, mean seconds, metric means and medians"""
    summary: Dict[str, Any] = {}
    for scenario, by_scenario in table.groupby("scenario", sort=False):
        entry: Dict[str, Any] = {}
        for method, rows in by_scenario.groupby("method", sort=False):
            ok = rows[rows["status"] == "ok"]
            stats = ok.groupby("metric")["value"].agg(["mean", "median"])
            entry[method] = {
                "replications": int(rows["replication"].nunique()),
                "failed": int((rows["status"] == "failed").sum()),
                "mean_seconds": _method_seconds(rows),
                "metrics": {
                    metric: {"mean": float(row["mean"]), "median": float(row["median"])}
                    for metric, row in stats.iterrows()
                },
            }
        if "gibbs" in entry and "spectral" in entry:
            entry["speedup"] = entry["gibbs"]["mean_seconds"] / entry["spectral"]["mean_seconds"]
        summary[str(scenario)] = entry
    return summary


def cmd_bench(
    suite_path: PathLike,
    out_dir: PathLike,
    jobs: Optional[int] = None,
    seed: Optional[int] = None,
    cache: Union[str, bool, None] = None,
) -> Dict[str, Any]:
    """
    Runs every scenario of a suite and writes bench.csv (one row per scenario,
    method, replication and metric) and summary.json
    """
    out_dir = Path(out_dir)
    suite = read_suite(suite_path)
    jobs = resolve_jobs(jobs)
    if cache is None:
        cache = GGOM_CACHE_DIR
    fit_settings = dict(suite.fit)
    cfg = FitConfig(
        _prune_config(fit_settings.pop("prune", DEFAULT_PRUNE)),
        float(fit_settings.pop("epsilon", DEFAULT_EPSILON)),
        resolve_seed(fit_settings.pop("seed", seed)),
    )
    if fit_settings:
        raise UsageError(f"unknown fit settings: {', '.join(sorted(fit_settings))}")

    manifest = RunManifest(
        "bench",
        {
            "scenarios": [s.to_dict() for s in suite.scenarios],
            "fit": cfg.as_dict(),
            "gibbs": suite.gibbs,
            "bounds": suite.bounds,
        },
        cfg.seed,
    )
    manifest.add_input(suite_path)
    run_id = manifest.run_id

    timer = StageTimer()
    tables = []
    for scenario in suite.scenarios:
        scenario = replace(
            scenario, seed=resolve_seed(seed if seed is not None else scenario.seed)
        )
        with timer.stage(f"{scenario.name}/spectral"):
            spectral = run_replications(scenario, cfg, jobs, cache, bounds=suite.bounds)
        tables.append(spectral.assign(method="spectral"))
        if suite.gibbs is not None and scenario.family is Family.BERNOULLI_ONEHOT:
            gibbs_cfg = GibbsConfig(**suite.gibbs)
            with timer.stage(f"{scenario.name}/gibbs"):
                gibbs = _gibbs_replications(scenario, gibbs_cfg, jobs)
            tables.append(gibbs.assign(method="gibbs"))

    order = {s.name: idx for idx, s in enumerate(suite.scenarios)}
    bench = pd.concat(tables, ignore_index=True)
    bench = bench.sort_values(
        ["scenario", "method", "replication", "metric"],
        key=lambda column: column.map(order) if column.name == "scenario" else column,
        kind="stable",
    ).reset_index(drop=True)
    columns = ["scenario", "method"] + [c for c in bench.columns if c not in ("scenario", "method")]
    bench = bench[columns]

    summary = summarize_bench(bench)
    written = [
        write_table(out_dir / "bench.csv", bench, run_id),
        write_json(out_dir / "summary.json", {"run_id": run_id, "scenarios": summary}),
    ]
    for path in written:
        manifest.add_output(path)
    manifest.timings = dict(timer.timings)
    manifest.write(out_dir)
    return summary


def cmd_gibbs(
    data_path: PathLike,
    out_dir: PathLike,
    k: int,
    categories_path: PathLike,
    burnin: int = 5000,
    samples: int = 2000,
    alpha: Optional[Sequence[float]] = None,
    beta: Optional[Sequence[float]] = None,
    seed: Optional[int] = None,
    flat: bool = False,
) -> RunManifest:
    """
    Runs the Gibbs baseline on polytomous data and writes pi.csv, theta.csv,
    loglik.csv, estimate.json and the manifest
    """
    out_dir = Path(out_dir)
    cfg = GibbsConfig(alpha, beta, int(burnin), int(samples), resolve_seed(seed))
    _, quasi = load_data(data_path, Family.BERNOULLI_ONEHOT, categories_path, flat)

    manifest = RunManifest("gibbs", {"k": int(k), "gibbs": cfg.as_dict(), "flat": flat}, cfg.seed)
    manifest.add_input(data_path)
    manifest.add_input(categories_path)
    run_id = manifest.run_id

    estimate = gibbs_fit(quasi, int(k), cfg)
    profiles = _profile_columns(int(k))
    written = [
        write_matrix(out_dir / "pi.csv", estimate.memberships, profiles, run_id),
        write_matrix(out_dir / "theta.csv", estimate.item_params, profiles, run_id),
        write_matrix(
            out_dir / "loglik.csv", estimate.log_likelihood, ["log_likelihood"], run_id
        ),
        write_json(
            out_dir / "estimate.json",
            {
                "method": "gibbs",
                "family": Family.BERNOULLI_ONEHOT.model_name,
                "k": int(k),
                "blocks": list(quasi.partition.sizes),
                "gibbs": cfg.as_dict(),
                "manifest": "manifest.json",
                "run_id": run_id,
            },
        ),
    ]
    for path in written:
        manifest.add_output(path)
    manifest.timings = {"gibbs": estimate.diagnostics["runtime_seconds"]}
    manifest.write(out_dir)
    return manifest
