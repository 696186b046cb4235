"""Label-efficiency benchmark: uncertainty sampling vs random on synthetic pools.

Runs the simulated loop for each (strategy, seed) pair on a 15-class
imbalanced pool, then compares median-over-seeds macro-F1 at matched label
budgets and the median number of labels each strategy needs to reach a
target macro-F1 (censored at the budget when never reached).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .active import (
    SimulationConfig,
    generate_synthetic_pool,
    scaled_group_counts,
    simulate,
)
from .head import TrainConfig


@dataclass(frozen=True)
class BenchmarkConfig:
    seeds: int = 21
    budget: int = 400
    strategies: tuple[str, ...] = ("entropy", "random")
    dimension: int = 32
    cluster_separation: float = 4.0
    noise_sigma: float = 1.0
    divisor: int = 10
    batch_size_query: int = 25
    epochs: int = 100
    # Both arms train unweighted so the comparison isolates the query
    # strategy itself: inverse-frequency weighting substitutes for the
    # class-balancing that uncertainty sampling provides naturally, which
    # equalizes the arms and hides the effect under measurement noise.
    weight_mode: str = "none"
    target_macro_f1: float = 0.90
    min_matched_budget: int = 100


@dataclass
class StrategyResult:
    # curves[seed] = [(labels_used, macro_f1, accuracy), ...]
    curves: list[list[tuple[int, float, float]]] = field(default_factory=list)
    labels_to_target: list[int | None] = field(default_factory=list)


@dataclass
class BenchmarkResult:
    config: BenchmarkConfig
    by_strategy: dict[str, StrategyResult]
    matched_budgets: list[int]
    medians: dict[str, list[float]]  # median macro-F1 per matched budget
    dominance_ok: bool
    dominance_failures: list[int]
    median_labels_to_target: dict[str, float]
    censored: dict[str, int]
    label_ratio: float
    ratio_ok: bool


def _median(values: list[float]) -> float:
    return float(np.median(np.asarray(values, dtype=float)))


def labels_to_target(curve: list[tuple[int, float, float]], target: float) -> int | None:
    for labels_used, macro_f1, _acc in curve:
        if macro_f1 >= target:
            return labels_used
    return None


def run_benchmark(config: BenchmarkConfig = BenchmarkConfig()) -> BenchmarkResult:
    counts = scaled_group_counts(divisor=config.divisor)
    by_strategy = {s: StrategyResult() for s in config.strategies}
    for seed in range(config.seeds):
        # The pool itself is redrawn per seed: repetitions cover both the
        # data draw and the loop's own randomness.
        dataset = generate_synthetic_pool(
            counts, dimension=config.dimension,
            cluster_separation=config.cluster_separation,
            noise_sigma=config.noise_sigma, seed=seed)
        for strategy in config.strategies:
            sim = SimulationConfig(strategy=strategy, label_budget=config.budget,
                                   batch_size_query=config.batch_size_query, seed=seed,
                                   train=TrainConfig(epochs=config.epochs, seed=seed,
                                                     weight_mode=config.weight_mode))
            result = simulate(dataset, sim)
            curve = [(p.labels_used, p.macro_f1, p.accuracy) for p in result.curve.points]
            res = by_strategy[strategy]
            res.curves.append(curve)
            res.labels_to_target.append(labels_to_target(curve, config.target_macro_f1))

    # Budgets present in every curve (identical by construction; intersect anyway).
    budget_sets = [set(lu for lu, _f, _a in c)
                   for s in config.strategies for c in by_strategy[s].curves]
    matched = sorted(set.intersection(*budget_sets))

    medians = {}
    for strategy in config.strategies:
        per_budget = []
        for b in matched:
            vals = [f1 for c in by_strategy[strategy].curves for lu, f1, _a in c if lu == b]
            per_budget.append(_median(vals))
        medians[strategy] = per_budget

    checked = [i for i, b in enumerate(matched) if b >= config.min_matched_budget]
    failures = [matched[i] for i in checked if medians["entropy"][i] < medians["random"][i]]
    dominance_ok = not failures

    median_ltt = {}
    censored = {}
    for strategy in config.strategies:
        raw = by_strategy[strategy].labels_to_target
        censored[strategy] = sum(1 for v in raw if v is None)
        # Censored runs never reached the target inside the budget; counting
        # them as `budget` understates the true requirement for both arms.
        median_ltt[strategy] = _median([config.budget if v is None else v for v in raw])

    ratio = (median_ltt["entropy"] / median_ltt["random"]
             if median_ltt.get("random") else float("inf"))
    ratio_ok = ratio <= 0.70

    return BenchmarkResult(config=config, by_strategy=by_strategy, matched_budgets=matched,
                           medians=medians, dominance_ok=dominance_ok,
                           dominance_failures=failures, median_labels_to_target=median_ltt,
                           censored=censored, label_ratio=ratio, ratio_ok=ratio_ok)


def summarize(result: BenchmarkResult) -> str:
    cfg = result.config
    lines = [
        f"strategies={','.join(cfg.strategies)} seeds={cfg.seeds} budget={cfg.budget} "
        f"d={cfg.dimension} separation={cfg.cluster_separation} sigma={cfg.noise_sigma}",
        "median macro-F1 by labels used:",
        "  labels  " + "  ".join(f"{s:>8s}" for s in cfg.strategies),
    ]
    for i, b in enumerate(result.matched_budgets):
        row = "  ".join(f"{result.medians[s][i]:8.4f}" for s in cfg.strategies)
        lines.append(f"  {b:6d}  {row}")
    lines.append(
        f"dominance (entropy >= random at every budget >= {cfg.min_matched_budget}): "
        + ("yes" if result.dominance_ok else f"no, fails at {result.dominance_failures}"))
    for s in cfg.strategies:
        cens = result.censored[s]
        note = f" ({cens}/{cfg.seeds} runs never reached it; counted at budget)" if cens else ""
        lines.append(f"median labels to macro-F1 {cfg.target_macro_f1}: "
                     f"{s}={result.median_labels_to_target[s]:.0f}{note}")
    lines.append(f"label ratio entropy/random = {result.label_ratio:.3f} "
                 f"(target <= 0.70: {'yes' if result.ratio_ok else 'no'})")
    return "\n".join(lines)


def result_to_json(result: BenchmarkResult) -> str:
    payload = {
        "config": result.config.__dict__ | {"strategies": list(result.config.strategies)},
        "matched_budgets": result.matched_budgets,
        "medians": result.medians,
        "dominance_ok": result.dominance_ok,
        "dominance_failures": result.dominance_failures,
        "median_labels_to_target": result.median_labels_to_target,
        "censored": result.censored,
        "label_ratio": result.label_ratio,
        "ratio_ok": result.ratio_ok,
        "curves": {s: r.curves for s, r in result.by_strategy.items()},
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
