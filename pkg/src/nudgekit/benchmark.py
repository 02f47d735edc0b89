"""Performance benchmarks.

scaling_benchmark runs the full selection pipeline (graph construction
included) over synthetic volumes of candidate user-nudge pairs and fits
wall-clock against pair count with ordinary least squares; the fit's R^2
is the linear-scaling evidence at desk scale. The kernel benchmark
compares the compiled and numpy backends on identical inputs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .candidates import rules_from_library
from .graph import construct_graph
from .model import kernels
from .model.params import HyperParams, init_embeddings
from .pipeline import DeliveryHistory, PipelineConfig
from .runner import PipelineInputs, run_parallel
from .synth import bench_population


class BenchmarkError(Exception):
    pass


@dataclass(frozen=True)
class ScalingPoint:
    requested_pairs: int
    actual_pairs: int
    seconds: float


@dataclass(frozen=True)
class ScalingFit:
    slope: float  # seconds per pair
    intercept: float
    r_squared: float


@dataclass(frozen=True)
class ScalingResult:
    points: tuple[ScalingPoint, ...]
    fit: ScalingFit


def fit_line(x: np.ndarray, y: np.ndarray) -> ScalingFit:
    if len(set(x.tolist())) < 2:
        raise BenchmarkError("need at least two distinct volumes to fit a line")
    slope, intercept = np.polyfit(x, y, 1)
    predicted = slope * x + intercept
    ss_res = float(np.sum((y - predicted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return ScalingFit(slope=float(slope), intercept=float(intercept), r_squared=r_squared)


def _one_volume(pair_count: int, cfg: PipelineConfig, hp: HyperParams, seed: int) -> ScalingPoint:
    population = bench_population(pair_count, seed=seed)
    t0 = time.perf_counter()
    snapshot = construct_graph(
        population.templates, population.participants, population.events, population.catalog
    ).snapshot
    state = init_embeddings(snapshot, hp)
    inputs = PipelineInputs(
        snapshot=snapshot,
        model=state,
        templates=population.templates,
        rules=rules_from_library(population.templates),
        history=DeliveryHistory(),
        user_contexts=population.user_contexts,
        today=snapshot.time + 1,
    )
    result = run_parallel(inputs, cfg)
    seconds = time.perf_counter() - t0
    actual = result.telemetry.candidates_scored
    return ScalingPoint(requested_pairs=pair_count, actual_pairs=actual, seconds=seconds)


def scaling_benchmark(
    pair_counts: list[int],
    cfg: PipelineConfig,
    *,
    hp: HyperParams | None = None,
    repeats: int = 2,
    seed: int = 0,
) -> ScalingResult:
    """Wall-clock per candidate-pair volume plus a least-squares line.

    Requires at least three distinct volumes. Each volume runs `repeats`
    times and keeps the fastest run to suppress scheduling noise.
    """
    if len(set(pair_counts)) < 3:
        raise BenchmarkError("need at least 3 distinct candidate-pair volumes")
    if hp is None:
        hp = HyperParams(entity_dim=16, relation_dim=16, layer_dims=(16,))
    points: list[ScalingPoint] = []
    for pair_count in sorted(pair_counts):
        best: ScalingPoint | None = None
        for _ in range(max(1, repeats)):
            point = _one_volume(pair_count, cfg, hp, seed)
            if best is None or point.seconds < best.seconds:
                best = point
        points.append(best)
    x = np.array([p.actual_pairs for p in points], dtype=np.float64)
    y = np.array([p.seconds for p in points], dtype=np.float64)
    return ScalingResult(points=tuple(points), fit=fit_line(x, y))


def scaling_report_lines(result: ScalingResult) -> list[str]:
    lines = ["pairs,seconds"]
    for p in result.points:
        lines.append(f"{p.actual_pairs},{p.seconds:.6f}")
    fit = result.fit
    lines.append(f"# fit: seconds = {fit.slope:.3e} * pairs + {fit.intercept:.4f}")
    lines.append(f"# r_squared = {fit.r_squared:.6f}")
    return lines


# -- kernel backend comparison -------------------------------------------------


@dataclass(frozen=True)
class KernelTiming:
    kernel: str
    backend: str
    milliseconds: float


def _time_call(fn, *args, repeats: int = 5) -> float:
    fn(*args)  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best * 1000.0


def compare_kernel_backends(
    n_entities: int = 20000,
    n_edges: int = 200000,
    n_pairs: int = 1000000,
    dim: int = 32,
    seed: int = 0,
) -> list[KernelTiming]:
    """Time every kernel on identical synthetic inputs for each backend."""
    rng = np.random.default_rng(seed)
    n_rel = 6
    entity_emb = rng.normal(size=(n_entities, dim))
    relation_emb = rng.normal(size=(n_rel, dim))
    relation_proj = rng.normal(size=(n_rel, dim, dim))
    head = np.sort(rng.integers(0, n_entities, n_edges)).astype(np.int64)
    tail = rng.integers(0, n_entities, n_edges).astype(np.int64)
    rel = rng.integers(0, n_rel, n_edges).astype(np.int64)
    offsets = np.zeros(n_entities + 1, dtype=np.int64)
    np.add.at(offsets, head + 1, 1)
    offsets = np.cumsum(offsets).astype(np.int64)
    gat_proj = rng.normal(size=(dim, dim))
    gat_attn = rng.normal(size=2 * dim)
    u_idx = rng.integers(0, n_entities, n_pairs).astype(np.int64)
    i_idx = rng.integers(0, n_entities, n_pairs).astype(np.int64)

    scores = kernels.backend_function("numpy", "knowledge_attention_scores")(
        entity_emb, relation_emb, relation_proj, head, rel, tail
    )
    alpha = kernels.backend_function("numpy", "segment_softmax")(scores, offsets)

    calls = {
        "knowledge_attention_scores": (entity_emb, relation_emb, relation_proj, head, rel, tail),
        "graph_attention_scores": (entity_emb, gat_proj, gat_attn, 0.2, head, tail),
        "segment_softmax": (scores, offsets),
        "weighted_neighbor_sum": (alpha, tail, offsets, entity_emb),
        "dot_scores": (entity_emb, u_idx, i_idx),
    }
    out: list[KernelTiming] = []
    for backend_name in kernels.available_backends():
        for kernel_name, args in calls.items():
            fn = kernels.backend_function(backend_name, kernel_name)
            out.append(
                KernelTiming(
                    kernel=kernel_name,
                    backend=backend_name,
                    milliseconds=_time_call(fn, *args),
                )
            )
    return out


def kernel_report_lines(timings: list[KernelTiming]) -> list[str]:
    lines = ["kernel,backend,milliseconds"]
    for t in sorted(timings, key=lambda t: (t.kernel, t.backend)):
        lines.append(f"{t.kernel},{t.backend},{t.milliseconds:.3f}")
    return lines
