"""Scoring and benchmarking: SDR against oracle images, objective/runtime tables.

SDR here is the plain energy ratio 10*log10(||ref||^2 / ||ref - est||^2)
between spatial images (capped at 80 dB), not the filtered BSS-eval variant:
projection back returns estimates in the mixture's own coordinate frame, so
the direct ratio is meaningful.  Absolute values are therefore not comparable
to BSS-eval numbers; only trends are asserted anywhere.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import GGDModel, nll_value, source_signals
from .runner import ExtractionConfig, run_extraction
from .simulate import Scenario
from .stft import synthesize
from .updates import projection_back

__all__ = [
    "ZeroReference",
    "SDR_CAP_DB",
    "SdrReport",
    "compute_sdr",
    "match_and_score",
    "BenchRow",
    "BenchResult",
    "bench_run",
]

SDR_CAP_DB = 80.0


class ZeroReference(ValueError):
    """The reference signal has no energy; SDR is undefined."""


def compute_sdr(est: np.ndarray, ref: np.ndarray, cap_db: float = SDR_CAP_DB) -> float:
    """Energy-ratio SDR in dB, capped.  Works on real or complex arrays."""
    est = np.asarray(est)
    ref = np.asarray(ref)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch: est {est.shape} vs ref {ref.shape}")
    ref_energy = float(np.sum(np.abs(ref) ** 2))
    if ref_energy == 0.0:
        raise ZeroReference("reference signal is identically zero")
    err_energy = float(np.sum(np.abs(ref - est) ** 2))
    if err_energy == 0.0:
        return cap_db
    return min(10.0 * np.log10(ref_energy / err_energy), cap_db)


@dataclass(frozen=True)
class SdrReport:
    """Best-assignment SDR scores for one set of estimates."""

    per_source: tuple[float, ...]     # dB, ordered by reference index
    assignment: tuple[int, ...]       # estimate index chosen per reference

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_source))

    def to_dict(self) -> dict:
        return {
            "per_source_db": list(self.per_source),
            "mean_db": self.mean,
            "assignment": list(self.assignment),
        }


def match_and_score(
    est_images: np.ndarray | list,
    ref_images: np.ndarray | list,
    cap_db: float = SDR_CAP_DB,
) -> SdrReport:
    """Score references against the best injective assignment of estimates.

    Handles more estimates than references (the IVA baseline emits all M
    outputs and the best K are picked here, i.e. oracle selection).
    """
    num_est = len(est_images)
    num_ref = len(ref_images)
    if num_ref > num_est:
        raise ValueError("more references than estimates")
    table = np.empty((num_est, num_ref))
    for j in range(num_est):
        for i in range(num_ref):
            table[j, i] = compute_sdr(est_images[j], ref_images[i], cap_db)
    best = None
    for perm in itertools.permutations(range(num_est), num_ref):
        mean = float(np.mean([table[perm[i], i] for i in range(num_ref)]))
        if best is None or mean > best[0]:
            best = (mean, perm)
    scores = tuple(float(table[best[1][i], i]) for i in range(num_ref))
    return SdrReport(per_source=scores, assignment=best[1])


@dataclass(frozen=True)
class BenchRow:
    variant: str
    iteration: int
    wall_seconds: float               # cumulative update-work time
    g0: float
    sdr: SdrReport


@dataclass
class BenchResult:
    rows: list[BenchRow] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    CSV_SCHEMA = "variant,iteration,wall_seconds,g0,sdr_mean,sdr_1..sdr_K"

    def write_csv(self, path: str | Path) -> None:
        num_sources = len(self.rows[0].sdr.per_source) if self.rows else 0
        header = ",".join(
            ["variant", "iteration", "wall_seconds", "g0", "sdr_mean"]
            + [f"sdr_{i + 1}" for i in range(num_sources)]
        )
        lines = [f"# schema v1: {self.CSV_SCHEMA}", header]
        for row in self.rows:
            cells = [row.variant, str(row.iteration),
                     f"{row.wall_seconds:.9f}", f"{row.g0:.12g}",
                     f"{row.sdr.mean:.6f}"]
            cells += [f"{s:.6f}" for s in row.sdr.per_source]
            lines.append(",".join(cells))
        Path(path).write_text("\n".join(lines) + "\n")

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary, sort_keys=True, indent=2))


def bench_run(
    scenario: Scenario,
    configs: list[ExtractionConfig],
    use_time_domain: bool | None = None,
) -> BenchResult:
    """Run each config on the same mixture, scoring SDR at every iteration.

    SDR is computed in the time domain when the scenario carries waveforms
    (after resynthesis of each image), otherwise on the spectrogram images
    directly.  Wall times come from the extraction's own log and exclude all
    scoring/diagnostic work.
    """
    if use_time_domain is None:
        use_time_domain = scenario.mixture_wave is not None
    if use_time_domain and scenario.mixture_wave is None:
        raise ValueError("scenario has no waveforms for time-domain scoring")
    mixture = scenario.mixture
    num_samples = scenario.mixture_wave.shape[0] if use_time_domain else None
    if use_time_domain:
        references = list(scenario.image_waves)
    else:
        references = list(scenario.images)

    result = BenchResult()
    for config in configs:
        steering = scenario.steering if config.variant == "semi-ive" else None
        rows: list[BenchRow] = []

        def score(iteration: int, demix: np.ndarray, wall: float) -> None:
            num_est = demix.shape[-1] if config.variant == "iva-ip1" \
                else config.num_sources
            estimates = source_signals(mixture, demix, num_est)
            images = projection_back(demix, estimates, num_est)
            if use_time_domain:
                est = [synthesize(img, scenario.stft, num_samples)
                       for img in images]
            else:
                est = list(images)
            report = match_and_score(est, references)
            g0 = nll_value(mixture, demix, config.num_sources,
                           GGDModel(beta=config.beta))
            rows.append(BenchRow(config.variant, iteration, wall, g0, report))

        run = run_extraction(mixture, config, steering=steering,
                             on_iteration=score)
        result.rows.extend(rows)
        seconds = run.trajectory.per_iteration_seconds
        summary = {
            "iterations": len(run.trajectory),
            "total_wall_seconds": float(run.trajectory.wall_seconds[-1]),
            "median_iteration_seconds": float(np.median(seconds)),
            "final_g0": float(run.trajectory.nll[-1]),
            "final_sdr_mean": rows[-1].sdr.mean,
            "stop_reason": run.trajectory.stop_reason,
        }
        if scenario.duration is not None:
            summary["rtf"] = summary["total_wall_seconds"] / scenario.duration
        result.summary[config.variant] = summary
    return result
