"""Command-line front end: synthesize scenarios, extract sources, score, bench.

Exit codes: 0 success, 1 generation/runtime failure, 2 invalid flags or
ill-shaped inputs, 3 numerical abort (singular demixing matrix, with the
offending frequency index in the message).
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import __version__
from .evaluation import ZeroReference, bench_run, match_and_score
from .linalg import NotPositiveDefinite, SingularMatrix
from .runner import VARIANTS, ExtractionConfig, run_extraction
from .simulate import (
    _read_wav,
    _write_wav,
    load_scenario,
    load_steering,
    make_scenario,
    save_scenario,
)
from .stft import StftConfig, analyze, synthesize

__all__ = ["main", "RunManifest", "SolverAbort"]


class SolverAbort(click.ClickException):
    """Numerical failure inside the solver; distinct exit code for scripting."""

    exit_code = 3


@dataclass
class RunManifest:
    """Everything needed to reproduce a run bit-for-bit (modulo wall time)."""

    command: str
    args: dict
    seed: int | None
    version: str
    input_hashes: dict
    output_paths: list

    def to_json(self) -> str:
        payload = {
            "command": self.command,
            "args": self.args,
            "seed": self.seed,
            "version": self.version,
            "input_hashes": self.input_hashes,
            "output_paths": self.output_paths,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def write(self, path: Path) -> None:
        path.write_text(self.to_json())

    @staticmethod
    def load(path: str | Path) -> "RunManifest":
        data = json.loads(Path(path).read_text())
        return RunManifest(
            command=data["command"],
            args=data["args"],
            seed=data.get("seed"),
            version=data["version"],
            input_hashes=data.get("input_hashes", {}),
            output_paths=data.get("output_paths", []),
        )


def _sha256(path: Path) -> str:
    return "sha256:" + hashlib.sha256(path.read_bytes()).hexdigest()


def _thread_limit(threads: int | None):
    if threads is None:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        click.echo(f"threadpoolctl not installed; --threads {threads} ignored",
                   err=True)
        return contextlib.nullcontext()
    return threadpool_limits(limits=threads)


def _write_trajectory(log, path: Path) -> None:
    lines = ["iteration,wall_seconds,surrogate,nll,stationarity,"
             "oc_residual,lcmv_residual"]
    for point in log.points:
        lines.append(
            f"{point.iteration},{point.wall_seconds:.9f},"
            f"{point.surrogate:.12g},{point.nll:.12g},"
            f"{point.stationarity:.6g},{point.oc_residual:.6g},"
            f"{point.lcmv_residual:.6g}")
    path.write_text("\n".join(lines) + "\n")


@click.group()
@click.version_option(__version__, prog_name="ivex")
def main() -> None:
    """Source extraction from multichannel mixtures."""


@main.command()
@click.option("--sources", "num_sources", type=int, required=True,
              help="Number of target sources K.")
@click.option("--mics", "num_mics", type=int, required=True,
              help="Number of microphones M.")
@click.option("--noises", "num_noises", type=int, default=1, show_default=True,
              help="Number of background noise components J.")
@click.option("--snr-db", type=float, default=0.0, show_default=True)
@click.option("--duration", type=float, default=4.0, show_default=True,
              help="Signal length in seconds.")
@click.option("--mixing", type=click.Choice(["inst", "fir"]), default="inst",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--sample-rate", type=int, default=16000, show_default=True)
@click.option("--frame", type=int, default=4096, show_default=True)
@click.option("--hop", type=int, default=1024, show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path),
              required=True, help="Output scenario directory.")
def synth(num_sources, num_mics, num_noises, snr_db, duration, mixing, seed,
          sample_rate, frame, hop, out_dir) -> None:
    """Generate a synthetic scenario directory (mixture, images, steering)."""
    if num_sources >= num_mics:
        raise click.UsageError(
            f"K < M required (got --sources {num_sources} --mics {num_mics})")
    if num_noises < 1:
        raise click.UsageError("--noises must be >= 1")
    try:
        stft_config = StftConfig(frame_len=frame, hop=hop)
        scenario = make_scenario(
            num_sources, num_mics, num_noises=num_noises, snr_db=snr_db,
            mixing=mixing, seed=seed, domain="time", duration=duration,
            sample_rate=sample_rate, stft_config=stft_config)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    except RuntimeError as exc:
        raise click.ClickException(f"scenario generation failed: {exc}")
    save_scenario(scenario, out_dir)
    outputs = ["mixture.wav", "steering.json", "scenario.json"]
    outputs[1:1] = [f"image_{i + 1}.wav" for i in range(num_sources)]
    manifest = RunManifest(
        command="synth",
        args={"sources": num_sources, "mics": num_mics, "noises": num_noises,
              "snr_db": snr_db, "duration": duration, "mixing": mixing,
              "seed": seed, "sample_rate": sample_rate, "frame": frame,
              "hop": hop},
        seed=seed, version=__version__, input_hashes={}, output_paths=outputs)
    manifest.write(Path(out_dir) / "manifest.json")
    if scenario.flags.get("noise_rank_exceeds_background"):
        click.echo("warning: more noise components than background channels",
                   err=True)
    click.echo(f"wrote scenario ({num_sources} sources, {num_mics} mics, "
               f"{snr_db:g} dB SNR) to {out_dir}")


def _run_extract(*, input: str, algo: str, sources: int, iters: int,
                 beta: float, frame: int, hop: int, power_iters: int,
                 steering: str | None, known: int | None, threads: int | None,
                 out: str) -> None:
    if algo == "semi-ive":
        if steering is None:
            raise click.UsageError("--algo semi-ive requires --steering")
        if known is None:
            known = sources
        if not 1 <= known <= sources:
            raise click.UsageError("--known must satisfy 1 <= L <= K")
    elif steering is not None or known is not None:
        raise click.UsageError(
            "--steering/--known only apply to --algo semi-ive")

    click.echo(f"algo={algo} sources={sources} iters={iters} beta={beta} "
               f"frame={frame} hop={hop} power-iters={power_iters}")

    input_path = Path(input)
    if not input_path.is_file():
        raise click.UsageError(f"input file not found: {input}")
    try:
        rate, wave = _read_wav(input_path)
        stft_config = StftConfig(frame_len=frame, hop=hop)
        spectrogram = analyze(wave, stft_config)
        if sources >= spectrogram.shape[-1]:
            raise click.UsageError(
                f"K < M required (got --sources {sources} for "
                f"{spectrogram.shape[-1]} channels)")
        steering_set = load_steering(steering) if steering else None
        config = ExtractionConfig(
            variant=algo, num_sources=sources, iterations=iters, beta=beta,
            power_iters=power_iters, num_known=known or 0)
        with _thread_limit(threads):
            result = run_extraction(spectrogram, config, steering=steering_set)
    except (SingularMatrix, NotPositiveDefinite) as exc:
        raise SolverAbort(str(exc))
    except click.ClickException:
        raise
    except ValueError as exc:
        raise click.UsageError(str(exc))

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for i, image in enumerate(result.images):
        name = f"est_{i + 1}.wav"
        _write_wav(out_dir / name, rate,
                   synthesize(image, stft_config, wave.shape[0]))
        names.append(name)
    _write_trajectory(result.trajectory, out_dir / "trajectory.csv")
    hashes = {str(input_path.resolve()): _sha256(input_path)}
    if steering:
        hashes[str(Path(steering).resolve())] = _sha256(Path(steering))
    manifest = RunManifest(
        command="extract",
        args={"input": str(input_path.resolve()), "algo": algo,
              "sources": sources, "iters": iters, "beta": beta,
              "frame": frame, "hop": hop, "power_iters": power_iters,
              "steering": str(Path(steering).resolve()) if steering else None,
              "known": known, "threads": threads,
              "out": str(out_dir.resolve())},
        seed=None, version=__version__, input_hashes=hashes,
        output_paths=names + ["trajectory.csv"])
    manifest.write(out_dir / "manifest.json")
    log = result.trajectory
    click.echo(f"{len(log)} iterations ({log.stop_reason}), "
               f"final nll {log.nll[-1]:.6g}, "
               f"wrote {len(names)} image file(s) to {out_dir}")


@main.command()
@click.option("--input", "input_", type=str, default=None,
              help="Multichannel mixture WAV.")
@click.option("--algo", type=click.Choice(VARIANTS), default=None)
@click.option("--sources", type=int, default=None, help="Number of sources K.")
@click.option("--iters", type=int, default=50, show_default=True)
@click.option("--beta", type=float, default=0.1, show_default=True)
@click.option("--frame", type=int, default=4096, show_default=True)
@click.option("--hop", type=int, default=1024, show_default=True)
@click.option("--power-iters", type=int, default=30, show_default=True)
@click.option("--steering", type=str, default=None,
              help="Steering JSON (semi-ive only).")
@click.option("--known", type=int, default=None,
              help="Number of known steering vectors L (semi-ive only).")
@click.option("--threads", type=int, default=None,
              help="Limit BLAS worker threads (best effort).")
@click.option("--out", type=str, default=None, help="Output directory.")
@click.option("--from-manifest", "manifest_path", type=str, default=None,
              help="Replay a previous run from its manifest.")
def extract(input_, algo, sources, iters, beta, frame, hop, power_iters,
            steering, known, threads, out, manifest_path) -> None:
    """Extract source images from a mixture WAV file."""
    if manifest_path is not None:
        manifest = RunManifest.load(manifest_path)
        if manifest.command != "extract":
            raise click.UsageError(
                f"manifest records command {manifest.command!r}, not extract")
        _run_extract(**manifest.args)
        return
    missing = [flag for flag, value in
               (("--input", input_), ("--algo", algo),
                ("--sources", sources), ("--out", out)) if value is None]
    if missing:
        raise click.UsageError("missing required flags: " + " ".join(missing))
    _run_extract(input=input_, algo=algo, sources=sources, iters=iters,
                 beta=beta, frame=frame, hop=hop, power_iters=power_iters,
                 steering=steering, known=known, threads=threads, out=out)


_NUMBERED = re.compile(r"^(.*?)(\d+)$")


def _wave_sort_key(path: Path):
    match = _NUMBERED.match(path.stem)
    if match:
        return (match.group(1), int(match.group(2)))
    return (path.stem, 0)


def _load_wave_set(directory: Path, patterns: tuple[str, ...]) -> list[np.ndarray]:
    for pattern in patterns:
        found = sorted(directory.glob(pattern), key=_wave_sort_key)
        if found:
            return [_read_wav(p)[1] for p in found]
    raise click.UsageError(f"no wav files matching {patterns} in {directory}")


@main.command("eval")
@click.option("--est", "est_dir", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--ref", "ref_dir", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--out", "out_path", type=click.Path(path_type=Path),
              default=None, help="Also write the report JSON to this file.")
def eval_cmd(est_dir, ref_dir, out_path) -> None:
    """Score estimated images against references (best assignment SDR)."""
    est = _load_wave_set(est_dir, ("est_*.wav", "image_*.wav", "*.wav"))
    ref = _load_wave_set(ref_dir, ("image_*.wav", "est_*.wav", "*.wav"))
    try:
        report = match_and_score(est, ref)
    except (ZeroReference, ValueError) as exc:
        raise click.UsageError(str(exc))
    payload = json.dumps(report.to_dict(), sort_keys=True, indent=2)
    click.echo(payload)
    if out_path is not None:
        Path(out_path).write_text(payload + "\n")


@main.command()
@click.option("--scenario", "scenario_dir", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--algos", required=True,
              help="Comma-separated variant names, e.g. ive-ip1,ive-ip2-new.")
@click.option("--iters", type=int, default=50, show_default=True)
@click.option("--beta", type=float, default=0.1, show_default=True)
@click.option("--power-iters", type=int, default=30, show_default=True)
@click.option("--known", type=int, default=None,
              help="Known steering count for semi-ive (default: all K).")
@click.option("--out", "out_dir", required=True,
              type=click.Path(path_type=Path))
def bench(scenario_dir, algos, iters, beta, power_iters, known, out_dir) -> None:
    """Run several variants on one scenario; write per-iteration CSV + summary."""
    names = [token.strip() for token in algos.split(",") if token.strip()]
    unknown = [name for name in names if name not in VARIANTS]
    if not names or unknown:
        raise click.UsageError(
            f"--algos must name variants from {', '.join(VARIANTS)}"
            + (f" (got {', '.join(unknown)})" if unknown else ""))
    scenario = load_scenario(scenario_dir)
    configs = []
    try:
        for name in names:
            extra = {}
            if name == "semi-ive":
                extra["num_known"] = (known if known is not None
                                      else scenario.num_sources)
            configs.append(ExtractionConfig(
                variant=name, num_sources=scenario.num_sources,
                iterations=iters, beta=beta, power_iters=power_iters, **extra))
            configs[-1].validate()
    except ValueError as exc:
        raise click.UsageError(str(exc))
    try:
        result = bench_run(scenario, configs)
    except (SingularMatrix, NotPositiveDefinite) as exc:
        raise SolverAbort(str(exc))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.write_csv(out_dir / "bench.csv")
    result.write_json(out_dir / "summary.json")
    scenario_files = sorted(Path(scenario_dir).glob("*"))
    manifest = RunManifest(
        command="bench",
        args={"scenario": str(Path(scenario_dir).resolve()), "algos": names,
              "iters": iters, "beta": beta, "power_iters": power_iters,
              "known": known},
        seed=None, version=__version__,
        input_hashes={p.name: _sha256(p) for p in scenario_files
                      if p.is_file()},
        output_paths=["bench.csv", "summary.json"])
    manifest.write(out_dir / "manifest.json")
    for name in names:
        info = result.summary[name]
        click.echo(f"{name}: {info['iterations']} iters, "
                   f"{info['total_wall_seconds']:.3f} s wall, "
                   f"final sdr {info['final_sdr_mean']:.2f} dB, "
                   f"final nll {info['final_g0']:.6g}")


if __name__ == "__main__":
    main()
