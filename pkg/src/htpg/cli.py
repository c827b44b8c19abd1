"""Operator-facing command line: profile -> generate -> inject -> detect,
plus the campaign runner and the hardware emitter. Every command takes one
--seed, derives any internal streams from it, and drops a .manifest.json
sidecar next to its primary output recording the config, seeds, input
digests and timings needed to reproduce the run. Manifests carry wall-clock
times and are the only outputs that differ between identical reruns.

Exit codes: 0 success, 1 usage or configuration error, 2 bad input data,
3 internal invariant violation.
"""

import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from .errors import ConfigError, DataError, InternalError
from .evaluate import (CampaignConfig, run_campaign, reports_to_csv,
                       reports_to_json, trigger_coverage, detects)
from .hwgen import (best_chunk_size, emit_structural, plan_chunked,
                    plan_clustered, rom_image, size_response_buffer)
from .netlist import load_bench, serialize
from .profiling import Profile, profile_netlist
from .report import campaign_figure, coverage_figure, per_trojan_table, save_figure
from .sim import simulator_for
from .tpg import AdaTestConfig, run_adatest, save_patterns, load_patterns, trace_to_csv
from .trojan import insert_trojan, sample_trojans, trojan_from_json, trojan_to_json


def _digest(path: Path) -> str:
    try:
        return hashlib.sha256(path.read_bytes()).hexdigest()
    except OSError as e:
        raise DataError(f"cannot read input {path}: {e}") from e


def _manifest(anchor: Path, command: str, config: dict, seeds: dict,
              inputs, started: float) -> None:
    doc = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): _digest(Path(p)) for p in inputs},
        "version": __version__,
        "elapsed_seconds": round(time.time() - started, 3),
    }
    side = anchor.with_name(anchor.name + ".manifest.json")
    side.write_text(json.dumps(doc, indent=1) + "\n")


def _read_json(path: Path) -> str:
    try:
        return path.read_text()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e


@click.group()
@click.version_option(__version__, prog_name="htpg")
def cli():
    """Logic-testing toolkit for hardware Trojan detection."""


@cli.command()
@click.argument("bench", type=click.Path(path_type=Path))
@click.option("--theta", default=0.1, show_default=True,
              help="Transition-probability threshold for rareness.")
@click.option("--trials", default=100_000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--jobs", default=1, show_default=True,
              help="Simulation worker threads; never changes results.")
@click.option("-o", "--out", type=click.Path(path_type=Path), default=None,
              help="Output profile JSON [default: <bench stem>.profile.json].")
def profile(bench, theta, trials, seed, jobs, out):
    """Estimate node probabilities, rare nodes and SCOAP measures."""
    t0 = time.time()
    net = load_bench(bench)
    prof = profile_netlist(net, theta=theta, trials=trials, seed=seed, jobs=jobs)
    out = out or bench.with_suffix(".profile.json")
    out.write_text(prof.to_json() + "\n")
    click.echo(f"{net.name}: {len(prof.rare)} rare nodes -> {out}")
    _manifest(out, "profile",
              {"theta": theta, "trials": trials, "jobs": jobs},
              {"seed": seed}, [bench], t0)


def _load_profile_for(net, path: Path) -> Profile:
    prof = Profile.from_json(_read_json(path))
    prof.validate_against(net)
    return prof


@cli.command()
@click.argument("bench", type=click.Path(path_type=Path))
@click.option("--profile", "profile_path", required=True,
              type=click.Path(path_type=Path), help="Profile JSON from `profile`.")
@click.option("--config", "config_path", type=click.Path(path_type=Path),
              default=None, help="AdaTest config JSON; defaults are the reference operating point.")
@click.option("--seed", default=None, type=int,
              help="Overrides the seed in the config file.")
@click.option("--init", "init_mode", type=click.Choice(["sat", "random"]),
              default="sat", show_default=True)
@click.option("-o", "--out", type=click.Path(path_type=Path), default=None,
              help="Pattern file [default: <bench stem>.patterns.txt]; the "
                   "coverage trace CSV and PNG are written beside it.")
def generate(bench, profile_path, config_path, seed, init_mode, out):
    """Run the adaptive test generation loop and save the pattern set."""
    t0 = time.time()
    net = load_bench(bench)
    prof = _load_profile_for(net, profile_path)
    cfg = AdaTestConfig.from_json(_read_json(config_path)) if config_path \
        else AdaTestConfig()
    if seed is not None:
        cfg = replace(cfg, seed=seed)

    result = run_adatest(net, prof, cfg, smart_init=(init_mode == "sat"))

    out = out or bench.with_suffix(".patterns.txt")
    save_patterns(out, result.test_set.vectors)
    trace_csv = out.with_name(out.stem + ".trace.csv")
    trace_csv.write_text(trace_to_csv(result.trace))
    fig = coverage_figure({f"{net.name} ({init_mode} init)": result.trace})
    save_figure(fig, out.with_name(out.stem + ".trace.png"))

    final = result.trace[-1]
    click.echo(f"{net.name}: {result.test_set.n_vectors} vectors, "
               f"coverage {final.coverage_pct:.1f}%, "
               f"stopped on {result.termination} after {result.iterations} "
               f"iterations -> {out}")
    inputs = [bench, profile_path] + ([config_path] if config_path else [])
    _manifest(out, "generate", json.loads(cfg.to_json()),
              {"seed": cfg.seed, "init": init_mode}, inputs, t0)


@cli.command()
@click.argument("bench", type=click.Path(path_type=Path))
@click.option("--profile", "profile_path", required=True,
              type=click.Path(path_type=Path))
@click.option("--count", default=10, show_default=True)
@click.option("--width", default=3, show_default=True,
              help="Trigger nodes per Trojan.")
@click.option("--seed", default=0, show_default=True)
@click.option("-o", "--out-dir", type=click.Path(path_type=Path),
              default=None, help="[default: <bench stem>_trojans/]")
def inject(bench, profile_path, count, width, seed, out_dir):
    """Sample rare-trigger Trojans and write inserted netlists + specs."""
    t0 = time.time()
    net = load_bench(bench)
    prof = _load_profile_for(net, profile_path)
    trojans = sample_trojans(net, prof, count, q=width, seed=seed)

    out_dir = out_dir or bench.with_name(bench.stem + "_trojans")
    out_dir.mkdir(parents=True, exist_ok=True)
    for spec in trojans:
        (out_dir / f"{spec.id}.json").write_text(trojan_to_json(spec) + "\n")
        (out_dir / f"{spec.id}.bench").write_text(
            serialize(insert_trojan(net, spec)))
    click.echo(f"{net.name}: {len(trojans)} trojans -> {out_dir}/")
    _manifest(out_dir / "trojans", "inject",
              {"count": count, "width": width},
              {"seed": seed}, [bench, profile_path], t0)


@cli.command()
@click.argument("bench", type=click.Path(path_type=Path))
@click.option("--trojan-dir", required=True, type=click.Path(path_type=Path),
              help="Directory of Trojan spec JSONs from `inject`.")
@click.option("--patterns", "patterns_path", required=True,
              type=click.Path(path_type=Path))
@click.option("-o", "--out", type=click.Path(path_type=Path), default=None,
              help="Report JSON [default: <bench stem>.detect.json].")
def detect(bench, trojan_dir, patterns_path, out):
    """Score a pattern file against a directory of injected Trojans."""
    t0 = time.time()
    net = load_bench(bench)
    vectors = load_patterns(patterns_path)
    if vectors.shape[1] != len(net.pis):
        raise DataError(
            f"pattern width {vectors.shape[1]} does not match "
            f"{len(net.pis)} primary inputs of {net.name}")

    spec_paths = sorted(Path(trojan_dir).glob("*.json"))
    spec_paths = [p for p in spec_paths if not p.name.endswith(".manifest.json")]
    if not spec_paths:
        raise DataError(f"no trojan specs (*.json) in {trojan_dir}")
    trojans = [trojan_from_json(_read_json(p), net) for p in spec_paths]

    rows = []
    for spec in trojans:
        hit = detects(vectors, net, insert_trojan(net, spec))
        rows.append({
            "id": spec.id,
            "trigger_coverage_pct": trigger_coverage(vectors, net, [spec]),
            "detected": bool(hit),
        })
    doc = {
        "circuit": net.name,
        "patterns": Path(patterns_path).name,  # full path in the manifest
        "vector_count": int(vectors.shape[0]),
        "trigger_coverage_pct": trigger_coverage(vectors, net, trojans),
        "trojan_coverage_pct": 100.0 * sum(r["detected"] for r in rows) / len(rows),
        "per_trojan": rows,
    }
    out = out or bench.with_suffix(".detect.json")
    out.write_text(json.dumps(doc, indent=1) + "\n")
    click.echo(f"{net.name}: trigger {doc['trigger_coverage_pct']:.2f}%, "
               f"trojan {doc['trojan_coverage_pct']:.2f}% "
               f"({len(rows)} trojans) -> {out}")
    _manifest(out, "detect", {"trojans": len(rows)}, {},
              [bench, patterns_path, *spec_paths], t0)


@cli.command()
@click.argument("benches", nargs=-1, required=True,
                type=click.Path(path_type=Path))
@click.option("--config", "config_path", type=click.Path(path_type=Path),
              default=None, help="CampaignConfig JSON; defaults to the desk-scale campaign.")
@click.option("--seed", default=None, type=int,
              help="Overrides the seed in the config file.")
@click.option("--theta", default=0.1, show_default=True)
@click.option("--trials", default=100_000, show_default=True)
@click.option("--jobs", default=1, show_default=True)
@click.option("-o", "--out-dir", type=click.Path(path_type=Path),
              default=Path("campaign"), show_default=True)
def bench(benches, config_path, seed, theta, trials, jobs, out_dir):
    """Run the full method-comparison campaign over one or more circuits.

    Writes campaign.csv / campaign.json (summary rows), per_trojan.csv,
    and campaign.png with the size and coverage charts. Timings stay in
    the manifest so the primary outputs are rerun-stable.
    """
    t0 = time.time()
    cfg = CampaignConfig.from_json(_read_json(config_path)) if config_path \
        else CampaignConfig()
    if seed is not None:
        cfg = replace(cfg, seed=seed)

    reports = []
    for path in benches:
        net = load_bench(path)
        prof = profile_netlist(net, theta=theta, trials=trials,
                               seed=cfg.seed, jobs=jobs)
        reports.extend(run_campaign(net, prof, cfg))
        click.echo(f"{net.name}: done ({time.time() - t0:.0f}s)")

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "campaign.csv").write_text(reports_to_csv(reports, with_timing=False))
    (out_dir / "campaign.json").write_text(
        reports_to_json(reports, with_timing=False) + "\n")
    (out_dir / "per_trojan.csv").write_text(per_trojan_table(reports))
    save_figure(campaign_figure(reports), out_dir / "campaign.png")
    for r in reports:
        click.echo(f"  {r.circuit:8s} {r.method:8s} "
                   f"|T|={r.test_vector_count:9.1f} "
                   f"trigger={r.trigger_coverage_pct:6.2f}% "
                   f"trojan={r.trojan_coverage_pct:6.2f}%")
    _manifest(out_dir / "campaign", "bench", json.loads(cfg.to_json()),
              {"seed": cfg.seed}, list(benches), t0)


@cli.command("emit-hw")
@click.argument("bench", type=click.Path(path_type=Path))
@click.argument("patterns", type=click.Path(path_type=Path))
@click.option("--chunk-size", default=None, type=int,
              help="Stages per ring segment [default: cost-optimal sweep].")
@click.option("--cluster", "clustered", is_flag=True,
              help="Partition by connected primary-input groups instead of chunking.")
@click.option("--tra-mode", type=click.Choice(["distributed", "centralized"]),
              default="distributed", show_default=True,
              help="Response-analyzer schedule for clustered plans.")
@click.option("--rom-width", default=32, show_default=True,
              help="Word width of the golden-response ROM.")
@click.option("--init-position", default=1, show_default=True,
              help="1-based ring stage holding the 1 at power-up.")
@click.option("-o", "--out-dir", type=click.Path(path_type=Path),
              default=None, help="[default: <bench stem>_hw/]")
def emit_hw(bench, patterns, chunk_size, clustered, tra_mode, rom_width,
            init_position, out_dir):
    """Map a finished pattern file onto the cyclic-SR/OR-network generator.

    Emits the structural netlist (tpg.bench), the tap matrices with their
    schedule (taps.json), and the golden-response ROM (rom.hex) sized for
    the response buffer.
    """
    t0 = time.time()
    net = load_bench(bench)
    vectors = load_patterns(patterns)
    if vectors.shape[1] != len(net.pis):
        raise DataError(
            f"pattern width {vectors.shape[1]} does not match "
            f"{len(net.pis)} primary inputs of {net.name}")
    if clustered and chunk_size is not None:
        raise ConfigError("--chunk-size and --cluster are mutually exclusive")

    if clustered:
        plan = plan_clustered(net, vectors, mode=tra_mode)
    else:
        size = chunk_size if chunk_size is not None else best_chunk_size(vectors)
        plan = plan_chunked(vectors, size)
    if init_position != 1:
        # re-pin every ring's starting stage; ranges/columns are unchanged
        plan = _repin(plan, init_position)

    sim = simulator_for(net)
    responses = sim.po_matrix(sim.eval_bool(vectors))
    buf = size_response_buffer(len(net.pos), rom_width)

    out_dir = out_dir or bench.with_name(bench.stem + "_hw")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "tpg.bench").write_text(emit_structural(plan))
    (out_dir / "taps.json").write_text(_plan_json(plan, buf) + "\n")
    (out_dir / "rom.hex").write_text("\n".join(rom_image(responses, rom_width)) + "\n")

    cost = plan.cost_estimate
    click.echo(f"{net.name}: {len(plan.matrices)} ring(s), "
               f"{cost.ff_count} FFs, {cost.or_tap_count} taps, "
               f"{cost.cycles_total} cycles, "
               f"buffer {buf.cycles_per_comparison} cycles/response -> {out_dir}/")
    _manifest(out_dir / "tpg", "emit-hw",
              {"chunk_size": chunk_size, "cluster": clustered,
               "tra_mode": tra_mode, "rom_width": rom_width,
               "init_position": init_position},
              {}, [bench, patterns], t0)


def _repin(plan, k0: int):
    from .hwgen import TapMatrix, TpgPlan, estimate_cost

    def pin(tap):
        if not 1 <= k0 <= tap.sr_length:
            raise ConfigError(
                f"init position {k0} exceeds ring length {tap.sr_length}")
        rolled = np.roll(tap.coefficients, k0 - 1, axis=1)
        return TapMatrix(coefficients=rolled, init_position=k0)

    if plan.segments:
        new = TpgPlan(segments=tuple((pin(t), r) for t, r in plan.segments),
                      mode=plan.mode)
    else:
        new = TpgPlan(clusters=tuple((c, pin(t)) for c, t in plan.clusters),
                      mode=plan.mode)
    new.cost_estimate = estimate_cost(new)
    new.latency_estimate = new.cost_estimate.cycles_total
    return new


def _plan_json(plan, buf) -> str:
    doc = {"mode": plan.mode,
           "cost": plan.cost_estimate._asdict(),
           "latency_cycles": plan.latency_estimate,
           "response_buffer": buf._asdict()}
    if plan.segments:
        doc["segments"] = [
            {"range": [start, stop], "tap": json.loads(tap.to_json())}
            for tap, (start, stop) in plan.segments]
    else:
        doc["clusters"] = [
            {"pi_columns": list(map(int, cols)), "tap": json.loads(tap.to_json())}
            for cols, tap in plan.clusters]
    return json.dumps(doc, indent=1)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.UsageError as e:
        e.show()
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        return 1
    except DataError as e:
        click.echo(f"data error: {e}", err=True)
        return 2
    except InternalError as e:
        click.echo(f"internal error: {e}", err=True)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
