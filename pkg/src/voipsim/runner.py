"""Run orchestration: build the node graph from a scenario, simulate, collect
metrics, and write CSV/manifest outputs atomically."""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import asdict, dataclass

from . import __version__
from .metrics import CSV_COLUMNS, QoSBucket, bucketize, records_from_stream, write_metrics_csv
from .netmodels import Fabric, IpCloud, PathTracer, UmtsCell, WifiCell
from .scenario import ScenarioSpec, SubnetSpec, spec_as_dict, spec_digest
from .signaling import SessionLayer
from .simcore import EventHandlerFault, RunStats, SimError, Simulator
from .traffic import CODECS, DIR_FORWARD, DIR_REVERSE, CallProcess, CallScheduler


class IncompatibleRuns(SimError):
    """compare inputs disagree on the reporting window grid."""


@dataclass
class RunOutput:
    scenario: str
    seed: int
    stats: RunStats
    buckets_by_direction: dict[int, list[QoSBucket]]
    csv_path: str | None = None
    manifest_path: str | None = None
    trace_path: str | None = None
    session_log_path: str | None = None
    calls: list = None
    session_layer: SessionLayer = None


def build_cell(sim: Simulator, subnet: SubnetSpec):
    stations = subnet.workstations()
    if subnet.kind == "wifi":
        p = subnet.wifi
        return WifiCell(sim, subnet.name, stations,
                        data_rate_bps=p.data_rate_bps, slot_us=p.slot_us,
                        sifs_us=p.sifs_us, difs_us=p.difs_us,
                        cw_min=p.cw_min, cw_max=p.cw_max,
                        retry_limit=p.retry_limit,
                        phy_mac_overhead_bytes=p.phy_mac_overhead_bytes,
                        queue_cap=p.queue_cap)
    p = subnet.umts
    return UmtsCell(sim, subnet.name, stations,
                    tti_us=p.tti_us, bearer_rate_bps=p.bearer_rate_bps,
                    bler=p.bler, max_rlc_retx=p.max_rlc_retx,
                    nodeb_rnc_delay_us=p.nodeb_rnc_delay_us,
                    rnc_proc_delay_us=p.rnc_proc_delay_us,
                    cn_delay_us=p.cn_delay_us,
                    air_interleave_delay_us=p.air_interleave_delay_us,
                    queue_cap=p.queue_cap)


def _atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_manifest(path: str, spec: ScenarioSpec, seed: int, stats: RunStats | None,
                    files: dict[str, str | None], partial: bool) -> None:
    manifest = {
        "tool_version": __version__,
        "spec_sha256": spec_digest(spec),
        "scenario": spec_as_dict(spec),
        "seed": seed,
        "partial": partial,
        "files": {k: v for k, v in files.items() if v},
        "stats": asdict(stats) if stats is not None else None,
    }
    _atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def run_scenario(spec: ScenarioSpec, *, seed: int | None = None,
                 out_dir: str | None = None, trace: bool = False,
                 session_log: bool = False) -> RunOutput:
    """Simulate one repetition.  With out_dir set, writes the metrics CSV and
    manifest (plus optional trace and session log); on an event-handler fault
    a partial manifest is still written before the fault propagates."""
    seed = spec.master_seed if seed is None else seed
    sim = Simulator(master_seed=seed)
    tracer = PathTracer() if trace else None
    cloud = IpCloud(sim, base_delay_us=spec.cloud.base_delay_us,
                    jitter_half_width_us=spec.cloud.jitter_half_width_us,
                    loss_prob=spec.cloud.loss_prob)
    fabric = Fabric(sim, cloud, tracer)
    for subnet in spec.subnets:
        fabric.attach_cell(build_cell(sim, subnet))
    log_lines: list[str] | None = [] if session_log else None
    layer = SessionLayer(sim, fabric,
                         answer_delay_us=spec.calls.answer_delay_us,
                         invite_timeout_us=spec.calls.invite_timeout_us,
                         session_log=log_lines)
    for subnet in spec.subnets:
        layer.register_all(subnet.workstations())
    by_name = {s.name: s for s in spec.subnets}
    proc = CallProcess(
        inter_arrival_mean_us=spec.calls.inter_arrival_us,
        duration_mean_us=spec.calls.duration_mean_us,
        caller_pool=by_name[spec.calls.caller_subnet].workstations(),
        callee_pool=by_name[spec.calls.callee_subnet].workstations(),
    )
    codec = CODECS[spec.codec]
    scheduler = CallScheduler(sim, proc, codec, layer, fabric,
                              stream_name=spec.calls.caller_subnet)
    scheduler.start()

    base = None
    manifest_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        base = os.path.join(out_dir, f"{spec.name}-seed{seed}")
        manifest_path = base + ".manifest.json"
    try:
        stats = sim.run_until(spec.run_length_us)
    except EventHandlerFault as fault:
        if manifest_path:
            _write_manifest(manifest_path, spec, seed, fault.stats, {}, partial=True)
        raise

    per_direction = {DIR_FORWARD: [], DIR_REVERSE: []}
    for call in scheduler.calls:
        for stream in call.streams:
            per_direction[stream.direction].append(records_from_stream(stream))
    buckets = {
        direction: bucketize(stream_records, codec,
                             run_length_us=spec.run_length_us,
                             width_us=spec.bucket_width_us,
                             warm_up_us=spec.warm_up_us)
        for direction, stream_records in per_direction.items()
    }

    out = RunOutput(scenario=spec.name, seed=seed, stats=stats,
                    buckets_by_direction=buckets, calls=scheduler.calls,
                    session_layer=layer)
    if base is not None:
        import io

        body = io.StringIO()
        write_metrics_csv(body, spec.name, seed, buckets)
        out.csv_path = base + ".metrics.csv"
        _atomic_write_text(out.csv_path, body.getvalue())
        if tracer is not None:
            out.trace_path = base + ".trace.csv"
            rows = [",".join(PathTracer.COLUMNS)]
            rows += [f"{r[0]},{r[1]},{r[2]},{r[3]},{r[4]}" for r in tracer.rows]
            _atomic_write_text(out.trace_path, "\n".join(rows) + "\n")
        if log_lines is not None:
            out.session_log_path = base + ".sessions.log"
            _atomic_write_text(out.session_log_path,
                               "\n".join(log_lines) + ("\n" if log_lines else ""))
        out.manifest_path = manifest_path
        _write_manifest(manifest_path, spec, seed, stats,
                        {"metrics_csv": os.path.basename(out.csv_path),
                         "trace_csv": out.trace_path and os.path.basename(out.trace_path),
                         "session_log": out.session_log_path and os.path.basename(out.session_log_path)},
                        partial=False)
    return out


def run_repetitions(spec: ScenarioSpec, *, out_dir: str | None = None,
                    trace: bool = False, session_log: bool = False) -> list[RunOutput]:
    """Repetition k uses seed master_seed + k; outputs land side by side."""
    return [run_scenario(spec, seed=spec.master_seed + k, out_dir=out_dir,
                         trace=trace, session_log=session_log)
            for k in range(spec.repetitions)]


# -- comparing finished runs -------------------------------------------------


def _load_metrics_csv(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = list(reader)
    if header != list(CSV_COLUMNS):
        raise IncompatibleRuns(f"{path}: not a metrics CSV (bad header)")
    if not rows:
        raise IncompatibleRuns(f"{path}: no data rows")
    return header, rows


def compare_runs(paths, mode: str, fh) -> None:
    """Merge metrics CSVs for plotting: overlaid is one long table keyed by
    scenario/seed; stacked repeats the table per source with a comment line.
    All inputs must share the same window grid."""
    if mode not in ("overlaid", "stacked"):
        raise ValueError(f"mode must be overlaid or stacked, got {mode!r}")
    loaded = []
    grid = None
    for path in paths:
        _header, rows = _load_metrics_csv(path)
        starts = sorted({row[3] for row in rows})
        if grid is None:
            grid = starts
        elif starts != grid:
            raise IncompatibleRuns(
                f"{path}: window grid differs from {paths[0]} "
                "(bucket width or run length mismatch)")
        loaded.append((path, rows))

    fh.write(",".join(CSV_COLUMNS) + "\n")
    if mode == "overlaid":
        for _path, rows in loaded:
            for row in rows:
                fh.write(",".join(row) + "\n")
    else:
        for path, rows in loaded:
            fh.write(f"# {rows[0][0]} seed={rows[0][1]} source={os.path.basename(path)}\n")
            for row in rows:
                fh.write(",".join(row) + "\n")
            fh.write("\n")
