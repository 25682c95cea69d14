"""File formats: stream files, truth sidecars, scenario and profile JSON.

Stream files are line-oriented text. The header declares the network
side, stream length and self-loop convention; each following record is
``t,i,j,y,omega`` with 1-based indices, ``i <= j`` (the other triangle
is implied by symmetry), sorted by ``(t, i, j)``. Records for
unobserved entries may be omitted: a missing record means
``omega = 0, y = 0``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .completion import MaskedSnapshot
from .simulation import (
    GeneratedStream,
    RdpgSpec,
    SbmSpec,
    ScenarioSpec,
    StreamTruth,
)

__all__ = [
    "StreamMeta",
    "StreamFormatError",
    "write_stream",
    "parse_stream",
    "read_stream_file",
    "write_truth",
    "read_truth",
    "truth_path",
    "scenario_to_dict",
    "scenario_from_dict",
    "load_scenario",
    "save_scenario",
]

HEADER_PREFIX = "netcp-stream v1"


class StreamFormatError(ValueError):
    """Malformed stream file."""


@dataclasses.dataclass
class StreamMeta:
    n: int
    t_max: int
    self_loops: bool


def _header_line(meta: StreamMeta) -> str:
    return (
        f"{HEADER_PREFIX} n={meta.n} t_max={meta.t_max} "
        f"self_loops={int(meta.self_loops)}"
    )


def parse_header(line: str) -> StreamMeta:
    if not line.startswith(HEADER_PREFIX):
        raise StreamFormatError(f"bad header: {line!r}")
    fields = dict(part.split("=", 1) for part in line[len(HEADER_PREFIX):].split())
    try:
        return StreamMeta(
            n=int(fields["n"]),
            t_max=int(fields["t_max"]),
            self_loops=bool(int(fields["self_loops"])),
        )
    except (KeyError, ValueError) as exc:
        raise StreamFormatError(f"bad header fields: {line!r}") from exc


def write_stream(
    snapshots: list[MaskedSnapshot],
    path,
    self_loops: bool = True,
    full: bool = False,
) -> None:
    """Write snapshots as a stream file.

    Compact mode (default) omits unobserved records; ``full`` emits every
    upper-triangle entry. Entries must be binary, as the format stores
    ``y`` as 0/1.
    """
    if not snapshots:
        raise ValueError("cannot write an empty stream")
    n = snapshots[0].n
    lines = [_header_line(StreamMeta(n=n, t_max=len(snapshots), self_loops=self_loops))]
    iu, ju = np.triu_indices(n, k=0 if self_loops else 1)
    for snap in sorted(snapshots, key=lambda s: s.t):
        y = snap.y[iu, ju]
        om = snap.omega[iu, ju]
        if not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("stream files store binary networks; y must be 0/1")
        keep = np.ones(len(iu), dtype=bool) if full else om
        for i, j, yy, oo in zip(iu[keep], ju[keep], y[keep], om[keep]):
            lines.append(f"{snap.t},{i + 1},{j + 1},{int(yy)},{int(oo)}")
    Path(path).write_text("\n".join(lines) + "\n")


def parse_records(meta: StreamMeta, records) -> list[MaskedSnapshot]:
    """Assemble snapshots from (t, i, j, y, omega) tuples, already validated."""
    by_t: dict[int, list] = {}
    for rec in records:
        by_t.setdefault(rec[0], []).append(rec)
    snapshots = []
    for t in range(1, meta.t_max + 1):
        y = np.zeros((meta.n, meta.n))
        om = np.zeros((meta.n, meta.n), dtype=bool)
        for _, i, j, yy, oo in by_t.get(t, []):
            y[i - 1, j - 1] = y[j - 1, i - 1] = yy
            om[i - 1, j - 1] = om[j - 1, i - 1] = oo
        snapshots.append(MaskedSnapshot(t=t, y=y, omega=om))
    return snapshots


def _parse_record_line(line: str, lineno: int, meta: StreamMeta):
    parts = line.split(",")
    if len(parts) != 5:
        raise StreamFormatError(f"line {lineno}: expected 5 fields, got {len(parts)}")
    try:
        t, i, j = int(parts[0]), int(parts[1]), int(parts[2])
        y, om = float(parts[3]), int(parts[4])
    except ValueError as exc:
        raise StreamFormatError(f"line {lineno}: {line!r}") from exc
    if not 1 <= i <= j <= meta.n:
        raise StreamFormatError(f"line {lineno}: need 1 <= i <= j <= n, got i={i}, j={j}")
    if i == j and not meta.self_loops:
        raise StreamFormatError(f"line {lineno}: diagonal record in a no-self-loop stream")
    if not 1 <= t <= meta.t_max:
        raise StreamFormatError(f"line {lineno}: t={t} outside 1..{meta.t_max}")
    if om not in (0, 1):
        raise StreamFormatError(f"line {lineno}: omega must be 0/1, got {om}")
    if om == 0 and y != 0:
        raise StreamFormatError(f"line {lineno}: y must be 0 when omega is 0")
    return (t, i, j, y, om)


def parse_stream(text: str) -> tuple[list[MaskedSnapshot], StreamMeta]:
    lines = text.splitlines()
    if not lines:
        raise StreamFormatError("empty stream file")
    meta = parse_header(lines[0])
    records = []
    prev_key = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        rec = _parse_record_line(line.strip(), lineno, meta)
        key = rec[:3]
        if prev_key is not None and key <= prev_key:
            raise StreamFormatError(
                f"line {lineno}: records must be strictly sorted by (t, i, j)"
            )
        prev_key = key
        records.append(rec)
    return parse_records(meta, records), meta


def read_stream_file(path) -> tuple[list[MaskedSnapshot], StreamMeta]:
    return parse_stream(Path(path).read_text())


# -- truth sidecar -------------------------------------------------------


def truth_path(stream_path) -> Path:
    return Path(str(stream_path) + ".truth.json")


def write_truth(truth: StreamTruth, stream_path) -> None:
    payload = {
        "delta": truth.delta,
        "kappa": truth.kappa,
        "graphon_pre": truth.graphon_pre.tolist(),
        "graphon_post": truth.graphon_post.tolist(),
    }
    truth_path(stream_path).write_text(json.dumps(payload))


def read_truth(stream_path) -> StreamTruth:
    payload = json.loads(truth_path(stream_path).read_text())
    return StreamTruth(
        delta=payload["delta"],
        kappa=payload["kappa"],
        graphon_pre=np.array(payload["graphon_pre"]),
        graphon_post=np.array(payload["graphon_post"]),
    )


def write_generated_stream(
    stream: GeneratedStream, path, self_loops: bool, full: bool = False
) -> None:
    write_stream(stream.snapshots, path, self_loops=self_loops, full=full)
    write_truth(stream.truth, path)


# -- scenario JSON ---------------------------------------------------------


def scenario_to_dict(spec: ScenarioSpec) -> dict:
    if isinstance(spec.kind, SbmSpec):
        kind = {
            "model": "sbm",
            "rho": spec.kind.rho,
            "b_pre": spec.kind.b_pre.tolist(),
            "b_post": spec.kind.b_post.tolist(),
            "communities": spec.kind.communities,
        }
    elif isinstance(spec.kind, RdpgSpec):
        kind = {
            "model": "rdpg",
            "d": spec.kind.d,
            "change_fraction": spec.kind.change_fraction,
        }
    else:
        raise TypeError(f"unknown scenario kind {type(spec.kind).__name__}")
    return {
        "kind": kind,
        "n": spec.n,
        "total_t": spec.total_t,
        "pi": spec.pi,
        "seed": spec.seed,
        "delta": spec.delta,
        "self_loops": spec.self_loops,
    }


def scenario_from_dict(data: dict) -> ScenarioSpec:
    kind_data = dict(data["kind"])
    model = kind_data.pop("model")
    if model == "sbm":
        kind = SbmSpec(**kind_data)
    elif model == "rdpg":
        kind = RdpgSpec(**kind_data)
    else:
        raise ValueError(f"unknown scenario model {model!r}")
    delta = data.get("delta")
    return ScenarioSpec(
        kind=kind,
        n=data["n"],
        total_t=data["total_t"],
        pi=data["pi"],
        seed=data.get("seed", 0),
        delta=None if delta in (None, "inf", math.inf) else int(delta),
        self_loops=data.get("self_loops", True),
    )


def load_scenario(path) -> ScenarioSpec:
    return scenario_from_dict(json.loads(Path(path).read_text()))


def save_scenario(spec: ScenarioSpec, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(spec), indent=2) + "\n")
