"""Deterministic text/CSV/SVG outputs for a run."""

from __future__ import annotations

import io
import math
from pathlib import Path

import numpy as np

from .scenario import LOG_COLUMNS, RunResult

TRAJECTORY_COLUMNS = ("t_s", "v_re", "v_im", "i_re", "i_im", "z_r_pu", "z_x_pu", "in_zone1")
FORMATS = frozenset({"csv", "summary", "svg"})
DEFAULT_FORMATS = frozenset({"csv", "summary"})


def fmt(x: float) -> str:
    return format(float(x), ".12g")


def provenance_line(r: RunResult) -> str:
    p = r.provenance
    return f"config_sha256={p['config_sha256']} tool_version={p['tool_version']} seed={p['seed']}"


def _table(header: tuple[str, ...], rows: np.ndarray, prov: str, int_cols=()) -> str:
    buf = io.StringIO()
    buf.write(f"# {prov}\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(
            str(int(v)) if j in int_cols else fmt(v) for j, v in enumerate(row)
        ) + "\n")
    return buf.getvalue()


def trajectory_text(r: RunResult) -> str:
    tr = r.trace
    rows = np.column_stack([
        tr.t, tr.v.real, tr.v.imag, tr.i.real, tr.i.imag, tr.z.real, tr.z.imag,
        tr.in_zone1.astype(float),
    ])
    return _table(TRAJECTORY_COLUMNS, rows, provenance_line(r), int_cols=(7,))


def ipfc_log_text(r: RunResult) -> str:
    return _table(LOG_COLUMNS, r.ipfc_log, provenance_line(r))


def read_table(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Load a CSV written by this module (provenance comment skipped)."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return header, data


def _c(z: complex) -> str:
    return f"{fmt(z.real)}{'+' if z.imag >= 0 or math.isnan(z.imag) else '-'}j{fmt(abs(z.imag))}"


def summary_text(r: RunResult) -> str:
    s = r.scenario
    f = s.fault
    tr = r.trace
    post = tr.t >= s.t_fault - 1e-12
    pre_z = tr.z[~post]
    lines = [
        f"# {provenance_line(r)}",
        f"scenario: {s.name}",
        f"ipfc_mode: {s.ipfc_mode}" + (" (frozen on fault)" if s.freezes and s.ipfc_mode != "off" else ""),
        f"fault: {f.kind} on branch {f.branch_id} at n={fmt(f.n)} rf={fmt(f.rf)} p.u., t={fmt(s.t_fault)} s",
        f"relay: branch {s.relay_branch} ({s.relay_end} end), zone-1 reach {fmt(r.settings.zone1_reach)} p.u.",
        f"samples: {len(tr)} (dt={fmt(s.dt)} s)",
    ]
    try:
        w = tr.settled_window(s.settle_window)
        zs = complex(np.median(w.real), np.median(w.imag))
        lines.append(f"settled post-fault z: {_c(zs)} p.u. (|z|={fmt(abs(zs))})")
    except ValueError:
        lines.append("settled post-fault z: unavailable")
    lines.append(f"final z: {_c(complex(tr.z[-1]))} p.u.")
    lines.append(f"prefault samples inside zone 1: {int(np.sum(tr.in_zone1[~post]))}")
    if len(pre_z):
        lines.append(f"min prefault |z|: {fmt(np.nanmin(np.abs(pre_z)))} p.u.")
    first = np.flatnonzero(tr.in_zone1 & post)
    lines.append(
        "zone-1 pickup: " + (f"t={fmt(tr.t[first[0]])} s" if first.size else "none")
    )
    if s.ipfc_mode != "off":
        last = dict(zip(LOG_COLUMNS, r.ipfc_log[-1]))
        pre = dict(zip(LOG_COLUMNS, r.ipfc_log[s.fault_step - 1]))
        lines.append(
            f"prefault ipfc: m1={fmt(pre['m1'])} alpha1={fmt(pre['alpha1_deg'])} deg "
            f"m2={fmt(pre['m2'])} alpha2={fmt(pre['alpha2_deg'])} deg vdc={fmt(pre['vdc_pu'])} "
            f"pse1+pse2={fmt(pre['pse1_pu'] + pre['pse2_pu'])}"
        )
        lines.append(
            f"final ipfc: m1={fmt(last['m1'])} m2={fmt(last['m2'])} vdc={fmt(last['vdc_pu'])} "
            f"pse1+pse2={fmt(last['pse1_pu'] + last['pse2_pu'])}"
        )
    if r.verdict is not None:
        v = r.verdict
        lines += [
            f"verdict: {v.classification}",
            f"baseline z: {_c(v.z_baseline)} p.u. zone1={v.zone_decision_baseline}",
            f"with ipfc z: {_c(v.z_with_ipfc)} p.u. zone1={v.zone_decision_ipfc}",
            f"delta R: {fmt(v.delta_r)} delta X: {fmt(v.delta_x)} relative |z| change: {fmt(v.relative_change)}",
        ]
    return "\n".join(lines) + "\n"


def plot_svg(r: RunResult) -> bytes:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "ipfc-relay", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 6))
        reach = r.settings.zone1_reach
        th = np.linspace(0, 2 * np.pi, 361)
        ax.plot(reach * np.cos(th), reach * np.sin(th), "k--", lw=1, label="zone 1")
        z1 = r.settings.line_z1
        ax.plot([0, z1.real], [0, z1.imag], color="0.6", lw=1, label="line Z1")
        if r.baseline is not None:
            zb = r.baseline.trace.z
            ax.plot(zb.real, zb.imag, ".-", ms=2, lw=0.8, color="tab:blue", label="without IPFC")
        z = r.trace.z
        ax.plot(z.real, z.imag, ".-", ms=2, lw=0.8, color="tab:red", label=r.scenario.ipfc_mode)
        lim = 3 * abs(z1)
        ax.set_xlim(-lim, lim)
        ax.set_ylim(-lim, lim)
        ax.set_aspect("equal")
        ax.set_xlabel("R (p.u.)")
        ax.set_ylabel("X (p.u.)")
        ax.set_title(r.scenario.name)
        ax.legend(loc="lower right", fontsize=8)
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Description": provenance_line(r)})
        plt.close(fig)
    return buf.getvalue()


def emit_outputs(r: RunResult, out_dir: str | Path, formats=DEFAULT_FORMATS) -> dict[str, int]:
    """Write the run's files into ``out_dir`` and return ``{file name: byte size}``.

    A ``manifest.txt`` listing every other file and its size is written last.
    """
    formats = set(formats)
    unknown = formats - FORMATS
    if unknown:
        raise ValueError(f"unknown output formats {sorted(unknown)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, bytes] = {}
    if "csv" in formats:
        files["trajectory.csv"] = trajectory_text(r).encode()
        files["ipfc_log.csv"] = ipfc_log_text(r).encode()
    if "summary" in formats:
        files["summary.txt"] = summary_text(r).encode()
    if "svg" in formats:
        files["rx_plot.svg"] = plot_svg(r)
    manifest = {}
    for name, data in sorted(files.items()):
        (out / name).write_bytes(data)
        manifest[name] = len(data)
    body = f"# {provenance_line(r)}\n" + "".join(f"{k},{v}\n" for k, v in manifest.items())
    (out / "manifest.txt").write_text(body, encoding="utf-8")
    return manifest
