"""Markdown summary and SVG plots from a run directory's CSV/JSON outputs."""

from __future__ import annotations

import csv
import glob
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ..errors import ConfigError  # noqa: E402

EXPECTED = ["table.csv", "run_q*_k*.csv", "ladder.csv", "fldiss_q*.json", "fk_q*.csv", "variance.csv"]


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows


def _save(fig, path):
    # fixed ids and no timestamp keep the SVG byte-identical across runs
    with matplotlib.rc_context({"svg.hashsalt": "anodiss", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _target(run_dir, writer, name):
    return writer.path(name) if writer is not None else os.path.join(run_dir, name)


def _md_table(rows, cols):
    out = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for r in rows:
        out.append("| " + " | ".join(_short(r[c]) for c in cols) + " |")
    return out


def _short(v):
    try:
        return f"{float(v):.6g}"
    except (TypeError, ValueError):
        return str(v)


def report_render(run_dir, writer=None):
    """Write ``summary.md`` plus ``energy.svg``, ``ladder.svg`` and ``variance.svg`` when their inputs exist.

    Returns the list of files written.  An empty or unrelated directory is an
    error naming the files that were looked for.
    """
    if not os.path.isdir(run_dir):
        raise ConfigError(f"{run_dir}: not a directory")
    found = {pat: sorted(glob.glob(os.path.join(run_dir, pat))) for pat in EXPECTED}
    if not any(found.values()):
        raise ConfigError(f"{run_dir}: no report inputs; expected any of: {', '.join(EXPECTED)}")
    written = []
    lines = [f"# Run summary: {os.path.basename(os.path.abspath(run_dir))}", ""]
    missing = []

    runs = found["run_q*_k*.csv"]
    if runs:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        lines += ["## Energy", "", "| run | e(0) | e(T) | D(T) | monotone e |", "|---|---|---|---|---|"]
        for p in runs:
            rows = _read_csv(p)
            t = [float(r["t"]) for r in rows]
            e = [float(r["energy"]) for r in rows]
            mono = all(b <= a * (1 + 1e-12) for a, b in zip(e, e[1:]))
            ax.plot(t, e, label=os.path.basename(p)[:-4])
            lines.append(f"| {os.path.basename(p)} | {e[0]:.6g} | {e[-1]:.6g} | "
                         f"{float(rows[-1]['cum_diss']):.6g} | {mono} |")
        ax.set_xlabel("t")
        ax.set_ylabel("e(t)")
        ax.legend(fontsize=7)
        fig.tight_layout()
        name = "energy.svg"
        _save(fig, _target(run_dir, writer, name))
        written.append(name)
        lines.append("")
    else:
        missing.append("energy.svg needs run_q*_k*.csv")

    ladder = found["ladder.csv"]
    if ladder:
        rows = _read_csv(ladder[0])
        lines += ["## Dissipation ladder", ""] + _md_table(rows, ["q", "kappa", "D", "ratio", "energy_residual"])
        lines.append("")
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ks = [float(r["kappa"]) for r in rows]
        ax.loglog(ks, [max(float(r["ratio"]), 1e-300) for r in rows], "o-")
        ax.set_xlabel("kappa")
        ax.set_ylabel("D(T) / e(0)")
        fig.tight_layout()
        _save(fig, _target(run_dir, writer, "ladder.svg"))
        written.append("ladder.svg")
    else:
        missing.append("ladder.svg needs ladder.csv")

    var = found["variance.csv"]
    if var:
        rows = _read_csv(var[0])
        lines += ["## Endpoint variance on D_q", ""] + _md_table(
            rows, ["q", "kappa", "min_variance", "min_variance_x1", "brownian", "flag_low"])
        lines.append("")
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.semilogy([int(r["q"]) for r in rows], [float(r["min_variance"]) for r in rows], "o-", label="min variance")
        ax.semilogy([int(r["q"]) for r in rows], [float(r["brownian"]) for r in rows], "s--", label="4 kappa T")
        ax.set_xlabel("q")
        ax.legend(fontsize=7)
        fig.tight_layout()
        _save(fig, _target(run_dir, writer, "variance.svg"))
        written.append("variance.svg")
    else:
        missing.append("variance.svg needs variance.csv")

    for p in found["fldiss_q*.json"]:
        with open(p) as fh:
            rep = json.load(fh)
        lines += [f"## Fluctuation-dissipation ({os.path.basename(p)})", ""]
        lines += [f"- {k}: {_short(rep[k])}" for k in ("lhs", "rhs", "mc_se", "pde_tol", "rel_err", "ok")]
        lines.append("")
    for p in found["fk_q*.csv"]:
        rows = _read_csv(p)
        inside = sum(abs(float(r["z"])) <= 3 for r in rows)
        lines += [f"## Feynman-Kac probes ({os.path.basename(p)})", "",
                  f"{inside}/{len(rows)} probes within 3 SE of the PDE value.", ""]
    if missing:
        lines += ["## Not rendered", ""] + [f"- {m}" for m in missing] + [""]
    with open(_target(run_dir, writer, "summary.md"), "w") as fh:
        fh.write("\n".join(lines))
    written.append("summary.md")
    return written
