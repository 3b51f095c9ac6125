"""
Result files of the command-line tools: CCDF tables and η_CRB summaries as
CSV, the run manifest as JSON, solver diagnostics as a YAML sidecar.

Floats are written with format_float so that identical runs produce
byte-identical files.
"""
import os
import csv
import json
from typing import Any, Dict, Iterable, List, Mapping, Sequence

import yaml


CCDF_FIELDS = ["eta_threshold", "prob", "method", "rho_db", "n_samples"]
CRB_SUMMARY_FIELDS = ["rho_db", "eta_crb_mean", "kind"]
CRB_TABLE_FIELDS = ["rho_db", "eta_crb_mean", "kind", "n_used", "n_singular"]


def format_float(value: float) -> str:
    return "{:.10g}".format(float(value))


def _write_csv(path: str, fieldnames: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def ccdf_rows(method: str, rho_db: float, table: Any) -> List[Dict[str, str]]:
    """One row per threshold of a CcdfTable."""
    return [
        {
            "eta_threshold": format_float(t),
            "prob": format_float(p),
            "method": method,
            "rho_db": format_float(rho_db),
            "n_samples": str(table.n_samples),
        }
        for t, p in zip(table.thresholds, table.prob)
    ]


def write_ccdf_tables(out_dir: str, tables: Mapping[Any, Any], methods: Sequence[str]) -> List[str]:
    """
    Write <method>.csv for every method with at least one table, SNR points
    in ascending order.

    Returns:
        List[str]: Paths written.
    """
    written = []
    for method in methods:
        keys = sorted(rho for (name, rho) in tables if name == method)
        if not keys:
            continue
        rows: List[Dict[str, str]] = []
        for rho_db in keys:
            rows.extend(ccdf_rows(method, rho_db, tables[(method, rho_db)]))
        path = os.path.join(out_dir, f"{method}.csv")
        _write_csv(path, CCDF_FIELDS, rows)
        written.append(path)
    return written


def write_eta_crb(out_dir: str, tables: Mapping[Any, Any], crb_names: Sequence[str], filename: str = "eta_crb.csv") -> str:
    """η_CRB reference curves of all Fisher models in one CCDF file."""
    rows: List[Dict[str, str]] = []
    for name in crb_names:
        for rho_db in sorted(rho for (method, rho) in tables if method == name):
            rows.extend(ccdf_rows(name, rho_db, tables[(name, rho_db)]))
    path = os.path.join(out_dir, filename)
    _write_csv(path, CCDF_FIELDS, rows)
    return path


def write_crb_summary(path: str, crb_rows: Sequence[Any], with_counts: bool = False) -> str:
    """
    rho_db,eta_crb_mean,kind rows; with_counts appends the number of used
    and singular realizations.
    """
    fields = CRB_TABLE_FIELDS if with_counts else CRB_SUMMARY_FIELDS
    rows = []
    for row in crb_rows:
        entry = {"rho_db": format_float(row.rho_db), "eta_crb_mean": format_float(row.eta_crb_mean), "kind": row.kind}
        if with_counts:
            entry.update({"n_used": str(row.n_used), "n_singular": str(row.n_singular)})
        rows.append(entry)
    _write_csv(path, fields, rows)
    return path


def write_manifest(
    out_dir: str,
    config_hash: str,
    seed: int,
    version: str,
    command: str,
    files: Sequence[str],
    failures: Sequence[Mapping[str, Any]] = (),
) -> str:
    """manifest.json: config hash, seed, package version, outputs and failures."""
    manifest = {
        "command": command,
        "config_hash": config_hash,
        "master_seed": int(seed),
        "version": version,
        "files": sorted(os.path.basename(f) for f in files),
        "n_failures": len(failures),
        "failures": [dict(f) for f in failures],
    }
    path = os.path.join(out_dir, "manifest.json")
    os.makedirs(out_dir, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def write_diagnostics(path: str, diagnostics: Mapping[str, Any]) -> str:
    """YAML sidecar with solver diagnostics of an estimate."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(dict(diagnostics), f, sort_keys=False, default_flow_style=False)
    return path
