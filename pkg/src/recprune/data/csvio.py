"""Fixed-schema CSV reports (comma separator, LF endings, minimal quoting)."""

from __future__ import annotations

import csv
import io
import math

from .checkpoint import atomic_write

SCHEMA_VERSION = 1

SCHEMAS: dict[str, tuple[str, ...]] = {
    "thm1": ("seed", "p", "pooled_ratio", "map_ratio", "cut"),
    "thm1_fit": ("quantity", "slope", "intercept", "lo", "hi", "ok"),
    "thm2": (
        "seed", "p", "p_eff", "m", "M", "lambda0", "lambda_min_g0", "eta", "loss_initial", "loss_final",
        "steps", "max_movement", "movement_bound", "envelope_ok", "movement_ok", "grad_ok", "distance",
        "bound", "closed_form", "rel_err", "bound_ok", "closed_form_ok",
    ),
    "rounds": ("round", "sparsity", "realized_sparsity", "loss", "class_loss", "recon_loss", "matches_theta_pre"),
    "tickets": (
        "round", "sparsity", "realized_sparsity", "upstream_loss", "upstream_acc", "downstream_class_acc",
        "downstream_pixel_acc", "feature_distance", "feature_distance_ticket",
    ),
    "curve": ("stage", "epoch", "loss", "class_loss", "recon_loss"),
    "compare": ("sparsity", "metric", "a", "b", "delta"),
    "ablation": ("stages", "recon_loss", "downstream_pixel_acc", "feature_distance", "best"),
}


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(float(v))
    if hasattr(v, "item"):  # numpy scalar
        return format_value(v.item())
    return str(v)


def render_csv(kind: str, rows) -> str:
    if kind not in SCHEMAS:
        raise KeyError(f"unknown report type {kind!r}")
    header = SCHEMAS[kind]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        extra = set(row) - set(header)
        if extra:
            raise KeyError(f"columns {sorted(extra)} not in the {kind} schema")
        w.writerow([format_value(row.get(col, "")) for col in header])
    return buf.getvalue()


def write_csv(path, kind: str, rows) -> None:
    atomic_write(path, render_csv(kind, rows).encode("utf-8"))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
