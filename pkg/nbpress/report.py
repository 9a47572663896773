"""Render analysis outputs: regression tables, JSON report, series and curve CSVs."""

import io
import json
import logging
import math
import os

from pathlib import Path

import numpy as np
import pandas as pd

from nbpress import settings
from nbpress.analysis import Notice
from nbpress.ivcurve import curve_frame
from nbpress.regress import SPEC_NAMES, HypothesisVerdict, RegressionResult


LOG = logging.getLogger(__name__)


def json_safe(value):
    """Make a value JSON-safe: NaN/inf -> None, numpy scalars -> Python."""
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _records(frame):
    return json_safe(frame.to_dict(orient="records"))


def format_cell(coefficient, t_stat, mark):
    t = "nan" if not math.isfinite(t_stat) else f"{t_stat:.2f}"
    return f"{coefficient:.4g}{mark} ({t})"


def render_tables(results, notices=(), scale="percent"):
    """TSV regression tables, one block per regression family.

    Each row is one regression; cells hold the coefficient with significance
    stars and its t-statistic in parentheses, followed by R2 and Nobs.
    """
    lines = [f"# IV changes in {'percentage points' if scale == 'percent' else 'decimal'}"]
    for name in SPEC_NAMES:
        block = [r for r in results if r.spec and r.spec.name == name]
        if not block:
            continue
        columns = []
        for result in block:
            for column in result.columns:
                if column not in columns:
                    columns.append(column)
        lines.append(f"# {name}")
        lines.append("\t".join(["spec"] + columns + ["R2", "Nobs"]))
        for result in block:
            cells = [result.spec.label]
            for column in columns:
                if column in result.columns:
                    i = result.columns.index(column)
                    cells.append(
                        format_cell(
                            result.coefficients[i], result.t_stats[i], result.stars[i]
                        )
                    )
                else:
                    cells.append("")
            cells.append(f"{result.r_squared:.4f}")
            cells.append(str(result.nobs))
            lines.append("\t".join(cells))
    if notices:
        lines.append("# Notices")
        lines.append("spec\tkind\tmessage")
        for notice in notices:
            lines.append(f"{notice.label}\t{notice.kind}\t{notice.message}")
    return "\n".join(lines) + "\n"


def report_dict(analysis):
    """JSON-serialisable report of an analysis run."""
    config = analysis.config
    return json_safe(
        {
            "schema_version": settings.SCHEMA_VERSION,
            "config": config.to_dict(),
            "config_hash": config.config_hash(),
            "cleaning": analysis.cleaning.to_dict(),
            "spot": analysis.spot_report.to_dict(),
            "interval": config.interval,
            "scale": config.scale,
            "results": [result.to_dict() for result in analysis.results],
            "notices": [notice.to_dict() for notice in analysis.notices],
            "verdict": analysis.verdict.to_dict() if analysis.verdict else None,
            "curve": [stats.to_dict() for stats in analysis.curve],
            "summaries": {
                name: _records(frame) for name, frame in analysis.summaries.items()
            },
        }
    )


def render_json(data):
    return json.dumps(data, indent=2) + "\n"


def render_csv(frame):
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue()


def render_outputs(analysis, formats=("tsv", "json", "csv")):
    """All output files as {file name: text}, rendered in memory."""
    outputs = {}
    if "csv" in formats:
        outputs["series.csv"] = render_csv(analysis.series.to_frame())
        outputs["curve.csv"] = render_csv(curve_frame(analysis.curve))
    if "tsv" in formats:
        outputs["tables.tsv"] = render_tables(
            analysis.results, analysis.notices, analysis.config.scale
        )
    if "json" in formats:
        outputs["report.json"] = render_json(report_dict(analysis))
    return outputs


def write_outputs(outputs, out_dir):
    """Write rendered outputs, each through a temporary file and rename."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in outputs.items():
        target = out_dir / name
        temporary = out_dir / f".{name}.tmp"
        with temporary.open("w", newline="") as fp:
            fp.write(text)
        os.replace(temporary, target)
        written.append(target)
        LOG.info("Wrote %s", target)
    return written


def load_report(path):
    """Read a report.json back into results, notices and verdict."""
    try:
        with open(path) as fp:
            data = json.load(fp)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"Cannot read report {path}: {exc}") from None
    version = data.get("schema_version")
    if version != settings.SCHEMA_VERSION:
        raise ValueError(
            f"Unsupported report schema version {version}, expected {settings.SCHEMA_VERSION}"
        )
    results = [RegressionResult.from_dict(_restore(d)) for d in data.get("results", [])]
    notices = [Notice.from_dict(d) for d in data.get("notices", [])]
    verdict = data.get("verdict")
    return {
        "data": data,
        "results": results,
        "notices": notices,
        "verdict": HypothesisVerdict.from_dict(verdict) if verdict else None,
    }


def _restore(d):
    """Undo json_safe for numeric arrays (None -> NaN)."""
    d = dict(d)
    for key in ("coefficients", "std_errors", "t_stats", "p_values"):
        d[key] = [math.nan if v is None else v for v in d[key]]
    d["covariance"] = [[math.nan if v is None else v for v in row] for row in d["covariance"]]
    return d


def rerender(report_path, out_path=None):
    """Rebuild tables.tsv from an existing report.json."""
    loaded = load_report(report_path)
    text = render_tables(
        loaded["results"], loaded["notices"], loaded["data"].get("scale", "percent")
    )
    out_path = Path(out_path) if out_path else Path(report_path).with_name("tables.tsv")
    write_outputs({out_path.name: text}, out_path.parent)
    return out_path


def summary_frame(results):
    """Long frame of coefficients (one row per result and column)."""
    records = []
    for result in results:
        for i, column in enumerate(result.columns):
            records.append(
                {
                    "spec": result.spec.label if result.spec else "OLS",
                    "column": column,
                    "coefficient": result.coefficients[i],
                    "t_stat": result.t_stats[i],
                    "p_value": result.p_values[i],
                    "stars": result.stars[i],
                    "nobs": result.nobs,
                }
            )
    return pd.DataFrame.from_records(records)
