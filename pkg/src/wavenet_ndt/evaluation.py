"""Scale-invariant reconstruction SNR and WNST vs network comparison reports."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyInput, InvalidParameter, ZeroReference

SNR_CAP_DB = 300.0

PER_SAMPLE_HEADER = ["sample_id", "class", "noisy", "wnst_snr_db", "convnet_snr_db"]
SUMMARY_HEADER = ["class", "count", "wnst_mean_db", "convnet_mean_db"]


def snr_db(x, x_hat) -> float:
    """max over real a of 10 log10(|x|^2 / |x - a x_hat|^2).

    The optimum is a* = <x, x_hat> / |x_hat|^2. A zero reconstruction scores
    0 dB and a vanishing residual is capped at ``SNR_CAP_DB``.
    """
    x = np.asarray(x, dtype=float).ravel()
    x_hat = np.asarray(x_hat, dtype=float).ravel()
    if x.shape != x_hat.shape:
        raise InvalidParameter("snr_db: vectors differ in length")
    ref = float(x @ x)
    if ref == 0:
        raise ZeroReference("snr_db: reference vector is zero")
    denom = float(x_hat @ x_hat)
    if denom == 0:
        return 0.0
    a = float(x @ x_hat) / denom
    resid = x - a * x_hat
    err = float(resid @ resid)
    if err <= ref * 10 ** (-SNR_CAP_DB / 10):
        return SNR_CAP_DB
    return min(SNR_CAP_DB, 10.0 * math.log10(ref / err))


@dataclass
class SampleScore:
    sample_id: int
    class_label: str
    noisy: bool
    wnst_db: float
    convnet_db: float | None


@dataclass
class EvalReport:
    per_sample: list = field(default_factory=list)

    def __post_init__(self):
        self.per_sample = sorted(self.per_sample, key=lambda s: s.sample_id)

    @property
    def has_convnet(self) -> bool:
        return bool(self.per_sample) and self.per_sample[0].convnet_db is not None

    def _summarise(self, rows) -> dict:
        wnst = [r.wnst_db for r in rows]
        out = {"count": len(rows), "wnst_mean_db": float(np.mean(wnst))}
        out["convnet_mean_db"] = (
            float(np.mean([r.convnet_db for r in rows])) if self.has_convnet else None
        )
        return out

    @property
    def per_class_snr(self) -> dict:
        classes = sorted({r.class_label for r in self.per_sample})
        return {
            c: self._summarise([r for r in self.per_sample if r.class_label == c])
            for c in classes
        }

    @property
    def overall(self) -> dict:
        return self._summarise(self.per_sample)


def evaluate(model, dataset, split: str = "test") -> EvalReport:
    """Score the WNST input and, if ``model`` is given, the network output."""
    from .nn.model import predict

    x, y, idx = dataset.arrays(split)
    if idx.size == 0:
        raise EmptyInput(f"split {split!r} is empty")
    pred = predict(model, x) if model is not None else None
    rows = []
    for row, i in enumerate(idx):
        sample = dataset.samples[i]
        rows.append(
            SampleScore(
                int(i),
                sample.class_label.value,
                bool(sample.noisy),
                snr_db(y[row], x[row]),
                snr_db(y[row], pred[row]) if pred is not None else None,
            )
        )
    return EvalReport(rows)


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def summary_rows(report: EvalReport) -> list:
    rows = []
    for cls, s in report.per_class_snr.items():
        rows.append([cls, str(s["count"]), _fmt(s["wnst_mean_db"]), _fmt(s["convnet_mean_db"])])
    o = report.overall
    rows.append(["all", str(o["count"]), _fmt(o["wnst_mean_db"]), _fmt(o["convnet_mean_db"])])
    return rows


def sample_rows(report: EvalReport) -> list:
    return [
        [str(r.sample_id), r.class_label, str(r.noisy).lower(), _fmt(r.wnst_db), _fmt(r.convnet_db)]
        for r in report.per_sample
    ]


def export_report(report: EvalReport, path, fmt: str = "csv") -> list[Path]:
    """Write summary and per-sample tables into directory ``path``."""
    if not report.per_sample:
        raise EmptyInput("refusing to export an empty report")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        files = [out / "summary.csv", out / "per_sample.csv"]
        for f, header, rows in zip(
            files, (SUMMARY_HEADER, PER_SAMPLE_HEADER), (summary_rows(report), sample_rows(report))
        ):
            with open(f, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(header)
                writer.writerows(rows)
        return files
    if fmt == "markdown":
        f = out / "report.md"
        lines = ["## Mean SNR (dB) by class", "", _md_table(SUMMARY_HEADER, summary_rows(report))]
        lines += ["", "## Per-sample SNR (dB)", "", _md_table(PER_SAMPLE_HEADER, sample_rows(report))]
        f.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return [f]
    raise InvalidParameter(f"unknown report format {fmt!r}")


def _md_table(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines)


def read_per_sample_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
