"""Run reports: per-frame log plus aggregates."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_COLUMNS = ("frame", "segment", "true_label", "predicted_label", "model_id",
               "macs", "params", "bypassed", "rescaled", "mode", "measured")


@dataclass
class RunReport:
    frames: dict[str, list] = field(default_factory=lambda: {c: [] for c in CSV_COLUMNS})
    skew_events: list[dict] = field(default_factory=list)
    compile_events: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    general_top: dict = field(default_factory=dict)   # {"id", "macs", "params"} of the full model
    error: str | None = None

    def record(self, **row):
        for c in CSV_COLUMNS:
            self.frames[c].append(row[c])

    def __len__(self):
        return len(self.frames["frame"])

    def column(self, name) -> np.ndarray:
        return np.asarray(self.frames[name])

    def to_json(self) -> dict:
        d = {
            "config": self.config,
            "aggregates": compute_metrics(self) if len(self) else {},
            "skew_events": self.skew_events,
            "compile_events": self.compile_events,
            "general_top": self.general_top,
        }
        if self.error:
            d["error"] = self.error
        return d

    def json_text(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        cols = [self.frames[c] for c in CSV_COLUMNS]
        for row in zip(*cols):
            w.writerow([int(v) if isinstance(v, (bool, np.bool_)) else v for v in row])
        return buf.getvalue()

    def write(self, out_dir, stem: str = "report") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        jp, cp = out / f"{stem}.json", out / f"{stem}.csv"
        jp.write_text(self.json_text())
        cp.write_text(self.csv_text())
        return jp, cp

    def digest(self) -> str:
        return hashlib.sha256((self.json_text() + self.csv_text()).encode()).hexdigest()

    @classmethod
    def read(cls, json_path, csv_path) -> "RunReport":
        d = json.loads(Path(json_path).read_text())
        rep = cls(config=d["config"], skew_events=d["skew_events"],
                  compile_events=d["compile_events"], general_top=d.get("general_top", {}),
                  error=d.get("error"))
        with open(csv_path, newline="") as fh:
            for row in csv.DictReader(fh):
                rep.record(
                    frame=int(row["frame"]), segment=int(row["segment"]),
                    true_label=int(row["true_label"]), predicted_label=int(row["predicted_label"]),
                    model_id=row["model_id"], macs=int(row["macs"]), params=int(row["params"]),
                    bypassed=row["bypassed"] == "1", rescaled=row["rescaled"] == "1",
                    mode=row["mode"], measured=row["measured"] == "1")
        return rep


def _summary(rep: RunReport, sel: np.ndarray) -> dict:
    y = rep.column("true_label")[sel]
    yhat = rep.column("predicted_label")[sel]
    macs = rep.column("macs")[sel]
    n = int(sel.sum())
    if n == 0:
        return {"frames": 0}
    ids = [m for m, s in zip(rep.frames["model_id"], sel) if s]
    params = rep.column("params")[sel]
    modal_id, _ = Counter(ids).most_common(1)[0]
    modal_params = int(params[ids.index(modal_id)])
    out = {
        "frames": n,
        "correct": int(np.count_nonzero(y == yhat)),
        "accuracy": float(np.count_nonzero(y == yhat) / n),
        "mean_macs": float(macs.mean()),
        "modal_model": modal_id,
        "modal_params": modal_params,
        "bypass_rate": float(rep.column("bypassed")[sel].mean()),
        "rescaled_rate": float(rep.column("rescaled")[sel].mean()),
    }
    top = rep.general_top
    if top:
        out["macs_savings"] = float(top["macs"] / out["mean_macs"]) if out["mean_macs"] else None
        out["params_savings"] = float(top["params"] / modal_params) if modal_params else None
    return out


def compute_metrics(rep: RunReport) -> dict:
    """Aggregates over all frames and over the measured frames only."""
    if len(rep) == 0:
        raise ValueError("report has no frames")
    all_sel = np.ones(len(rep), dtype=bool)
    return {
        "all": _summary(rep, all_sel),
        "measured": _summary(rep, rep.column("measured").astype(bool)),
        "n_skew_events": len(rep.skew_events),
        "n_compiled": sum(1 for e in rep.compile_events if e.get("error") is None),
    }
