#!/usr/bin/env python3
"""Regenerate report/fixtures from real pipeline runs.

Runs the driver CLI end to end on the acceptance seed and copies the
CSV artifacts the plot scripts consume. The threshold sweep re-runs the
matcher at several grounding thresholds and aggregates the per-clip
pseudo-label counts into one table.

Usage: python3 report/scripts/make_fixtures.py
"""

import csv
import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parents[2]
FIXTURES = REPO / "report" / "fixtures"

RUN_CONFIG = {"seed": 0, "train": {"learning_rate": 1e-3, "epochs": 20}}


def cli(*args: str) -> None:
    subprocess.run([sys.executable, "-m", "pavsgg.cli", *args], check=True, cwd=REPO)


def aggregate_metrics(metrics_csv: Path):
    with open(metrics_csv, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    match = sum(int(r["match_count"]) for r in rows)
    tp = sum(int(r["tp"]) for r in rows)
    precision = tp / match if match else 0.0
    # per-clip recall shares one GT count per clip; reuse the ratio columns
    recall = sum(float(r["recall"]) for r in rows) / len(rows) if rows else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return match, tp, precision, recall, f1


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        work = Path(tmp)
        config_path = work / "config.json"
        config_path.write_text(json.dumps(RUN_CONFIG), encoding="utf-8")
        data = work / "data"
        cli("gen-data", "--config", str(config_path), "--out", str(data))

        run = work / "run"
        cli("train", "--step", "1", "--config", str(config_path), "--data", str(data), "--out", str(run))
        shutil.copy(run / "train_log.csv", FIXTURES / "train_log.csv")

        out = work / "eval"
        cli(
            "eval", "--config", str(config_path), "--data", str(data),
            "--ckpt", str(run / "checkpoint"), "--out", str(out),
        )
        shutil.copy(out / "histograms.csv", FIXTURES / "histograms.csv")

        ablation = work / "ablation"
        cli("ablate", "--config", str(config_path), "--out", str(ablation))
        shutil.copy(ablation / "ablation.csv", FIXTURES / "ablation.csv")

        sweep_rows = []
        for tau in (0.0, 0.1, 0.2, 0.3, 0.35, 0.4):
            sweep_config = dict(RUN_CONFIG)
            sweep_config["ram"] = {"grounding_threshold": tau}
            sweep_path = work / f"sweep_{tau}.json"
            sweep_path.write_text(json.dumps(sweep_config), encoding="utf-8")
            match_dir = work / f"match_{tau}"
            cli("ram-match", "--config", str(sweep_path), "--data", str(data), "--out", str(match_dir))
            match, tp, precision, recall, f1 = aggregate_metrics(match_dir / "metrics.csv")
            sweep_rows.append((tau, match, tp, precision, recall, f1))

        lines = ["param,value,match_count,tp,precision,recall,f1"]
        for tau, match, tp, precision, recall, f1 in sweep_rows:
            lines.append(f"tau_gs,{tau!r},{match},{tp},{precision!r},{recall!r},{f1!r}")
        (FIXTURES / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    print(f"fixtures written to {FIXTURES}")


if __name__ == "__main__":
    main()
