"""Print a plain-text summary of the experiment outputs under a runs directory."""

import argparse
import csv
import json
from pathlib import Path


def _auto(run: Path) -> list[str]:
    lines = []
    for report in sorted(run.glob("seed-*/report.json")):
        r = json.loads(report.read_text())
        e = r["constraint_errors"]
        drop = 100 * (1 - r["final_cost"] / r["initial_cost"])
        lines.append(
            f"  seed {r['seed']}: cost {r['initial_cost']:.4g} -> {r['final_cost']:.4g} (-{drop:.0f}%), "
            f"max constraint error {e['max']:.4f}, distortion {r['metrics_final']['shape_distortion']:.3f}"
        )
    return lines


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("runs", type=Path)
    root = parser.parse_args(argv).runs

    if (root / "data" / "manifest.json").exists():
        m = json.loads((root / "data" / "manifest.json").read_text())
        print(f"corpus: {m['n_triplets']} triplets, hash {m['corpus_hash'][:16]}")
    if (root / "encoder" / "summary.json").exists():
        s = json.loads((root / "encoder" / "summary.json").read_text())
        print(f"encoder: holdout accuracy {s['holdout_accuracy']:.4f}, smoothed loss "
              f"{s['smoothed_loss_initial']:.4g} -> {s['smoothed_loss_final']:.4g}")
    if (root / "metric_failure" / "summary.json").exists():
        for case in json.loads((root / "metric_failure" / "summary.json").read_text())["cases"]:
            m = case["metric"]
            print(f"metric-failure {case['method']}-{case['letter']}: certified {case['certified']}, "
                  f"A {m}={case['A'][m]:.4g} vs B {m}={case['B'][m]:.4g}")
    for name in ("auto_dmp", "auto_kmp"):
        if (root / name).exists():
            print(f"{name}:")
            print("\n".join(_auto(root / name)))
    table = root / "compare" / "compare.csv"
    if table.exists():
        print("compare:")
        with open(table) as fh:
            for row in csv.DictReader(fh):
                print(f"  seed {row['seed']} {row['run']:<15} final cost {float(row['final_cost']):.4g}")


if __name__ == "__main__":
    main()
