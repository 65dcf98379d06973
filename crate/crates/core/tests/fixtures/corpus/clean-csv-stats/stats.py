import csv
import statistics
import sys


def column_stats(path):
    with open(path, newline="") as handle:
        rows = list(csv.DictReader(handle))
    out = {}
    for name in rows[0] if rows else []:
        try:
            values = [float(r[name]) for r in rows]
        except ValueError:
            continue
        out[name] = (statistics.mean(values), min(values), max(values))
    return out


if __name__ == "__main__":
    for name, (mean, lo, hi) in column_stats(sys.argv[1]).items():
        print(f"{name}: mean={mean:.3f} min={lo} max={hi}")
