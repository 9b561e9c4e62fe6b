#!/usr/bin/env python3
"""Build data/adult/adult.csv from the raw UCI Adult files.

Usage: build_adult_csv.py <dir containing adult.data and adult.test> <out.csv>

The raw files have no header, use ", " separators, and the test split has a
leading comment line and a trailing "." on every label. Both splits are merged
(48,842 records). Missing values stay as "?".
"""
import sys
from pathlib import Path

COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education_num",
    "marital_status", "occupation", "relationship", "race", "sex",
    "capital_gain", "capital_loss", "hours_per_week", "native_country",
    "income",
]


def rows(path):
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("|"):
            continue
        fields = [f.strip() for f in line.split(",")]
        assert len(fields) == len(COLUMNS), line
        fields[-1] = fields[-1].rstrip(".")
        yield fields


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    records = list(rows(src / "adult.data")) + list(rows(src / "adult.test"))
    with open(out, "w", newline="\n") as f:
        f.write(",".join(COLUMNS) + "\n")
        for r in records:
            f.write(",".join(r) + "\n")
    print(f"wrote {len(records)} records to {out}")


if __name__ == "__main__":
    main()
