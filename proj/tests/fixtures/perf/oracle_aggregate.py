#!/usr/bin/env python3
"""Independent reference aggregation used to produce the golden dataset CSVs.

Usage: oracle_aggregate.py <perf interval csv> [schema.json] > golden.csv
Windows are [k*5, (k+1)*5); a window lacking a counted value for any schema
event (or carrying a <not counted> one) is dropped.
"""
import json
import math
import sys


def fmt(v):
    return str(int(v)) if float(v).is_integer() else repr(v)


def main():
    path = sys.argv[1]
    names = None
    if len(sys.argv) > 2:
        names = json.load(open(sys.argv[2]))["names"]
    samples = []
    order = []
    with open(path, newline="") as f:
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            cols = line.split(",")
            t, count, event = float(cols[0]), cols[1].strip(), cols[3].strip()
            if event not in order:
                order.append(event)
            samples.append((t, None if count.startswith("<") else float(count), event))
    if names is None:
        names = order
    sums, bad, seen = {}, set(), set()
    for t, c, e in samples:
        if e not in names:
            continue
        k = math.floor(t / 5.0)
        seen.add(k)
        if c is None:
            bad.add(k)
        else:
            sums.setdefault(k, {}).setdefault(e, 0.0)
            sums[k][e] += c
    print(",".join(names))
    for k in range(min(seen), max(seen) + 1):
        row = sums.get(k, {})
        if k in bad or any(n not in row for n in names):
            continue
        print(",".join(fmt(row[n]) for n in names))


main()
