#!/usr/bin/env python3
"""Convert a labeled emotion dataset (CSV) into satbot's text<TAB>label files.

    python3 scripts/convert_emotion_dataset.py data.csv \
        --text-column text --label-column emotion \
        --train assets/emotions.tsv --test heldout.tsv --test-fraction 0.2

Labels are matched case-insensitively against the 12 emotion names;
--label-map FILE adds "source<TAB>Emotion" aliases (for example Persian
label names). Rows with an unknown label are reported and skipped.
"""

import argparse
import csv
import random
import sys

EMOTIONS = [
    "Happy", "Angry", "Anxious", "Ashamed", "Disappointed", "Disgusted",
    "Envious", "Guilty", "Insecure", "Loving", "Sad", "Jealous",
]


def column(header, name):
    if name.isdigit():
        return int(name)
    try:
        return header.index(name)
    except ValueError:
        sys.exit(f"no column {name!r} in header {header}")


def load_aliases(path):
    aliases = {e.lower(): e for e in EMOTIONS}
    if path:
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip() and not line.startswith("#"):
                    src, dst = line.rstrip("\n").split("\t")
                    if dst not in EMOTIONS:
                        sys.exit(f"label map targets unknown emotion {dst!r}")
                    aliases[src.strip().lower()] = dst
    return aliases


def write(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("# text\temotion\n")
        for text, label in rows:
            f.write(f"{text}\t{label}\n")


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("input")
    p.add_argument("--text-column", default="text", help="header name or 0-based index")
    p.add_argument("--label-column", default="label", help="header name or 0-based index")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--label-map")
    p.add_argument("--train", required=True)
    p.add_argument("--test")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    aliases = load_aliases(args.label_map)
    with open(args.input, encoding="utf-8-sig", newline="") as f:
        reader = csv.reader(f, delimiter=args.delimiter)
        header = next(reader)
        ti, li = column(header, args.text_column), column(header, args.label_column)
        rows, seen, skipped = [], set(), 0
        for n, rec in enumerate(reader, start=2):
            text = " ".join(rec[ti].split())
            label = aliases.get(rec[li].strip().lower())
            if not text or label is None:
                print(f"line {n}: skipped (label {rec[li]!r})", file=sys.stderr)
                skipped += 1
                continue
            if text not in seen:
                seen.add(text)
                rows.append((text, label))

    if args.test:
        # Stratified split so every class appears on both sides.
        rng = random.Random(args.seed)
        train, test = [], []
        for e in EMOTIONS:
            group = [r for r in rows if r[1] == e]
            rng.shuffle(group)
            k = round(len(group) * args.test_fraction)
            test += group[:k]
            train += group[k:]
        write(args.train, train)
        write(args.test, test)
    else:
        write(args.train, rows)
    missing = sorted(set(EMOTIONS) - {r[1] for r in rows})
    print(f"{len(rows)} rows kept, {skipped} skipped", file=sys.stderr)
    if missing:
        print(f"warning: no rows for {', '.join(missing)}", file=sys.stderr)


if __name__ == "__main__":
    main()
