"""Convert MovieLens-100k into the ``user,item,category,timestamp`` event CSV.

Accepts either the GroupLens release directory (``u.data`` + ``u.item``)
or the parquet pair shipped inside the pytorch-widedeep wheel. A movie's
category is its first listed genre. Output is gzip with a zero mtime, so
the file is byte-identical across runs.

    python scripts/prepare_movielens.py SOURCE_DIR tests/data/ml100k.csv.gz
"""
from __future__ import annotations

import argparse
import csv
import gzip
import io
from pathlib import Path

GENRES = ["unknown", "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime", "Documentary",
          "Drama", "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller",
          "War", "Western"]


def first_genre(flags) -> str:
    for g, f in zip(GENRES, flags):
        if int(f):
            return g
    return "unknown"


def read_grouplens(src: Path):
    genre = {}
    with open(src / "u.item", encoding="latin-1") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("|")
            genre[parts[0]] = first_genre(parts[5:24])
    rows = []
    with open(src / "u.data") as fh:
        for line in fh:
            u, i, _, t = line.split("\t")
            rows.append((u, i, genre[i], int(t)))
    return rows


def read_parquet(src: Path):
    import pandas as pd

    items = pd.read_parquet(next(src.glob("MovieLens100k_items.parquet*")))
    genre = {str(r["movie_id"]): first_genre([r[g] for g in GENRES]) for _, r in items.iterrows()}
    data = pd.read_parquet(next(src.glob("MovieLens100k_data.parquet*")))
    return [(str(u), str(i), genre[str(i)], int(t))
            for u, i, t in zip(data["user_id"], data["movie_id"], data["timestamp"])]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source", type=Path)
    ap.add_argument("output", type=Path)
    args = ap.parse_args(argv)
    rows = read_grouplens(args.source) if (args.source / "u.data").exists() else read_parquet(args.source)
    rows.sort(key=lambda r: (int(r[0]), r[3], int(r[1])))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["user", "item", "category", "timestamp"])
    w.writerows(rows)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    with open(args.output, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as gz:
        gz.write(buf.getvalue().encode("utf-8"))
    print(f"wrote {len(rows)} events to {args.output}")


if __name__ == "__main__":
    main()
