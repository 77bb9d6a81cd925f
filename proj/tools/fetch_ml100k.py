#!/usr/bin/env python3
"""Fetch MovieLens 100K ratings into data/ml-100k/u.data.

The GroupLens site is not always reachable, so this pulls the copy of the
interaction file that ships inside the RecBole wheel and rewrites it in the
original tab-separated u.data layout (user, item, rating, timestamp).
"""
import argparse
import pathlib
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def main() -> int:
    root = pathlib.Path(__file__).resolve().parent.parent
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(root / "data" / "ml-100k" / "u.data"))
    ap.add_argument("--wheel", help="use an already downloaded recbole wheel")
    args = ap.parse_args()

    out = pathlib.Path(args.out)
    if out.exists():
        print(f"{out} already present")
        return 0

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel
        if wheel is None:
            subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q",
                            "recbole==1.2.1", "-d", tmp], check=True)
            wheel = next(pathlib.Path(tmp).glob("recbole-*.whl"))
        text = zipfile.ZipFile(wheel).read(MEMBER).decode()

    lines = text.splitlines()[1:]  # drop the typed header
    rows = []
    for line in lines:
        user, item, rating, ts = line.split("\t")
        rows.append(f"{int(user)}\t{int(item)}\t{int(float(rating))}\t{int(float(ts))}\n")
    if len(rows) != 100000:
        print(f"unexpected row count {len(rows)}", file=sys.stderr)
        return 1
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(rows))
    print(f"wrote {len(rows)} ratings to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
