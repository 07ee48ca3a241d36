"""Write MovieLens-100K as ``u.data``/``u.item`` from the copy bundled in the recbole wheel.

    pip download --no-deps -d /tmp/dl recbole==1.2.1
    python3 scripts/convert_ml100k.py /tmp/dl/recbole-1.2.1-py3-none-any.whl data/ml-100k
"""
import argparse
import zipfile
from pathlib import Path

PREFIX = "recbole/dataset_example/ml-100k/ml-100k"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("wheel")
    ap.add_argument("out", nargs="?", default="data/ml-100k")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(args.wheel) as z:
        inter = z.read(PREFIX + ".inter").decode("utf-8").splitlines()[1:]
        items = z.read(PREFIX + ".item").decode("utf-8").splitlines()[1:]
    # u.data: user, item, rating, timestamp (tab separated, no header)
    (out / "u.data").write_text("\n".join(inter) + "\n")
    rows = []
    for line in items:
        item_id, title, year, *_ = line.split("\t") + [""]
        rows.append(f"{item_id}|{title} ({year})" if year else f"{item_id}|{title}")
    (out / "u.item").write_text("\n".join(rows) + "\n", encoding="latin-1", errors="replace")
    print(f"wrote {len(inter)} ratings and {len(rows)} items to {out}")


if __name__ == "__main__":
    main()
