"""Download MovieLens-100K into ``data/ml-100k/``.

Only ``u.data`` (tab-separated user, item, rating, timestamp) is kept. The
archive comes from the GroupLens site; pass ``--url`` to use a mirror.
"""
import argparse
import hashlib
import io
import sys
import urllib.request
import zipfile
from pathlib import Path

URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
DEST = Path(__file__).resolve().parents[1] / "data" / "ml-100k"


def fetch(url, dest: Path, timeout=60) -> Path:
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        payload = resp.read()
    with zipfile.ZipFile(io.BytesIO(payload)) as zf:
        raw = zf.read("ml-100k/u.data")
    dest.mkdir(parents=True, exist_ok=True)
    out = dest / "u.data"
    out.write_bytes(raw)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--url", default=URL)
    ap.add_argument("--dest", type=Path, default=DEST)
    args = ap.parse_args()
    target = args.dest / "u.data"
    if target.is_file():
        print(f"{target} already present")
        return 0
    try:
        out = fetch(args.url, args.dest)
    except (OSError, zipfile.BadZipFile, KeyError) as e:
        print(f"download failed: {e}", file=sys.stderr)
        return 1
    lines = out.read_bytes().count(b"\n")
    print(f"wrote {out} ({lines} ratings, sha256 {hashlib.sha256(out.read_bytes()).hexdigest()[:16]})")
    return 0 if lines == 100_000 else 1


if __name__ == "__main__":
    sys.exit(main())
