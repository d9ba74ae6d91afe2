"""Materialize MovieLens 100K (u.data, u.item, u.user) in the original GroupLens formats.

GroupLens serves ml-100k.zip from files.grouplens.org. When that host is not
reachable, the same three tables ship inside the ``pytorch-widedeep`` wheel as
parquet files; this script downloads that wheel with pip (no install) and
writes them back out in the tab/pipe-separated layout the ``mvictr`` parsers
expect.

    python scripts/fetch_movielens.py --out data/ml-100k

The dataset license forbids redistribution, so the output directory is
git-ignored.
"""
import argparse
import glob
import io
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

GROUPLENS_URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
WHEEL_SPEC = "pytorch-widedeep==1.6.5"
GENRES = [
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
    "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery",
    "Romance", "Sci-Fi", "Thriller", "War", "Western",
]


def from_grouplens(out: Path) -> bool:
    try:
        with urllib.request.urlopen(GROUPLENS_URL, timeout=15) as resp:
            payload = resp.read()
    except OSError:
        return False
    with zipfile.ZipFile(io.BytesIO(payload)) as zf:
        for name in ("u.data", "u.item", "u.user"):
            (out / name).write_bytes(zf.read(f"ml-100k/{name}"))
    return True


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float) and value != value:
        return ""
    return str(value)


def from_wheel(out: Path) -> None:
    import pandas as pd

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", WHEEL_SPEC, "-d", tmp],
            check=True,
        )
        wheel = glob.glob(f"{tmp}/*.whl")[0]
        prefix = "pytorch_widedeep/datasets/data/MovieLens100k_"
        frames = {}
        with zipfile.ZipFile(wheel) as zf:
            for part in ("data", "items", "users"):
                with zf.open(f"{prefix}{part}.parquet.brotli") as fh:
                    frames[part] = pd.read_parquet(io.BytesIO(fh.read()))

    data = frames["data"]
    lines = [f"{u}\t{i}\t{r}\t{t}" for u, i, r, t in data[["user_id", "movie_id", "rating", "timestamp"]].itertuples(index=False)]
    (out / "u.data").write_text("\n".join(lines) + "\n", encoding="latin-1")

    items = frames["items"]
    cols = ["movie_id", "movie_title", "release_date", "video_release_date", "IMDb_URL"] + GENRES
    lines = ["|".join(_cell(v) for v in row) for row in items[cols].itertuples(index=False)]
    (out / "u.item").write_text("\n".join(lines) + "\n", encoding="latin-1", errors="replace")

    users = frames["users"]
    cols = ["user_id", "age", "gender", "occupation", "zip_code"]
    lines = ["|".join(_cell(v) for v in row) for row in users[cols].itertuples(index=False)]
    (out / "u.user").write_text("\n".join(lines) + "\n", encoding="latin-1")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="data/ml-100k")
    parser.add_argument("--source", choices=["auto", "grouplens", "wheel"], default="auto")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.source in ("auto", "grouplens") and from_grouplens(out):
        print(f"wrote {out} from {GROUPLENS_URL}")
        return
    if args.source == "grouplens":
        sys.exit("could not reach GroupLens")
    from_wheel(out)
    print(f"wrote {out} from the {WHEEL_SPEC} wheel")


if __name__ == "__main__":
    main()
