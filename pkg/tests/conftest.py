import os
from pathlib import Path

import numpy as np
import pytest

from mvictr.dataset import Feature, FeatureBundle, FeatureSchema

ROOT = Path(__file__).resolve().parents[1]
ML_DIR = Path(os.environ.get("MVICTR_DATA_DIR", ROOT / "data" / "ml-100k"))


def have_movielens() -> bool:
    return all((ML_DIR / n).is_file() for n in ("u.data", "u.item", "u.user"))


requires_movielens = pytest.mark.skipif(
    not have_movielens(),
    reason=f"MovieLens 100K not found in {ML_DIR}; run scripts/fetch_movielens.py",
)


@pytest.fixture
def ml_dir():
    if not have_movielens():
        pytest.skip("MovieLens 100K not available")
    return ML_DIR


def make_schema(user_sizes=(2,), item_sizes=(3,), multi_item=None):
    """Schema with features u0.. and i0..; ``multi_item`` adds a multi-valued item feature."""
    feats = [Feature(f"u{x}", "user", tuple(f"a{v}" for v in range(n))) for x, n in enumerate(user_sizes)]
    feats += [Feature(f"i{x}", "item", tuple(f"b{v}" for v in range(n))) for x, n in enumerate(item_sizes)]
    if multi_item:
        feats.append(Feature("g", "item", tuple(f"g{v}" for v in range(multi_item)), multi_valued=True))
    return FeatureSchema(feats)


def pair(schema, user_vals, item_vals, uid=0, iid=0):
    """Build a (user, item) bundle pair from per-feature value tuples in schema order."""
    uf = schema.view_features("user")
    itf = schema.view_features("item")
    ub = FeatureBundle(uid, "user", {f.name: tuple(v) for f, v in zip(uf, user_vals)})
    ib = FeatureBundle(iid, "item", {f.name: tuple(v) for f, v in zip(itf, item_vals)})
    return ub, ib


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
