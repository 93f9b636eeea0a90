"""Input coercion shared by the estimators."""

from __future__ import annotations

import numpy as np

from .graph import DiscreteDataset, Kind, Role, VariableSchema
from .graph import OUTCOME_SUFFIX


def check_dataset(X, levels=None) -> DiscreteDataset:
    """Coerce ``X`` to a :class:`DiscreteDataset`.

    Accepts a dataset (returned unchanged), a pandas DataFrame or a 2-D integer
    array. DataFrame columns named ``<node>_value`` with a float dtype become
    numeric outcomes; categorical columns keep their category order; any other
    column is discrete with its sorted distinct values as levels unless
    ``levels`` maps the column name to an explicit order.
    """
    if isinstance(X, DiscreteDataset):
        return X
    levels = dict(levels or {})
    if hasattr(X, "columns") and hasattr(X, "dtypes"):
        return _from_frame(X, levels)
    arr = np.asarray(X)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise ValueError("array input must hold integer level codes")
        arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise ValueError("array level codes must be nonnegative")
    schema, cols = [], {}
    for j in range(arr.shape[1]):
        name = f"X{j}"
        k = max(int(arr[:, j].max()) + 1 if len(arr) else 2, 2)
        schema.append(VariableSchema(name, Kind.CATEGORICAL, tuple(str(i) for i in range(k)), Role.EXTRINSIC))
        cols[name] = arr[:, j]
    return DiscreteDataset(schema, cols)


def _from_frame(df, levels) -> DiscreteDataset:
    schema, cols = [], {}
    for name in df.columns:
        name = str(name)
        s = df[name]
        if s.isna().any():
            raise ValueError(f"column {name!r} has missing values")
        if name.endswith(OUTCOME_SUFFIX) and s.dtype.kind == "f":
            schema.append(VariableSchema(name, Kind.NUMERIC_OUTCOME, (), Role.ERROR))
            cols[name] = s.to_numpy(dtype=float)
            continue
        if name in levels:
            lv = tuple(str(v) for v in levels[name])
            kind = Kind.ORDINAL
        elif hasattr(s, "cat"):
            lv = tuple(str(v) for v in s.cat.categories)
            kind = Kind.ORDINAL if s.cat.ordered else Kind.CATEGORICAL
        else:
            lv = tuple(str(v) for v in sorted(s.unique().tolist()))
            kind = Kind.CATEGORICAL
        if len(lv) < 2:
            raise ValueError(f"column {name!r} needs at least 2 levels; pass them via `levels`")
        var = VariableSchema(name, kind, lv, Role.EXTRINSIC)
        schema.append(var)
        try:
            cols[name] = [lv.index(str(v)) for v in s.tolist()]
        except ValueError:
            raise ValueError(f"column {name!r} has values outside its levels {list(lv)}") from None
    return DiscreteDataset(schema, cols)
