import numpy as np
import pandas as pd
import pytest

from asrcause.graph import Kind
from asrcause.validation import check_dataset


def test_dataframe_columns():
    df = pd.DataFrame({
        "age": pd.Categorical(["old", "young", "old"], categories=["young", "old"], ordered=True),
        "g": ["M", "F", "F"],
        "Subs_value": [1.0, 2.5, 0.0],
    })
    d = check_dataset(df)
    assert d.variable("age").kind is Kind.ORDINAL and d.variable("age").levels == ("young", "old")
    assert d.variable("g").levels == ("F", "M") and list(d.column("g")) == [1, 0, 0]
    assert d.variable("Subs_value").kind is Kind.NUMERIC_OUTCOME
    d2 = check_dataset(df[["g"]].assign(h=[0, 1, 1]), levels={"g": ["M", "F"]})
    assert list(d2.column("g")) == [0, 1, 1]
    assert check_dataset(d) is d


def test_dataframe_errors():
    with pytest.raises(ValueError, match="at least 2 levels"):
        check_dataset(pd.DataFrame({"a": [1, 1, 1]}))
    with pytest.raises(ValueError, match="missing"):
        check_dataset(pd.DataFrame({"a": [1.0, None]}))
    with pytest.raises(ValueError, match="outside"):
        check_dataset(pd.DataFrame({"a": ["x", "y"]}), levels={"a": ["x", "z"]})


def test_array_input():
    d = check_dataset(np.array([[0, 2], [1, 0]]))
    assert d.names == ("X0", "X1") and d.variable("X1").levels == ("0", "1", "2")
    assert check_dataset(np.array([[0.0, 1.0]])).variable("X0").n_levels == 2
    for bad in (np.array([0, 1]), np.array([[0.5, 1]]), np.array([[-1, 0]])):
        with pytest.raises(ValueError):
            check_dataset(bad)
