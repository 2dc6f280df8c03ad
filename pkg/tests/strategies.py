"""Hypothesis strategies for small grid functions."""
import numpy as np
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dyadic_h1 import GridFunction

SHAPES = [(1, 1), (1, 2), (1, 3), (1, 4), (2, 1), (2, 2), (2, 3), (3, 1), (3, 2)]

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False, width=64)


@st.composite
def grid_arrays(draw, shapes=SHAPES, mean_zero=False):
    d, L = draw(st.sampled_from(shapes))
    arr = draw(hnp.arrays(np.float64, (1 << L,) * d, elements=finite))
    if mean_zero:
        arr = arr - arr.mean()
        if abs(arr.sum()) > 1e-12 * np.abs(arr).sum():
            # nearly constant input: the residue is rounding noise of one sign
            arr = np.zeros_like(arr)
    return arr


@st.composite
def grid_functions(draw, shapes=SHAPES, mean_zero=False, storage=None):
    arr = draw(grid_arrays(shapes, mean_zero))
    storage = storage or draw(st.sampled_from(["dense", "sparse"]))
    return GridFunction.from_array(arr, storage=storage)
