"""Image arrays and the dihedral group acting on them.

Images are numpy arrays of shape ``(channels, height, width)`` stored as
float64, channel-major and row-major. Public functions never mutate their
inputs.
"""

from enum import Enum

import numpy as np

from .errors import ConfigError, ShapeError


def as_image(data, copy=False):
    """Coerce ``data`` to a float64 ``(C, H, W)`` array.

    2-D input is treated as a single channel. Raises :class:`ShapeError` on
    other ranks and :class:`ValueError` on non-finite entries.
    """
    arr = np.array(data, dtype=np.float64, copy=copy) if copy else np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeError(f"expected a (C, H, W) or (H, W) image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


def check_same_shape(a, b, what="images"):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"{what} have mismatched shapes {np.shape(a)} and {np.shape(b)}")


class GroupElement(Enum):
    IDENTITY = "identity"
    HFLIP = "horizontal-flip"
    VFLIP = "vertical-flip"
    ROT90 = "rotate-90"
    ROT180 = "rotate-180"
    ROT270 = "rotate-270"
    TRANSPOSE = "transpose"
    ANTI_TRANSPOSE = "anti-transpose"

    @property
    def inverse(self):
        return _INVERSE[self]

    @property
    def needs_square(self):
        return self in (GroupElement.ROT90, GroupElement.ROT270,
                        GroupElement.TRANSPOSE, GroupElement.ANTI_TRANSPOSE)


_INVERSE = {g: g for g in GroupElement}
_INVERSE[GroupElement.ROT90] = GroupElement.ROT270
_INVERSE[GroupElement.ROT270] = GroupElement.ROT90

#: The eight symmetries of the square, in a fixed order (sampling depends on it).
D4 = tuple(GroupElement)


def parse_group(names):
    """Group from a list of element names, or the string ``"d4"``."""
    if isinstance(names, str):
        if names.lower() == "d4":
            return D4
        names = [names]
    names = list(names)
    if len(names) == 1 and isinstance(names[0], str) and names[0].lower() == "d4":
        return D4
    try:
        group = tuple(GroupElement(n) for n in names)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not group:
        raise ConfigError("group must contain at least one element")
    return group


def _forward(x, g):
    if g is GroupElement.IDENTITY:
        return x
    if g is GroupElement.HFLIP:
        return x[..., ::-1]
    if g is GroupElement.VFLIP:
        return x[..., ::-1, :]
    if g is GroupElement.ROT90:
        return np.rot90(x, 1, axes=(-2, -1))
    if g is GroupElement.ROT180:
        return x[..., ::-1, ::-1]
    if g is GroupElement.ROT270:
        return np.rot90(x, -1, axes=(-2, -1))
    if g is GroupElement.TRANSPOSE:
        return np.swapaxes(x, -1, -2)
    # reflection about the anti-diagonal
    return np.swapaxes(x[..., ::-1, ::-1], -1, -2)


def transform(image, g, direction="forward"):
    """Apply ``T_g`` (or its inverse) to the two trailing pixel axes."""
    x = np.asarray(image)
    if x.ndim < 2:
        raise ShapeError("transform needs at least two axes")
    if g.needs_square and x.shape[-1] != x.shape[-2]:
        raise ShapeError(f"{g.value} requires a square image, got {x.shape[-2]}x{x.shape[-1]}")
    if direction == "inverse":
        g = g.inverse
    elif direction != "forward":
        raise ValueError(f"unknown direction {direction!r}")
    return np.ascontiguousarray(_forward(x, g))


def sample_group(rng, group=D4):
    """Draw one element uniformly from ``group`` (advances ``rng``)."""
    group = tuple(group)
    if not group:
        raise ConfigError("cannot sample from an empty group")
    if len(group) == 1:
        rng.raw(1)
        return group[0]
    return group[int(rng.integers(len(group)))]
