"""Plain-text grid-function and atom files.

A file starts with optional ``#`` comment lines, then a header
``d=<int> L=<int> storage=dense|sparse``.  Dense data is one line of
``2**(d*L)`` values in row-major order; sparse data is one ``i1 ... id value``
line per nonzero cell.  Atom files add a comment
``# atom cube=<level:i1,...> lambda=<w> black=<cube>;<cube>;...``.
"""
from __future__ import annotations

import re
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from .atoms import Atom
from .dyadic import CubeId, DyadicError, GridFunction

PathLike = Union[str, Path]

_HEADER = re.compile(r"^d=(\d+)\s+L=(\d+)\s+storage=(dense|sparse)\s*$")


class GridFileError(ValueError):
    """Malformed grid-function file, with ``path:line`` context."""

    def __init__(self, path, line: Optional[int], msg: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {msg}")
        self.path = path
        self.line = line


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def dumps_grid_function(f: GridFunction, comments: Sequence[str] = ()) -> str:
    out = [f"# {c}" for c in comments]
    out.append(f"d={f.dim} L={f.depth} storage={f.storage}")
    if f.storage == "dense":
        out.append(" ".join(format_float(v) for v in f.to_array().ravel()))
    else:
        for idx, v in sorted(f.items()):
            out.append(" ".join(str(i) for i in idx) + " " + format_float(v))
    return "\n".join(out) + "\n"


def write_grid_function(f: GridFunction, path: PathLike, comments: Sequence[str] = ()):
    Path(path).write_text(dumps_grid_function(f, comments), encoding="utf-8")


def _parse_float(tok: str, path, line: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise GridFileError(path, line, f"not a number: {tok!r}") from None


def loads_grid_function(text: str, path: PathLike = "<string>") -> Tuple[GridFunction, List[str]]:
    """Parse file text; returns the function and its comment lines (without ``#``)."""
    comments: List[str] = []
    header = None
    body: List[Tuple[int, str]] = []
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if header is None:
                comments.append(line[1:].strip())
            continue
        if header is None:
            m = _HEADER.match(line)
            if not m:
                raise GridFileError(path, no, "expected header 'd=<int> L=<int> storage=dense|sparse'")
            header = (int(m.group(1)), int(m.group(2)), m.group(3), no)
            continue
        body.append((no, line))
    if header is None:
        raise GridFileError(path, None, "missing header line")
    d, L, storage, hline = header
    if d < 1:
        raise GridFileError(path, hline, "dimension must be >= 1")
    try:
        if storage == "dense":
            if len(body) != 1:
                where = body[1][0] if len(body) > 1 else hline
                raise GridFileError(path, where, "dense data must be exactly one line")
            no, line = body[0]
            toks = line.split()
            n = 1 << (d * L)
            if len(toks) != n:
                raise GridFileError(path, no, f"expected {n} values, found {len(toks)}")
            vals = np.array([_parse_float(t, path, no) for t in toks])
            if not np.all(np.isfinite(vals)):
                raise GridFileError(path, no, "non-finite value")
            return GridFunction(d, L, dense=vals.reshape((1 << L,) * d)), comments
        cells: Dict[Tuple[int, ...], float] = {}
        for no, line in body:
            toks = line.split()
            if len(toks) != d + 1:
                raise GridFileError(path, no, f"expected {d} indices and a value")
            try:
                idx = tuple(int(t) for t in toks[:d])
            except ValueError:
                raise GridFileError(path, no, "indices must be integers") from None
            if any(i < 0 or i >= (1 << L) for i in idx):
                raise GridFileError(path, no, f"index {idx} outside the level-{L} grid")
            if idx in cells:
                raise GridFileError(path, no, f"duplicate cell {idx}")
            v = _parse_float(toks[d], path, no)
            if not np.isfinite(v):
                raise GridFileError(path, no, "non-finite value")
            cells[idx] = v
        return GridFunction(d, L, sparse=cells), comments
    except DyadicError as exc:
        raise GridFileError(path, hline, str(exc)) from None


def read_grid_function(path: PathLike) -> Tuple[GridFunction, List[str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise GridFileError(path, None, f"cannot read: {exc.strerror}") from None
    return loads_grid_function(text, path)


# -- atoms --------------------------------------------------------------------


def parse_cube_list(text: str) -> List[CubeId]:
    """Cubes separated by ``;`` or whitespace; empty text gives no cubes."""
    return [CubeId.parse(tok) for tok in re.split(r"[;\s]+", text.strip()) if tok]


def atom_comment(atom: Atom, lam: float) -> str:
    black = ";".join(str(c) for c in atom.black_cubes)
    return f"atom cube={atom.cube} lambda={format_float(lam)} black={black}"


def write_atom(atom: Atom, lam: float, path: PathLike):
    write_grid_function(atom.f, path, [atom_comment(atom, lam)])


def read_atom(path: PathLike) -> Tuple[Atom, float]:
    f, comments = read_grid_function(path)
    for c in comments:
        if c.startswith("atom "):
            fields = dict(kv.split("=", 1) for kv in c[5:].split() if "=" in kv)
            try:
                cube = CubeId.parse(fields["cube"])
                lam = float(fields.get("lambda", "1"))
                black = parse_cube_list(fields.get("black", ""))
            except (KeyError, ValueError) as exc:
                raise GridFileError(path, None, f"malformed atom comment: {exc}") from None
            if cube.dim != f.dim or cube.level > f.depth:
                raise GridFileError(path, None, f"atom cube {cube} does not fit the grid")
            return Atom.from_function(cube, f, black), lam
    raise GridFileError(path, None, "missing '# atom cube=...' comment")


def write_text(text: str, path: Optional[PathLike], stream: Optional[TextIO] = None):
    """Write to ``path`` if given, else to ``stream``."""
    if path is None:
        import sys
        (stream or sys.stdout).write(text)
    else:
        Path(path).write_text(text, encoding="utf-8", newline="")
