"""Reader for the section-based problem file format.

Example::

    [problem]  states=2 controls=1 t0=0 tex=0
    [dynamics] x1' = x2
               x2' = u1 - 1.5
    [objective] lagrange = u1
    [bounds]   x1 in [0,20]; x2 in [-20,20]; u1 in [0,3]; tf in [0.001,400] free
    [boundary] x(0) = 10,-2 tol 0,0 ; x(tf) = 0,0 tol 0,0
    [slack]    x0 = off ; xf = off
    [path]     1 - x1^2 <= 0

Statements are separated by newlines or ``;`` and ``#`` starts a comment.
Numeric fields accept ``free``, ``inf``, ``pi`` and constant arithmetic.
Optional extra sections: ``[guess]`` (``tf = 5 ; xf = 20,100,pi/2,25``)
and ``[names]`` (``states = x,y ; controls = a``).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from . import expr as ex
from .ocp import FREE, ModelError, OcpModel, define

SECTIONS = ("problem", "dynamics", "objective", "bounds", "boundary", "slack", "path", "guess", "names")


class ProblemFileError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class _Stmt:
    text: str
    line: int


_HEADER = re.compile(r"^\s*\[(\w+)\]\s*(.*)$")
_PI = re.compile(r"\bpi\b")


def _number(text: str, line: int, allow_free: bool = True):
    t = text.strip()
    low = t.lower()
    if low == "free":
        if not allow_free:
            raise ProblemFileError("'free' is not allowed here", line)
        return FREE
    if low in ("inf", "+inf"):
        return math.inf
    if low == "-inf":
        return -math.inf
    try:
        e = ex.parse(_PI.sub(repr(math.pi), t), 0, 0)
        return float(ex.evaluate(e, {}))
    except (ex.ExprError, ArithmeticError, KeyError, ValueError) as err:
        raise ProblemFileError(f"bad number {t!r}: {err}", line) from None


def _numbers(text: str, line: int, n: int | None = None, allow_free: bool = True) -> list:
    parts = [p for p in text.split(",")]
    if any(not p.strip() for p in parts):
        raise ProblemFileError(f"empty entry in list {text.strip()!r}", line)
    values = [_number(p, line, allow_free) for p in parts]
    if n is not None and len(values) != n:
        raise ProblemFileError(f"expected {n} values, got {len(values)}", line)
    return values


def _split(text: str):
    """Section name -> statements, keeping source line numbers."""
    sections: dict[str, list] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        m = _HEADER.match(line)
        if m:
            current = m.group(1).lower()
            if current not in SECTIONS:
                raise ProblemFileError(f"unknown section [{current}]", lineno)
            if current in sections:
                raise ProblemFileError(f"duplicate section [{current}]", lineno)
            sections[current] = []
            line = m.group(2)
        elif current is None:
            raise ProblemFileError("text before the first section header", lineno)
        for piece in line.split(";"):
            if piece.strip():
                sections[current].append(_Stmt(piece.strip(), lineno))
    return sections


def _problem_header(stmts) -> dict:
    out = {}
    for st in stmts:
        pairs = re.findall(r"(\w+)\s*=\s*([^\s=]+)", st.text)
        rest = re.sub(r"(\w+)\s*=\s*([^\s=]+)", "", st.text).strip()
        if rest:
            raise ProblemFileError(f"cannot read {rest!r} in [problem]", st.line)
        for key, value in pairs:
            key = key.lower()
            if key not in ("states", "controls", "t0", "tex"):
                raise ProblemFileError(f"unknown [problem] key {key!r}", st.line)
            out[key] = (value, st.line)
    return out


def _count(header, key, line_default):
    if key not in header:
        raise ProblemFileError(f"[problem] needs {key}=", line_default)
    value, line = header[key]
    if not re.fullmatch(r"\d+", value):
        raise ProblemFileError(f"{key} must be a nonnegative integer", line)
    return int(value)


def parse_problem(text: str) -> OcpModel:
    """Build an (unfrozen) model from problem file text."""
    sections = _split(text)
    if "problem" not in sections:
        raise ProblemFileError("missing [problem] section", 1)
    header = _problem_header(sections["problem"])
    first = sections["problem"][0].line if sections["problem"] else 1
    n_st = _count(header, "states", first)
    n_ctr = _count(header, "controls", first)
    if n_st < 1:
        raise ProblemFileError("a problem needs at least one state", first)

    x_min, x_max = [FREE] * n_st, [FREE] * n_st
    u_min, u_max = [FREE] * n_ctr, [FREE] * n_ctr
    tf_fixed = None
    tf_range = None
    tf_free = False
    tf_line = None
    for st in sections.get("bounds", []):
        m = re.fullmatch(r"(x|u)(\d+)\s+in\s+\[(.*)\]", st.text)
        if m:
            kind, idx = m.group(1), int(m.group(2))
            lo, hi = _numbers(m.group(3), st.line, 2)
            n = n_st if kind == "x" else n_ctr
            if not 1 <= idx <= n:
                raise ProblemFileError(f"{kind}{idx} is out of range 1..{n}", st.line)
            if lo is not FREE and hi is not FREE and lo > hi:
                raise ProblemFileError(f"{kind}{idx} lower bound exceeds upper bound", st.line)
            lo_arr, hi_arr = (x_min, x_max) if kind == "x" else (u_min, u_max)
            lo_arr[idx - 1], hi_arr[idx - 1] = lo, hi
            continue
        m = re.fullmatch(r"tf\s+in\s+\[(.*)\]\s*(free)?", st.text)
        if m:
            tf_range = _numbers(m.group(1), st.line, 2, allow_free=False)
            tf_free = m.group(2) is not None
            tf_line = st.line
            continue
        m = re.fullmatch(r"tf\s*=\s*(.+)", st.text)
        if m:
            tf_fixed = _number(m.group(1), st.line, allow_free=False)
            tf_line = st.line
            continue
        raise ProblemFileError(f"cannot read bound {st.text!r}", st.line)

    x0, xf = [FREE] * n_st, [FREE] * n_st
    x0_tol, xf_tol = None, None
    for st in sections.get("boundary", []):
        m = re.fullmatch(r"x\((0|tf)\)\s*=\s*(.+?)(?:\s+tol\s+(.+))?", st.text)
        if not m:
            raise ProblemFileError(f"cannot read boundary condition {st.text!r}", st.line)
        values = _numbers(m.group(2), st.line, n_st)
        tol = _numbers(m.group(3), st.line, n_st, allow_free=False) if m.group(3) else None
        if m.group(1) == "0":
            x0, x0_tol = values, tol
        else:
            xf, xf_tol = values, tol

    try:
        model = define(n_st, n_ctr, x0=x0, xf=xf, x_min=x_min, x_max=x_max, u_min=u_min, u_max=u_max)
    except ModelError as err:
        raise ProblemFileError(str(err), first) from None

    def expression(text, line):
        try:
            return ex.parse(text, n_st, n_ctr)
        except ex.ExprError as err:
            raise ProblemFileError(f"{err}", line) from None

    def apply(fn, line):
        try:
            fn()
        except ModelError as err:
            raise ProblemFileError(str(err), line) from None

    dyn = [None] * n_st
    dyn_line = sections["dynamics"][0].line if sections.get("dynamics") else first
    for st in sections.get("dynamics", []):
        m = re.fullmatch(r"x(\d+)'\s*=\s*(.+)", st.text)
        if not m:
            raise ProblemFileError(f"expected x<i>' = <expr>, got {st.text!r}", st.line)
        i = int(m.group(1))
        if not 1 <= i <= n_st:
            raise ProblemFileError(f"x{i}' is out of range 1..{n_st}", st.line)
        if dyn[i - 1] is not None:
            raise ProblemFileError(f"x{i}' is defined twice", st.line)
        dyn[i - 1] = expression(m.group(2), st.line)
    if any(d is None for d in dyn):
        missing = ", ".join(f"x{i + 1}'" for i, d in enumerate(dyn) if d is None)
        raise ProblemFileError(f"The number of differential equations must equal the number of states "
                               f"(missing {missing})", dyn_line)
    model.set_dynamics(dyn)

    for st in sections.get("objective", []):
        m = re.fullmatch(r"(lagrange|mayer)\s*=\s*(.+)", st.text)
        if not m:
            raise ProblemFileError(f"expected lagrange = <expr> or mayer = <expr>, got {st.text!r}", st.line)
        e = expression(m.group(2), st.line)
        if m.group(1) == "lagrange":
            apply(lambda: model.add_lagrange(e), st.line)
        else:
            apply(lambda: model.set_mayer(e), st.line)

    for st in sections.get("path", []):
        m = re.fullmatch(r"(.+?)\s*(<=|>=)\s*([^<>=]+)", st.text)
        if not m:
            raise ProblemFileError(f"expected <expr> <= <value>, got {st.text!r}", st.line)
        e = expression(m.group(1), st.line)
        bound = _number(m.group(3), st.line, allow_free=False)
        if m.group(2) == "<=":
            apply(lambda: model.add_path_constraint(e, upper=bound), st.line)
        else:
            apply(lambda: model.add_path_constraint(e, lower=bound, upper=math.inf), st.line)

    if x0_tol is not None or xf_tol is not None:
        apply(lambda: model.set_tolerances(x0_tol=x0_tol, xf_tol=xf_tol), first)

    slack = {}
    for st in sections.get("slack", []):
        m = re.fullmatch(r"(x0|xf)\s*=\s*(on|off)(?:\s+w\s+(.+))?", st.text)
        if not m:
            raise ProblemFileError(f"expected x0|xf = on|off [w <weights>], got {st.text!r}", st.line)
        w = _numbers(m.group(3), st.line, n_st, allow_free=False) if m.group(3) else None
        slack[m.group(1)] = (m.group(2) == "on", w, st.line)
    if slack:
        on0, w0, _ = slack.get("x0", (False, None, None))
        onf, wf, line = slack.get("xf", (False, None, None))
        apply(lambda: model.enable_slack(on0, onf, w_s0=w0, w_sf=wf), line or first)

    t0 = _number(header["t0"][0], header["t0"][1], allow_free=False) if "t0" in header else None
    tex = _number(header["tex"][0], header["tex"][1], allow_free=False) if "tex" in header else None
    if tf_fixed is not None and tf_free:
        raise ProblemFileError("tf is both fixed and free", tf_line)
    if tf_fixed is not None:
        apply(lambda: model.configure(tf=tf_fixed, t0=t0, t_ex=tex), tf_line)
    elif tf_range is not None:
        lo, hi = tf_range
        if tf_free:
            apply(lambda: model.configure(final_time_is_dv=True, tf_min=lo, tf_max=hi, t0=t0, t_ex=tex), tf_line)
        elif lo == hi:
            apply(lambda: model.configure(tf=lo, t0=t0, t_ex=tex), tf_line)
        else:
            raise ProblemFileError("a tf range needs the 'free' flag (or use tf = <value>)", tf_line)
    else:
        raise ProblemFileError("[bounds] must give the final time (tf = value or tf in [a,b] free)", first)

    for st in sections.get("guess", []):
        m = re.fullmatch(r"(tf|xf)\s*=\s*(.+)", st.text)
        if not m:
            raise ProblemFileError(f"cannot read guess {st.text!r}", st.line)
        if m.group(1) == "tf":
            model.set_guess(tf=_number(m.group(2), st.line, allow_free=False))
        else:
            model.set_guess(xf=_numbers(m.group(2), st.line, n_st))

    for st in sections.get("names", []):
        m = re.fullmatch(r"(states|controls)\s*=\s*(.+)", st.text)
        if not m:
            raise ProblemFileError(f"cannot read names {st.text!r}", st.line)
        names = [s.strip() for s in m.group(2).split(",")]
        want = n_st if m.group(1) == "states" else n_ctr
        if len(names) != want or not all(names):
            raise ProblemFileError(f"expected {want} {m.group(1)} names", st.line)
        if m.group(1) == "states":
            model.state_names = names
        else:
            model.control_names = names

    try:
        model.validate()
    except ModelError as err:
        raise ProblemFileError(str(err), first) from None
    return model


def load_problem(path) -> OcpModel:
    with open(path, encoding="utf-8") as fh:
        return parse_problem(fh.read())
