"""
Builds plot-ready pandas tables: exponent summaries, profile and barrier cuts along
axes and diagonals, region scans and trajectory histories.
"""

import math
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Union

import numpy as np
import pandas as pd

from core.exponents import (
    ExponentLike,
    RegionClass,
    _as_exponents,
    check_conditions,
    cianchi_lambda,
    dnl_exponents,
    selfsim_exponents,
    DnlParameters,
)
from core.grid import integrate, lq_norm
from core.logger.logger import setup_logger
from core.solver import Trajectory

logger = setup_logger(__name__)

PROFILE_COLUMNS = ["curve", "s"]
REGION_COLUMNS = ["p1", "p2", "H1", "H2", "H3", "hyperbola_margin", "label"]
HISTORY_COLUMNS = ["time", "mass", "l1", "l2", "linf"]
DIAGNOSTIC_COLUMNS = ["time", "step", "energy", "reg_energy", "iterations", "residual", "clipped", "increment"]


def exponent_table(exp: ExponentLike, m: Sequence[float] = None) -> pd.DataFrame:
    """
    Rows (quantity, value) with pbar, p_c, alpha, sigma_i, a_i, beta_i, mu, Lambda and the
    condition flags; the doubly nonlinear rows are added when m is given.
    """
    exp = _as_exponents(exp)
    logger.debug(f"Building exponent table for p={exp.p}")
    report = check_conditions(exp)
    rows = [("N", exp.N), ("pbar", report.diagnostics["pbar"])]
    try:
        ss = selfsim_exponents(exp)
        rows += [("p_c", ss.pc), ("alpha", ss.alpha), ("mu", ss.mu)]
        rows += [(f"sigma_{i + 1}", s) for i, s in enumerate(ss.sigma)]
        rows += [(f"a_{i + 1}", a) for i, a in enumerate(ss.a)]
        rows += [(f"beta_{i + 1}", b) for i, b in enumerate(ss.beta)]
    except ValueError as e:
        rows.append(("alpha", f"undefined ({e})"))
    try:
        rows.append(("Lambda", cianchi_lambda(exp)))
    except ValueError as e:
        rows.append(("Lambda", f"undefined ({e})"))
    rows += [("H1", report.H1), ("H2", report.H2), ("H3", report.H3),
             ("H2_margin", report.diagnostics["H2_margin"])]
    if m is not None:
        dnl = dnl_exponents(DnlParameters(p=exp.p, m=tuple(m)))
        rows += [("dnl_alpha", dnl.alpha), ("DN2", dnl.DN2)]
        rows += [(f"DN3_{i + 1}", flag) for i, flag in enumerate(dnl.DN3)]
        if dnl.sigma is not None:
            rows += [(f"dnl_sigma_{i + 1}", s) for i, s in enumerate(dnl.sigma)]
    return pd.DataFrame(rows, columns=["quantity", "value"])


def profile_table(fn: Callable[[np.ndarray], np.ndarray], N: int, extent: float, samples: int,
                  skip_origin: bool = False) -> pd.DataFrame:
    """
    Samples fn along every coordinate axis and along the main diagonal, s in [-extent, extent].
    Columns: curve, s, y_1..y_N, value.
    """
    s = np.linspace(-extent, extent, samples)
    if skip_origin:
        s = s[s != 0.0]
    frames = []
    directions: Dict[str, np.ndarray] = {f"axis_{i + 1}": np.eye(N)[i] for i in range(N)}
    if N > 1:
        directions["diagonal"] = np.ones(N) / math.sqrt(N)
    for name, direction in directions.items():
        pts = np.outer(s, direction)
        frame = pd.DataFrame(pts, columns=[f"y_{i + 1}" for i in range(N)])
        frame.insert(0, "s", s)
        frame.insert(0, "curve", name)
        frame["value"] = np.asarray(fn(pts), dtype=float)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def region_table(scan: List[RegionClass]) -> pd.DataFrame:
    return pd.DataFrame([r.model_dump() for r in scan], columns=REGION_COLUMNS)


def history_table(traj: Trajectory) -> pd.DataFrame:
    """Mass and L^q norms at every recorded time."""
    rows = [(t, integrate(f), lq_norm(f, 1), lq_norm(f, 2), lq_norm(f, math.inf))
            for t, f in zip(traj.times, traj.fields)]
    return pd.DataFrame(rows, columns=HISTORY_COLUMNS)


def diagnostics_table(traj: Trajectory) -> pd.DataFrame:
    return pd.DataFrame([d.model_dump() for d in traj.diagnostics], columns=DIAGNOSTIC_COLUMNS)


def write_table(df: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    logger.debug(f"Wrote {len(df)} rows to {path}")
    return path
