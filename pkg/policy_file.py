"""
Text formats: the versioned PolicyFile and the sweep CSV.

PolicyFile layout
    FBDP v1
    key=value            (header, one per line)
    k=1
    l,v                  (one line per grid node, 17 significant digits)
    k=2
    ...
"""

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import pandas as pd

from dp_solver import CalibratedSolution, Grid, PolicyTable
from errors import PolicyFileError

VERSION_TAG = "FBDP v1"
HEADER_KEYS = ["N", "S", "lambda", "l_min", "l_max", "points", "quad_order", "v_max",
               "v_steps", "v_tol", "lambda_tol", "density_floor", "ber", "energy"]
_INT_HEADER = {"N", "points", "quad_order", "v_steps"}

# v1 sweep schema; never reorder
SWEEP_COLUMNS = ["S", "N", "lambda", "ber_dp", "ber_no_feedback", "ber_one_bit", "ber_sk",
                 "energy_achieved", "eb_n0_db"]
SWEEP_FAILED = "FAILED"


def fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class PolicyFile:
    policy: PolicyTable
    header: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_solution(cls, sol: CalibratedSolution) -> "PolicyFile":
        cfg = sol.config
        grid = sol.policy.grid
        header = {
            "N": cfg.N, "S": cfg.S, "lambda": sol.lam,
            "l_min": grid.l_min, "l_max": grid.l_max, "points": grid.points,
            "quad_order": cfg.quad_order, "v_max": cfg.v_search_max, "v_steps": cfg.v_steps,
            "v_tol": cfg.v_tol, "lambda_tol": cfg.lambda_tol, "density_floor": cfg.density_floor,
            "ber": sol.error_probability, "energy": sol.achieved_energy,
        }
        return cls(policy=sol.policy, header=header)


def dumps_policy_file(pf: PolicyFile) -> str:
    lines = [VERSION_TAG]
    for key in HEADER_KEYS:
        value = pf.header[key]
        lines.append(f"{key}={int(value)}" if key in _INT_HEADER else f"{key}={fmt(value)}")
    nodes = pf.policy.grid.nodes
    for k in range(1, pf.policy.N + 1):
        lines.append(f"k={k}")
        lines.extend(f"{fmt(l)},{fmt(v)}" for l, v in zip(nodes, pf.policy.stage(k)))
    return "\n".join(lines) + "\n"


def write_policy_file(path: str, pf: PolicyFile) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_policy_file(pf))


def loads_policy_file(text: str) -> PolicyFile:
    lines = text.splitlines()
    if not lines or lines[0].strip() != VERSION_TAG:
        raise PolicyFileError(f"expected version tag '{VERSION_TAG}'", 1)

    header: Dict[str, float] = {}
    key_lines: Dict[str, int] = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("k="):
        raw = lines[i].strip()
        i += 1
        if not raw:
            continue
        key, sep, value = raw.partition("=")
        if not sep or key not in HEADER_KEYS:
            raise PolicyFileError(f"unexpected header entry '{raw}'", i)
        try:
            header[key] = int(value) if key in _INT_HEADER else float(value)
            key_lines[key] = i
        except ValueError:
            raise PolicyFileError(f"bad value for {key}: '{value}'", i)
    missing = [k for k in HEADER_KEYS if k not in header]
    if missing:
        raise PolicyFileError(f"header missing {', '.join(missing)}", i)
    if header["N"] < 1:
        raise PolicyFileError(f"N must be >= 1, got {header['N']}", key_lines["N"])

    try:
        grid = Grid(l_min=header["l_min"], l_max=header["l_max"], points=header["points"],
                    spacing=header["l_max"] / ((header["points"] - 1) // 2))
    except ValueError as e:
        raise PolicyFileError(f"invalid grid in header: {e}", i)
    N, points = header["N"], grid.points
    nodes = grid.nodes
    amplitudes = np.zeros((N, points))

    for k in range(1, N + 1):
        if i >= len(lines) or lines[i].strip() != f"k={k}":
            raise PolicyFileError(f"expected stage marker 'k={k}'", i + 1)
        i += 1
        for j in range(points):
            if i >= len(lines):
                raise PolicyFileError(f"stage {k} has {j} rows, header says {points}", i)
            parts = lines[i].split(",")
            i += 1
            if len(parts) != 2:
                raise PolicyFileError(f"expected 'l,v', got '{lines[i - 1]}'", i)
            try:
                l, v = float(parts[0]), float(parts[1])
            except ValueError:
                raise PolicyFileError(f"non-numeric row '{lines[i - 1]}'", i)
            if abs(l - nodes[j]) > 1e-9 * grid.l_max:
                raise PolicyFileError(f"row l={l} does not match grid node {nodes[j]}", i)
            if v < 0:
                raise PolicyFileError(f"negative amplitude {v}", i)
            amplitudes[k - 1, j] = v
    if any(line.strip() for line in lines[i:]):
        raise PolicyFileError("trailing data after last stage", i + 1)
    return PolicyFile(policy=PolicyTable(N=N, grid=grid, amplitudes=amplitudes), header=header)


def read_policy_file(path: str) -> PolicyFile:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise PolicyFileError(f"cannot read {path}: {e}")
    return loads_policy_file(text)


# ---------- Sweep CSV ----------
def sweep_frame(rows: List[dict]) -> pd.DataFrame:
    df = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    return df.sort_values(by=["N", "S"], kind="mergesort").reset_index(drop=True)


def write_sweep_csv(path: str, rows: List[dict]) -> pd.DataFrame:
    df = sweep_frame(rows)
    df.to_csv(path, index=False, float_format="%.10g")
    return df
