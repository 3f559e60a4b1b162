import os
from typing import Dict, Optional

from dotenv import dotenv_values, load_dotenv

load_dotenv() # Load from .env file

# Built-in defaults, overridden by .env / --config file, then by CLI flags
DEFAULTS = {
"FBDP_L_MAX": 40.0,
"FBDP_GRID_POINTS": 2001,
"FBDP_QUAD_ORDER": 64,
"FBDP_EXPECTATION": "exact",
"FBDP_V_STEPS": 400,
"FBDP_V_TOL": 1e-6,
"FBDP_V_MAX": None,
"FBDP_LAMBDA_TOL": 1e-3,
"FBDP_LAMBDA_LO": 1e-6,
"FBDP_LAMBDA_HI": 1e3,
"FBDP_DENSITY_FLOOR": 1e-300,
"FBDP_V_EPS": 1e-9,
"FBDP_MC_BLOCK": 65536,
"FBDP_WORKERS": 1,
}

_INT_KEYS = {"FBDP_GRID_POINTS", "FBDP_QUAD_ORDER", "FBDP_V_STEPS", "FBDP_MC_BLOCK", "FBDP_WORKERS"}
_STR_KEYS = {"FBDP_EXPECTATION"}


def get_config(path: Optional[str] = None) -> Dict[str, object]:
    """Resolve settings from defaults and the environment (.env or an explicit file).

    An explicit file is read on its own and layered over the environment for
    this call only; os.environ is left untouched.
    """
    file_values: Dict[str, Optional[str]] = {}
    if path:
        if not os.path.exists(path):
            raise FileNotFoundError(f"config file not found: {path}")
        file_values = dotenv_values(path)

    config = {}
    for key, default in DEFAULTS.items():
        raw = file_values.get(key) if key in file_values else os.getenv(key)
        if raw is None or raw.strip() == "":
            config[key] = default
        elif key in _INT_KEYS:
            config[key] = int(raw)
        elif key in _STR_KEYS:
            config[key] = raw.strip()
        else:
            config[key] = float(raw)
    return config


config = get_config()
