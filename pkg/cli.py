"""
Command-line front end.

    python cli.py solve --n 2 --s 2.42 --output n2.fbdp
    python cli.py sweep --n 1 2 3 --s 0.5 1 2 4 --one-bit --sk --output sweep.csv
    python cli.py simulate --policy n2.fbdp --trials 1000000 --seed 7 --m 4
    python cli.py policy-dump --policy n2.fbdp --stage 2 --coords output

Exit codes: 0 ok, 2 calibration infeasible, 3 partial sweep failure,
4 policy file parse error, 5 bad arguments.
"""

import argparse
import math
import sys
import time
from typing import List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError
from tqdm import tqdm

from baselines import no_feedback_ber, one_bit_optimize, shannon_energy_marker, sk_optimize
from belief import eb_n0_db, llr_update
from channel_sim import EncoderSpec, encoder_amplitudes, mimo_embed, monte_carlo
from config import get_config
from dp_solver import SolverConfig, calibrate_lambda
from errors import CalibrationError, NumericalError, PolicyFileError
from policy_file import SWEEP_FAILED, PolicyFile, read_policy_file, write_policy_file, write_sweep_csv

EXIT_OK = 0
EXIT_CALIBRATION = 2
EXIT_PARTIAL_SWEEP = 3
EXIT_PARSE = 4
EXIT_BAD_ARGS = 5

MAX_DEFAULT_HORIZON = 10


class BadArguments(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; that code means calibration failure here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_BAD_ARGS, f"{self.prog}: error: {message}\n")


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="dotenv file with FBDP_* settings (overrides .env)")
    p.add_argument("--l-max", type=float, help="grid half-width in LLR units (default 40)")
    p.add_argument("--grid-points", type=int, help="odd number of grid nodes (default 2001)")
    p.add_argument("--quad-order", type=int, help="Gauss-Hermite order (default 64)")
    p.add_argument("--expectation", choices=["exact", "gauss_hermite"],
                   help="noise expectation in the Bellman step (default exact)")
    p.add_argument("--v-max", type=float, help="amplitude search bound (default 6(1+√S))")
    p.add_argument("--v-steps", type=int, help="coarse scan steps over [0, v_max] (default 400)")
    p.add_argument("--v-tol", type=float, help="golden-section tolerance on v (default 1e-6)")
    p.add_argument("--lambda-tol", type=float, help="relative energy tolerance for λ bisection (default 1e-3)")
    p.add_argument("--verbose", action="store_true", help="print every λ probe")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fbdp", description="Energy-optimal one-bit signalling with noiseless feedback.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    solve = sub.add_parser("solve", help="calibrate λ and write the optimal policy")
    solve.add_argument("--n", type=int, required=True, help="delay constraint N (channel uses)")
    solve.add_argument("--s", type=float, required=True, help="expected energy budget S")
    solve.add_argument("--output", help="PolicyFile path (default policy_N<n>_S<s>.fbdp)")
    _add_solver_flags(solve)

    sweep = sub.add_parser("sweep", help="BER versus energy for several horizons, CSV out")
    sweep.add_argument("--n", type=int, nargs="+", default=list(range(1, MAX_DEFAULT_HORIZON + 1)),
                       help="horizons (default 1..10)")
    group = sweep.add_mutually_exclusive_group(required=True)
    group.add_argument("--s", type=float, nargs="+", help="energy budgets")
    group.add_argument("--db", type=float, nargs=3, metavar=("START", "STOP", "STEP"),
                       help="Eb/N0 range in dB (N0 = 2), stop inclusive")
    sweep.add_argument("--one-bit", action="store_true", help="fill ber_one_bit (rows with N >= 2)")
    sweep.add_argument("--sk", action="store_true", help="fill ber_sk")
    sweep.add_argument("--trials", type=int, default=0, help="Monte Carlo spot-check trials per row (0 = off)")
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--allow-long-horizon", action="store_true", help="permit N above 10")
    sweep.add_argument("--output", default="sweep.csv", help="CSV path")
    _add_solver_flags(sweep)

    simulate = sub.add_parser("simulate", help="Monte Carlo a stored policy")
    simulate.add_argument("--policy", required=True)
    simulate.add_argument("--trials", type=int, default=100000)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--m", type=int, default=1, help="parallel channels M (all energy on channel 1)")
    simulate.add_argument("--workers", type=int, help="threads over trial blocks")
    simulate.add_argument("--csv", help="append the report as a CSV row")
    simulate.add_argument("--config", help="dotenv file with FBDP_* settings")

    dump = sub.add_parser("policy-dump", help="CSV of one stage of a stored policy")
    dump.add_argument("--policy", required=True)
    dump.add_argument("--stage", type=int, required=True)
    dump.add_argument("--coords", choices=["state", "output"], default="state",
                      help="state: (l, v, x_m1, x_m0); output: stage 2 versus y(1)")
    dump.add_argument("--y-max", type=float, default=6.0, help="|y(1)| range for output coordinates")
    dump.add_argument("--output", help="CSV path (default stdout)")
    return parser


def solver_config(args, N: int, S: float) -> SolverConfig:
    """Defaults < .env / --config file < flags."""
    env = get_config(getattr(args, "config", None))

    def pick(flag, key):
        value = getattr(args, flag, None)
        return env[key] if value is None else value

    return SolverConfig(
        N=N, S=S,
        l_max=pick("l_max", "FBDP_L_MAX"),
        grid_points=pick("grid_points", "FBDP_GRID_POINTS"),
        quad_order=pick("quad_order", "FBDP_QUAD_ORDER"),
        expectation=pick("expectation", "FBDP_EXPECTATION"),
        v_max=pick("v_max", "FBDP_V_MAX"),
        v_steps=pick("v_steps", "FBDP_V_STEPS"),
        v_tol=pick("v_tol", "FBDP_V_TOL"),
        lambda_tol=pick("lambda_tol", "FBDP_LAMBDA_TOL"),
        lambda_lo=env["FBDP_LAMBDA_LO"],
        lambda_hi=env["FBDP_LAMBDA_HI"],
        density_floor=env["FBDP_DENSITY_FLOOR"],
        v_eps=env["FBDP_V_EPS"],
    )


# ---------- Commands ----------
def cmd_solve(args) -> int:
    if args.n < 1 or args.s <= 0:
        raise BadArguments("need --n >= 1 and --s > 0")
    cfg = solver_config(args, args.n, args.s)
    output = args.output or f"policy_N{args.n}_S{args.s:g}.fbdp"
    start = time.time()
    try:
        sol = calibrate_lambda(args.s, cfg, verbose=args.verbose)
    except (CalibrationError, NumericalError) as e:
        print(f"❌ Calibration failed: {e}")
        return EXIT_CALIBRATION
    write_policy_file(output, PolicyFile.from_solution(sol))
    print(f"📊 N={args.n} S={args.s:g} ({eb_n0_db(args.s):.3f} dB)")
    print(f"   lambda = {sol.lam:.10g}")
    print(f"   BER    = {sol.error_probability:.10g} (no feedback {no_feedback_ber(args.s):.10g})")
    print(f"   energy = {sol.achieved_energy:.10g}")
    print(f"✅ Policy written to {output} in {time.time() - start:.2f} s")
    return EXIT_OK


def _sweep_budgets(args) -> List[float]:
    if args.s is not None:
        budgets = args.s
    else:
        start, stop, step = args.db
        if step <= 0 or stop < start:
            raise BadArguments("--db needs START <= STOP and STEP > 0")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        budgets = [2.0 * 10 ** ((start + i * step) / 10.0) for i in range(count)]
    if not budgets or any(S <= 0 for S in budgets):
        raise BadArguments("energy budgets must be positive")
    return sorted(set(budgets))


def cmd_sweep(args) -> int:
    horizons = sorted(set(args.n))
    if not horizons or min(horizons) < 1:
        raise BadArguments("horizons must be >= 1")
    if max(horizons) > MAX_DEFAULT_HORIZON and not args.allow_long_horizon:
        raise BadArguments(f"N above {MAX_DEFAULT_HORIZON} needs --allow-long-horizon")
    budgets = _sweep_budgets(args)

    rows, failures = [], 0
    print(f"🔄 Sweeping N={horizons} over {len(budgets)} budgets (Shannon marker S={shannon_energy_marker():.4f})")
    for N, S in tqdm([(N, S) for N in horizons for S in budgets], desc="sweep"):
        row = {"S": S, "N": N, "ber_no_feedback": no_feedback_ber(S), "eb_n0_db": eb_n0_db(S),
               "ber_one_bit": None, "ber_sk": None}
        if args.one_bit and N >= 2:
            row["ber_one_bit"] = one_bit_optimize(S)[1]
        if args.sk:
            row["ber_sk"] = sk_optimize(N, S)[1]
        try:
            sol = calibrate_lambda(S, solver_config(args, N, S), verbose=args.verbose)
            row.update({"lambda": sol.lam, "ber_dp": sol.error_probability, "energy_achieved": sol.achieved_energy})
            if args.trials > 0:
                mc = monte_carlo(EncoderSpec(sol.policy), args.trials, args.seed)
                print(f"📊 MC check N={N} S={S:g}: BER {mc.ber_hat:.6g} ± {mc.ber_se:.2g} "
                      f"(DP {sol.error_probability:.6g}), energy {mc.mean_energy:.6g}")
        except (CalibrationError, NumericalError) as e:
            failures += 1
            print(f"❌ N={N} S={S:g}: {e}")
            row.update({"lambda": None, "ber_dp": SWEEP_FAILED, "energy_achieved": None})
        rows.append(row)

    write_sweep_csv(args.output, rows)
    if failures:
        print(f"⚠️ {failures} of {len(rows)} rows failed; CSV written to {args.output}")
        return EXIT_PARTIAL_SWEEP
    print(f"✅ {len(rows)} rows written to {args.output}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.trials < 1 or args.m < 1:
        raise BadArguments("need --trials >= 1 and --m >= 1")
    env = get_config(args.config)
    try:
        pf = read_policy_file(args.policy)
    except PolicyFileError as e:
        print(f"❌ {args.policy}: {e}")
        return EXIT_PARSE
    mimo = mimo_embed(EncoderSpec(pf.policy), args.m)
    report = monte_carlo(mimo, args.trials, args.seed,
                         workers=args.workers or env["FBDP_WORKERS"], block_size=env["FBDP_MC_BLOCK"])
    lo, hi = report.ber_ci95
    print(f"📊 Monte Carlo: N={pf.policy.N} M={args.m} trials={report.trials} seed={report.seed}")
    print(f"   BER    = {report.ber_hat:.6g}  95% CI [{lo:.6g}, {hi:.6g}]  (DP {pf.header['ber']:.6g})")
    print(f"   energy = {report.mean_energy:.6g} ± {report.energy_se:.2g}  (DP {pf.header['energy']:.6g}, S {pf.header['S']:g})")
    print(f"   per-trial energy median {report.energy_median:.4g}, p95 {report.energy_p95:.4g}, max {report.energy_max:.4g}")
    if args.csv:
        row = report.model_dump()
        row["ber_ci95_lo"], row["ber_ci95_hi"] = row.pop("ber_ci95")
        row["energy_ci95_lo"], row["energy_ci95_hi"] = row.pop("energy_ci95")
        row.update({"policy": args.policy, "ber_dp": pf.header["ber"], "energy_dp": pf.header["energy"]})
        df = pd.DataFrame([row])
        try:
            with open(args.csv, "x", encoding="utf-8", newline="") as fh:
                df.to_csv(fh, index=False)
        except FileExistsError:
            df.to_csv(args.csv, mode="a", header=False, index=False)
    return EXIT_OK


def policy_dump_frame(pf: PolicyFile, stage: int, coords: str = "state", y_max: float = 6.0) -> pd.DataFrame:
    policy = pf.policy
    if not 1 <= stage <= policy.N:
        raise BadArguments(f"stage {stage} outside 1..{policy.N}")
    nodes = policy.grid.nodes

    if coords == "state":
        if stage == 1:
            # only the initial state l_1 = 0 is ever visited
            l = np.array([0.0])
            v = np.array([policy.stage(1)[policy.grid.center]])
        else:
            l, v = nodes, policy.stage(stage)
        x1, x0 = encoder_amplitudes(l, v)
        return pd.DataFrame({"l": l, "v": v, "x_m1": x1, "x_m0": x0})

    if stage != 2:
        raise BadArguments("output coordinates exist for stage 2 only")
    v1 = float(policy.stage(1)[policy.grid.center])
    if v1 <= 0:
        raise BadArguments("stage-1 amplitude is zero; y(1) carries no information")
    u1, u0 = encoder_amplitudes(0.0, v1)
    # with antipodal stage 1, l_2 = v1·y(1): sample y(1) where l_2 lands on grid nodes
    y1 = nodes / v1
    y1 = y1[np.abs(y1) <= y_max]
    l2 = np.array([llr_update(0.0, u1, u0, y) for y in y1])
    v2 = np.asarray(policy.lookup(2, l2))
    x1, x0 = encoder_amplitudes(l2, v2)
    return pd.DataFrame({"y1": y1, "x2_m1": x1, "x2_m0": x0})


def cmd_policy_dump(args) -> int:
    try:
        pf = read_policy_file(args.policy)
    except PolicyFileError as e:
        print(f"❌ {args.policy}: {e}")
        return EXIT_PARSE
    df = policy_dump_frame(pf, args.stage, args.coords, args.y_max)
    if args.output:
        df.to_csv(args.output, index=False, float_format="%.10g")
        print(f"✅ {len(df)} rows written to {args.output}")
    else:
        df.to_csv(sys.stdout, index=False, float_format="%.10g")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "policy-dump": cmd_policy_dump,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (BadArguments, ValidationError, FileNotFoundError) as e:
        print(f"❌ Bad arguments: {e}")
        return EXIT_BAD_ARGS


if __name__ == "__main__":
    sys.exit(main())
