"""Command-line front end: ``lisest {simulate,stability,steady,markov-verify}``.

Settings resolve in this order, later winning: built-in defaults, keys of a
``--generate`` spec (``M=``, ``horizon=``), the JSON ``--config`` file, then
explicit flags.  Every run writes ``metadata.json`` with the resolved
settings into ``--out``.

Exit codes: 0 success or verdict yes, 1 usage/config error, 2 verdict no,
3 inconclusive.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .estimator import SteadyState, local_gains, run_dmre, steady_state_solve
from .io import load_checkpoint, load_model, save_checkpoint, save_json
from .markov import build_markov_equivalent, closed_loop_blocks, lis_step, mean_recursion_step
from .model import (
    LisModel,
    ModelError,
    PowerSystemConfig,
    decoupling_variables,
    generate_power_system,
    random_model,
    scalar_model,
)
from .sim import (
    EstimatorConfig,
    NoiseSpec,
    SimulationError,
    constant_schedule,
    monte_carlo_rmse,
    write_metadata,
    write_rmse_csv,
)
from .stability import (
    INCONCLUSIVE,
    NO,
    YES,
    boundedness_check,
    centralized_lmi_feasibility,
    distributed_lmi_check,
    verify_conditions,
)

EXIT_OK, EXIT_CONFIG, EXIT_NO, EXIT_INCONCLUSIVE = 0, 1, 2, 3
VERDICT_EXIT = {YES: EXIT_OK, NO: EXIT_NO, INCONCLUSIVE: EXIT_INCONCLUSIVE}

DEFAULTS = {
    "seed": 0,
    "out": "lisest-out",
    "policy": "out",
    "tol": 1e-12,
    "threads": 1,
    "noise": "uniform",
    "estimators": "distributed,centralized",
    "P0": 1.0,
    "max_iter": 10_000,
}
COMMAND_DEFAULTS = {
    "simulate": {"horizon": 500, "trials": 500},
    "stability": {"horizon": 200, "trials": None},
    "steady": {"horizon": None, "trials": None},
    "markov-verify": {"horizon": 25, "trials": None},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# generator specs
# ---------------------------------------------------------------------------

def _coerce(v: str):
    low = v.lower()
    if low in ("none", "null"):
        return None
    if low in ("true", "false"):
        return low == "true"
    for f in (int, float):
        try:
            return f(v)
        except ValueError:
            pass
    return v


def parse_generate_spec(spec: str) -> tuple[str, dict]:
    """'power-system s=10 M=500 horizon=500' -> ('power-system', {...})."""
    parts = spec.split()
    if not parts:
        raise UsageError("empty --generate spec")
    kind, kv = parts[0], {}
    for tok in parts[1:]:
        if "=" not in tok:
            raise UsageError(f"expected key=value in --generate spec, got {tok!r}")
        k, v = tok.split("=", 1)
        kv[k] = _coerce(v)
    return kind, kv


RUN_KEYS = {"M": "trials", "trials": "trials", "horizon": "horizon"}


def build_generated_model(kind: str, kv: dict, seed: int, horizon: int | None) -> LisModel:
    kv = {k: v for k, v in kv.items() if k not in RUN_KEYS or k == "horizon"}
    mseed = kv.pop("model_seed", seed)
    if kind == "power-system":
        switch = kv.pop("switch", kv.pop("switch_every", 100))
        mh = kv.pop("horizon", horizon)
        cfg = PowerSystemConfig(
            s=int(kv.pop("s", 10)),
            ties=kv.pop("ties", "ring"),
            Ts=float(kv.pop("Ts", 1.0)),
            switch_every=switch,
            horizon=mh if switch is not None else None,
            q=float(kv.pop("q", 1.0)),
            r=float(kv.pop("r", 1.0)),
            discretization=kv.pop("discretization", "blockwise"),
        )
        model = generate_power_system(cfg, seed=int(mseed))
    elif kind == "scalar":
        kv.pop("horizon", None)
        model = scalar_model(float(kv.pop("a", 1.0)), float(kv.pop("c", 1.0)),
                             float(kv.pop("q", 1.0)), float(kv.pop("r", 1.0)))
    elif kind == "random":
        kv.pop("horizon", None)
        model = random_model(
            s=int(kv.pop("s", 3)), dims=int(kv.pop("n", 2)), mdims=int(kv.pop("m", 1)),
            density=float(kv.pop("density", 0.5)),
            diag_radius=kv.pop("diag_radius", None), coupling=float(kv.pop("coupling", 1.0)),
            seed=int(mseed), epochs=int(kv.pop("epochs", 1)), switch_every=int(kv.pop("switch_every", 10)),
            q=float(kv.pop("q", 1.0)), r=float(kv.pop("r", 1.0)),
        )
    else:
        raise UsageError(f"unknown generator {kind!r}; use power-system, scalar or random")
    if kv:
        raise UsageError(f"unknown keys for {kind}: {sorted(kv)}")
    return model


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lisest", description="Distributed Kalman-like estimation for interconnected systems")
    p.add_argument("--version", action="version", version=f"lisest {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--model", help="JSON model file")
        src.add_argument("--generate", metavar="SPEC", help="generator spec, e.g. 'power-system s=10 M=500 horizon=500'")
        sp.add_argument("--config", help="JSON file with run settings; flags win over it")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--horizon", type=int)
        sp.add_argument("--trials", type=int)
        sp.add_argument("--policy", choices=["out", "in"])
        sp.add_argument("--tol", type=float)
        sp.add_argument("--threads", type=int)

    s = sub.add_parser("simulate", help="Monte Carlo RMSE experiment")
    common(s)
    s.add_argument("--estimators", help="comma list of distributed, steady, centralized")
    s.add_argument("--noise", choices=["uniform", "gaussian", "none"])
    s.add_argument("--P0", type=float, help="initial covariance scale P(0) = P0 I")
    s.add_argument("--steady-checkpoint", dest="steady_checkpoint", help="use steady gains from this file")

    s = sub.add_parser("stability", help="boundedness, LMI and condition checks")
    common(s)
    s.add_argument("--max-iter", dest="max_iter", type=int)

    s = sub.add_parser("steady", help="solve for the steady-state DMRE and write a checkpoint")
    common(s)
    s.add_argument("--max-iter", dest="max_iter", type=int)
    s.add_argument("--init", default=None, help="initial prior: q (default), zero, or a scalar c for c*I")

    s = sub.add_parser("markov-verify", help="compare the Markov mean recursion with the LIS")
    common(s)
    s.add_argument("--closed-loop", dest="closed_loop", action="store_true", default=None,
                   help="use closed-loop blocks A_ij (I - K_j C_j) from the DMRE gains")
    return p


def resolve(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    cfg.update(COMMAND_DEFAULTS[args.command])
    cfg["command"] = args.command
    file_cfg = {}
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
    gen = args.generate or (file_cfg.get("generate") if not args.model else None)
    if gen:
        _, kv = parse_generate_spec(gen)
        for k, target in RUN_KEYS.items():
            if k in kv:
                cfg[target] = kv[k]
    cfg.update({k: v for k, v in file_cfg.items()})
    for k, v in vars(args).items():
        if v is not None and k not in ("config",):
            cfg[k] = v
    if args.model:
        cfg.pop("generate", None)
    if gen and not args.model:
        cfg["generate"] = gen
    if not cfg.get("model") and not cfg.get("generate"):
        raise UsageError("give --model PATH or --generate SPEC")
    return cfg


def load_or_generate(cfg: dict) -> LisModel:
    if cfg.get("model"):
        return load_model(cfg["model"])
    kind, kv = parse_generate_spec(cfg["generate"])
    try:
        return build_generated_model(kind, kv, int(cfg["seed"]), cfg.get("horizon"))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad value in --generate spec: {exc}") from exc


def _meta(cfg: dict, model: LisModel, extra: dict | None = None) -> dict:
    out = {
        "lisest_version": __version__,
        "numpy_version": np.__version__,
        "config": cfg,
        "model": {"s": model.s, "dims": list(model.dims), "mdims": list(model.mdims),
                  "epochs": len(model.epochs), "horizon": model.horizon},
    }
    if extra:
        out.update(extra)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: dict) -> int:
    M = cfg.get("trials")
    if M is None or int(M) < 1:
        raise UsageError("simulate needs at least one trial (M >= 1)")
    M, H = int(M), int(cfg["horizon"])
    model = load_or_generate(cfg)
    kinds = [k.strip() for k in str(cfg["estimators"]).split(",") if k.strip()]
    configs = [EstimatorConfig(k, policy=cfg["policy"], P0=float(cfg["P0"])) for k in kinds]
    pre = {}
    if cfg.get("steady_checkpoint"):
        ck = load_checkpoint(cfg["steady_checkpoint"])
        if not isinstance(ck, SteadyState):
            raise UsageError("--steady-checkpoint must point at a steady-state checkpoint")
        for c in configs:
            if c.kind == "steady":
                pre[c.label] = constant_schedule(ck.K_star.global_matrix(), H)
    noise = NoiseSpec(cfg["noise"])
    res = monte_carlo_rmse(model, configs, noise, M, H, int(cfg["seed"]), threads=int(cfg["threads"]),
                           precomputed=pre)
    out = Path(cfg["out"])
    summary = {}
    for label, ens in res.items():
        write_rmse_csv(out / f"{label}.csv", ens)
        summary[label] = {"mean_rmse": ens.mean_rmse(), "trials_used": ens.trials_used, "diverged": ens.diverged}
        print(f"{label:>20s}  mean RMSE {ens.mean_rmse():.6g}  used {ens.trials_used}/{M}  diverged {ens.diverged}")
    write_metadata(out / "metadata.json", _meta(cfg, model, {"summary": summary}))
    return EXIT_OK


def cmd_stability(cfg: dict) -> int:
    model = load_or_generate(cfg)
    out = Path(cfg["out"])
    policy = cfg["policy"]
    report: dict = {}
    if model.time_invariant:
        th = decoupling_variables(model, policy, 0)
        b = boundedness_check(model, th, max_iter=int(cfg["max_iter"]))
        rows = [distributed_lmi_check(model, i, float(th[i])) for i in range(model.s)]
        c = centralized_lmi_feasibility(model, th)
        report["boundedness"] = b.to_dict()
        report["centralized_lmi"] = {k: v for k, v in c.to_dict().items() if k != "witness"}
        report["centralized_lmi"]["lmi_min_eig"] = c.witness.get("lmi_min_eig")
        report["distributed_lmi"] = [{"row": r.row, "feasible": r.feasible, "residual_radius": r.residual_radius}
                                     for r in rows]
        states = run_dmre(model, int(cfg["horizon"]), th)
        verdict = b.bounded
        if b.method.endswith("arpack") or b.method.endswith("power-iteration"):
            report["note"] = f"n = {model.n} exceeds the dense Kronecker limit; used {b.method.split('+')[-1]}"
        print(f"boundedness: {b.bounded}  rho(L_K) = {b.spectral_radius}  method {b.method}")
        print(f"centralized LMI: {c.bounded}  ({c.method})")
        print(f"{'row':>4s} {'feasible':>9s} {'lambda_max':>12s}")
        for r in rows:
            print(f"{r.row:>4d} {str(r.feasible):>9s} {r.residual_radius:>12.6g}")
    else:
        H = int(cfg["horizon"])
        if model.horizon is not None:
            H = min(H, model.horizon - (1 if policy == "out" else 0))
        states = run_dmre(model, H, policy=policy)
        traces = [st.trace() for st in states[1:]]
        trQ = float(np.trace(model.Q(0))) or 1.0
        diverged = not np.all(np.isfinite(traces)) or max(traces) > 1e12 * trQ
        verdict = NO if diverged else INCONCLUSIVE
        report["finite_horizon_probe"] = {"horizon": H, "sup_trace": float(max(traces)),
                                          "note": "time-varying model: finite-horizon evidence only"}
        print(f"time-varying model: DMRE sup trace over {H} steps = {max(traces):.6g}")
    cond = verify_conditions(model, None, states, policy=policy)
    report["conditions"] = cond.to_dict()
    report["verdict"] = verdict
    print(f"conditions: 1={cond.condition1} 2={cond.condition2} 4={cond.condition4}")
    print(f"verdict: {verdict}")
    save_json(out / "stability.json", report)
    write_metadata(out / "metadata.json", _meta(cfg, model, {"verdict": verdict}))
    return VERDICT_EXIT[verdict]


def cmd_steady(cfg: dict) -> int:
    model = load_or_generate(cfg)
    if not model.time_invariant:
        raise UsageError("steady needs a time-invariant model")
    init = cfg.get("init")
    P_init = None
    if init not in (None, "q"):
        P_init = np.zeros((model.n, model.n)) if init == "zero" else float(init) * np.eye(model.n)
    th = decoupling_variables(model, cfg["policy"], 0)
    ss = steady_state_solve(model, th, tol=float(cfg["tol"]), max_iter=int(cfg["max_iter"]), P_bar_init=P_init)
    out = Path(cfg["out"])
    write_metadata(out / "metadata.json", _meta(cfg, model, {"converged": ss.converged, "diverged": ss.diverged,
                                                              "iterations": ss.iterations}))
    if ss.diverged:
        print("refusing to write a steady-state checkpoint: the DMRE is unbounded, so no steady gain exists "
              "(boundedness holds exactly when some gain set makes the lifted operator's spectral radius < 1)",
              file=sys.stderr)
        return EXIT_NO
    if not ss.converged:
        print(f"no fixed point within {ss.iterations} iterations (residual {ss.residual:.3g}); "
              "checkpoint not written", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    save_checkpoint(out / "steady.json", ss, model.dims)
    print(f"converged in {ss.iterations} iterations; trace(P_bar*) = {np.trace(ss.P_bar_star):.10g}")
    return EXIT_OK


def cmd_markov_verify(cfg: dict) -> int:
    model = load_or_generate(cfg)
    H = int(cfg["horizon"])
    if model.horizon is not None:
        H = min(H, model.horizon)
    rng = np.random.default_rng(int(cfg["seed"]))
    zeta = [rng.standard_normal(d) for d in model.dims]
    xi = [z.copy() for z in zeta]
    states = run_dmre(model, H, policy=cfg["policy"]) if cfg.get("closed_loop") else None
    rows, diags = [], set()
    # closed-loop blocks exist from k = 1, where the first gains are defined
    k0 = 1 if states is not None else 0
    for k in range(k0, H):
        if states is not None:
            blocks = closed_loop_blocks(model, k, local_gains(states[k], model))
        else:
            blocks = dict(model.epoch_at(k).A_blocks)
        me = build_markov_equivalent(blocks, model.dims)
        for j, c, kind in me.flagged_columns():
            diags.add(f"column {j} sums to {c:.6g} ({kind})")
        zeta = lis_step(me, zeta)
        xi = mean_recursion_step(me, xi)
        dev = max(float(np.max(np.abs(a - b))) if a.size else 0.0 for a, b in zip(zeta, xi))
        rows.append((k + 1, dev))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    with (out / "markov_deviation.csv").open("w") as fh:
        fh.write("k,max_deviation\n")
        for k, d in rows:
            fh.write(f"{k},{d!r}\n")
    for line in sorted(diags):
        print(f"diagnostic: {line}")
    worst = max((d for _, d in rows), default=0.0)
    print(f"max deviation over {H} steps: {worst:.3g}")
    write_metadata(out / "metadata.json", _meta(cfg, model, {"max_deviation": worst, "diagnostics": sorted(diags)}))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "stability": cmd_stability,
    "steady": cmd_steady,
    "markov-verify": cmd_markov_verify,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"lisest: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelError, SimulationError, np.linalg.LinAlgError, OSError) as exc:
        print(f"lisest: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
