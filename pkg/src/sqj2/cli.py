"""Command line tying the flow together:

    demo -> quantize -> transform -> run / check -> profile -> dse

Exit codes: 0 success, 1 a check failed, 2 usage or IO error. All output
is deterministic for a given (inputs, seed); CSV schemas carry a version
tag in their first comment line.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .accel.model import AccelConfig
from .accel.planner import plan_network
from .check import report_lines, run_checks
from .dse import dse as dse_sweep
from .engines import ENGINES, network_output, run_forward, top_k
from .fmap import TensorIOError, read_tensor, write_tensor
from .graph import NetworkError, load_network_file, save_network_file
from .params import ParamIOError, read_params, write_params
from .perf import ModelParams, cycles_to_ms, network_latency, simulate_network
from .quantizer import quantize_network
from .resources import BUDGETS, DeviceBudget
from .transforms import transform_network
from .zoo import ZOO, build, random_input, random_real_params

PROFILE_CSV_VERSION = "sqj2-profile-v1"
DSE_CSV_VERSION = "sqj2-dse-v1"

_CONFIG_FIELDS = ("par_fact", "chi_num", "k_max", "wi_x_chi_max", "kxkxchi_max",
                  "q_choxkxkxchi_max", "q_cho_max", "cho_max", "dsp_share")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    d = AccelConfig()
    g = p.add_argument_group("accelerator configuration")
    for name in _CONFIG_FIELDS:
        kind = float if name == "dsp_share" else int
        g.add_argument(f"--{name.replace('_', '-')}", type=kind,
                       default=getattr(d, name), dest=name,
                       help=f"(default {getattr(d, name)})")


def _config_from(args) -> AccelConfig:
    return AccelConfig(**{name: getattr(args, name) for name in _CONFIG_FIELDS})


def _model_params_from(args) -> ModelParams:
    if getattr(args, "model_params", None) is None:
        return ModelParams()
    with open(args.model_params) as f:
        return ModelParams.from_dict(json.load(f))


def _budget_from(args) -> DeviceBudget:
    name = args.budget
    if name in BUDGETS:
        return BUDGETS[name]
    with open(name) as f:
        return DeviceBudget(**json.load(f))


def _load_net_params(args):
    graph = load_network_file(args.net)
    blobs = read_params(args.params)
    return graph, blobs


def _emit(text: str, out_path) -> None:
    if out_path:
        with open(out_path, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_demo(args) -> int:
    graph = build(args.name)
    blobs = random_real_params(graph, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_network_file(out / "net.cfg", graph)
    write_params(out / "params.sqjr", blobs.values())
    write_tensor(out / "input.sqt0", random_input(graph, seed=args.seed + 1))
    calib = []
    for i in range(args.calib):
        name = f"calib_{i}.sqt0"
        write_tensor(out / name, random_input(graph, seed=args.seed + 2 + i))
        calib.append(name)
    print(f"wrote {args.name} to {out}: net.cfg params.sqjr input.sqt0 "
          + " ".join(calib))
    return 0


def cmd_quantize(args) -> int:
    graph, blobs = _load_net_params(args)
    if any(b.is_fixed for b in blobs.values()):
        raise ParamIOError("quantize expects real-valued parameters (SQJR)")
    calib = [read_tensor(p) for p in args.calib]
    qgraph, qblobs, scheme = quantize_network(graph, blobs, calib)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_network_file(out / "net.cfg", qgraph)
    write_params(out / "params.sqj2", qblobs.values())
    print(f"# {'layer':<14} {'fl_in':>5} {'fl_out':>6} {'fl_w':>5} {'fl_b':>5}")
    print(f"{'input':<16} {'-':>5} {scheme.activation_fl['input']:>6} {'-':>5} {'-':>5}")
    for node in qgraph.nodes:
        if node.kind != "conv":
            continue
        print(f"{node.name:<16} {node.fl_in:>5} {node.fl_out:>6} "
              f"{node.fl_w:>5} {node.fl_b:>5}")
    print(f"wrote {out / 'net.cfg'} and {out / 'params.sqj2'}")
    return 0


def cmd_transform(args) -> int:
    graph, blobs = _load_net_params(args)
    config = _config_from(args)
    tgraph, tblobs, log = transform_network(graph, blobs, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_network_file(out / "net.cfg", tgraph)
    fixed = all(b.is_fixed for b in tblobs.values())
    params_name = "params.sqj2" if fixed else "params.sqjr"
    write_params(out / params_name, tblobs.values())
    for line in log or ["no transforms applied"]:
        print(line)
    print(f"wrote {out / 'net.cfg'} and {out / params_name}")
    return 0


def cmd_run(args) -> int:
    graph, blobs = _load_net_params(args)
    input_map = read_tensor(args.input)
    config = _config_from(args)
    values = run_forward(args.engine, graph, blobs, input_map, config)
    out_map = network_output(graph, values)
    h, w, c = out_map.shape
    fmt = f" fl {out_map.fmt.frac_len}" if out_map.is_fixed else " real"
    print(f"{args.engine}: output {graph.output_node.name} {h}x{w}x{c}{fmt}")
    if (h, w) == (1, 1):
        for rank, (ch, val) in enumerate(top_k(out_map, args.top_k), start=1):
            print(f"top{rank} channel {ch} value {val:.6f}")
    if args.out:
        write_tensor(args.out, out_map)
        print(f"wrote {args.out}")
    return 0


def cmd_check(args) -> int:
    graph, blobs = _load_net_params(args)
    config = _config_from(args)
    results = run_checks(graph, blobs, config, _model_params_from(args),
                         trials=args.trials, seed=args.seed,
                         fault_layer=args.inject_fault)
    for line in report_lines(results):
        print(line)
    return 0 if all(r.passed for r in results) else 1


def cmd_profile(args) -> int:
    graph, blobs = _load_net_params(args)
    config = _config_from(args)
    params = _model_params_from(args)
    plan = plan_network(graph, blobs, config)
    report = network_latency(graph, blobs, config, params, args.clock_mhz, plan=plan)
    sims = simulate_network(graph, blobs, config, params, plan=plan)
    lines = [f"# {PROFILE_CSV_VERSION}",
             "layer,invocations,cycles_model,cycles_sim,pct_error,ms,cumulative_ms"]
    cum_ms = 0.0
    for layer in report.layers:
        model = layer.cycles
        sim = sims[layer.name]
        pct = 0.0 if sim == 0 else 100.0 * (model - sim) / sim
        ms = cycles_to_ms(model, args.clock_mhz)
        cum_ms += ms
        lines.append(f"{layer.name},{len(layer.invocations)},{model},{sim},"
                     f"{pct:.4f},{ms:.6f},{cum_ms:.6f}")
    lines.append(f"# total: {report.total_cycles} cycles, {report.ms:.2f} ms, "
                 f"{report.fps:.4f} fps")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _parse_grid(tokens) -> dict:
    grid = {}
    for tok in tokens:
        key, sep, vals = tok.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not vals:
            raise ValueError(f"grid entry {tok!r} is not key=v1,v2,...")
        cast = float if key == "dsp_share" else int
        grid[key] = [cast(v) for v in vals.split(",") if v]
    return grid


def cmd_dse(args) -> int:
    graph, blobs = _load_net_params(args)
    grid = _parse_grid(args.grid)
    result = dse_sweep([(graph, blobs)], grid, _budget_from(args),
                       _model_params_from(args), base_config=_config_from(args),
                       clock_mhz=args.clock_mhz)
    lines = [f"# {DSE_CSV_VERSION}",
             "par_fact,chi_num,dsp,bram,lut_macs,cycles,dominated"]
    for p in result.points:
        if p.feasible:
            lines.append(f"{p.config.par_fact},{p.config.chi_num},"
                         f"{p.estimate.dsp_macs},{p.estimate.bram_total},"
                         f"{p.estimate.lut_macs},{p.cycles},{int(p.dominated)}")
        else:
            why = f" ({p.note})" if p.note else ""
            lines.append(f"# infeasible: par_fact={p.config.par_fact} "
                         f"chi_num={p.config.chi_num}{why}")
    if not result.feasible_points:
        lines.append("# no feasible points")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sqj2",
        description="int8 CNN accelerator model: quantize, transform, run, "
                    "check, profile, explore")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("demo", help="emit a demo network with random data")
    p.add_argument("--name", choices=ZOO, default="mini-squeezenet")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--calib", type=int, default=4, help="calibration tensors to emit")
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("quantize", help="calibrate formats and emit int8 net")
    p.add_argument("--net", required=True)
    p.add_argument("--params", required=True, help="real-valued SQJR file")
    p.add_argument("--calib", required=True, nargs="+", help="sample tensors")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("transform", help="reshape/reorder the net for the accelerator")
    p.add_argument("--net", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_config_args(p)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("run", help="forward one input tensor")
    p.add_argument("--net", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--engine", choices=ENGINES, default="accel")
    p.add_argument("--out", default=None, help="output tensor file")
    p.add_argument("--top-k", type=int, default=5, dest="top_k")
    _add_config_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="randomized equivalence suite")
    p.add_argument("--net", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", default=None, metavar="LAYER",
                   help="flip one weight code of LAYER in the accel path")
    p.add_argument("--model-params", default=None, help="ModelParams JSON file")
    _add_config_args(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("profile", help="per-layer cycle model vs simulator CSV")
    p.add_argument("--net", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--clock-mhz", type=float, default=100.0, dest="clock_mhz")
    p.add_argument("--model-params", default=None, help="ModelParams JSON file")
    p.add_argument("--out", default=None, help="CSV file (default stdout)")
    _add_config_args(p)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("dse", help="sweep configurations under a budget")
    p.add_argument("--net", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--grid", nargs="+", default=["par_fact=8,16,32", "chi_num=8,16"],
                   help="key=v1,v2 entries over AccelConfig fields")
    p.add_argument("--budget", default="xc7z020",
                   help="device name (xc7z020, xc7z045) or JSON file")
    p.add_argument("--clock-mhz", type=float, default=100.0, dest="clock_mhz")
    p.add_argument("--model-params", default=None, help="ModelParams JSON file")
    p.add_argument("--out", default=None, help="CSV file (default stdout)")
    _add_config_args(p)
    p.set_defaults(func=cmd_dse)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (NetworkError, ParamIOError, TensorIOError, ValueError,
            json.JSONDecodeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
