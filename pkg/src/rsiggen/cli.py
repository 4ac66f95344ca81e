"""Command-line pipeline: simulate/ingest data, train, generate, evaluate, plot.

Every subcommand that writes an output also writes `<output>.manifest.json`
recording the fully resolved config, seeds and versions. Manifests contain
no timestamps, so rerunning a command with the same inputs reproduces every
output byte for byte.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, data as data_mod
from .activations import Activation
from .generator import (
    GeneratorConfig,
    generate_cond,
    generate_uncond,
    init_cond_generator,
    init_generator,
)
from .metrics import evaluate as evaluate_uncond_metrics
from .metrics import evaluate_cond as evaluate_cond_metrics
from .metrics import kde
from .modelio import ModelBundle, load_model, save_model
from .rsig import sample_rs_params
from .training import TrainConfig, train_cond, train_uncond

PRESET_NAMES = [
    "bm0", "bm1", "ar1_0.1", "ar1_0.9", "ar1_-0.1", "ar1_-0.9",
    "spx", "forex", "bm0_cond", "bm1_cond", "spx_cond", "forex_cond",
]

CONFIG_DEFAULTS = {
    "rs": {"n_dim": 80, "weight_std": 1.0, "activation": "shifted_sigmoid", "seed": 0},
    "generator": {
        "d_dim": 80, "n_bm": 5, "noise_dim": 5, "hidden": 64, "fixed_std": 1.0,
        "activation": "sigmoid", "rho5_trainable": False, "proj_radius": None,
        "seed": 1,
    },
    "training": {
        "steps": 2500, "batch_size": 1500, "learning_rate": 1e-4,
        "mc_width": 200, "ols_ridge": 1e-6, "noise_seed": 2, "batch_seed": 3,
        "checkpoint_interval": None, "patience": None,
    },
    "evaluation": {
        "expect_normal": False, "sw_alpha": 0.05, "n_generate": 2000,
        "mc_eval": 100, "max_eval_pasts": 200, "noise_seed": 4,
    },
}


# -- config handling -----------------------------------------------------------

def load_preset(name: str) -> dict:
    if name not in PRESET_NAMES:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    from importlib import resources

    ref = resources.files("rsiggen.presets").joinpath(f"{name}.toml")
    with ref.open("rb") as fh:
        return tomllib.load(fh)


def load_config_file(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def normalize_config(raw: dict) -> dict:
    """Fill defaults so every knob (seeds included) is explicit and recorded."""
    cfg = copy.deepcopy(raw)
    mode = cfg.get("mode", "uncond")
    if mode not in ("uncond", "cond"):
        raise ValueError(f"mode must be 'uncond' or 'cond', got {mode!r}")
    cfg["mode"] = mode
    for section, defaults in CONFIG_DEFAULTS.items():
        merged = dict(defaults)
        merged.update(cfg.get(section, {}))
        cfg[section] = merged
    cfg.setdefault("data", {})
    if mode == "cond":
        d = cfg["data"]
        if not d.get("past_len") or not d.get("future_len"):
            raise ValueError("conditional mode needs data.past_len and data.future_len")
    return cfg


def apply_overrides(cfg: dict, pairs) -> dict:
    for pair in pairs or []:
        if "=" not in pair:
            raise ValueError(f"override {pair!r} is not of the form section.key=value")
        dotted, value = pair.split("=", 1)
        keys = dotted.strip().split(".")
        node = cfg
        for key in keys[:-1]:
            node = node.setdefault(key, {})
        node[keys[-1]] = _parse_value(value.strip())
    return cfg


def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def build_dataset(cfg: dict) -> data_mod.Dataset:
    d = cfg["data"]
    source = d.get("source")
    mode = cfg["mode"]
    if source == "bm":
        ds = data_mod.simulate_bm(d.get("mu", 0.0), d.get("sigma", 1.0),
                                  d["horizon"], d["n_paths"], d.get("seed", 0))
    elif source == "ar":
        ds = data_mod.simulate_ar(d["phis"], d.get("sigma", 1.0), d["horizon"],
                                  d["n_paths"], d.get("seed", 0),
                                  burn_in=d.get("burn_in", 500))
    elif source == "csv":
        if not d.get("path"):
            raise ValueError("data.path must point to a price CSV for csv sources")
        series = data_mod.load_close_prices(d["path"])
        returns = data_mod.log_returns(series.close)
        if mode == "cond":
            return data_mod.train_test_split(
                data_mod.past_future_windows(returns, d["past_len"], d["future_len"]),
                d.get("train_frac", 0.8), d.get("split_seed", 0))
        ds = data_mod.rolling_windows(returns, d["window"])
        return data_mod.train_test_split(ds, d.get("train_frac", 0.8),
                                         d.get("split_seed", 0))
    else:
        raise ValueError(f"unknown data source {source!r}")
    if d.get("increments"):
        ds = data_mod.path_increments(ds)
    if mode == "cond":
        ds = data_mod.Dataset(samples=ds.samples, kind=data_mod.WINDOWED,
                              past_len=d["past_len"], future_len=d["future_len"],
                              provenance=ds.provenance)
    return data_mod.train_test_split(ds, d.get("train_frac", 0.8), d.get("split_seed", 0))


def write_manifest(out_path, command: str, config: dict | None, inputs: dict) -> None:
    doc = {
        "command": command,
        "inputs": inputs,
        "config": config,
        "versions": {
            "rsiggen": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
    }
    with open(os.fspath(out_path) + ".manifest.json", "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


# -- subcommands ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.process == "bm":
        ds = data_mod.simulate_bm(args.mu, args.sigma, args.horizon, args.n, args.seed)
        spec = {"source": "bm", "mu": args.mu, "sigma": args.sigma}
    else:
        ds = data_mod.simulate_ar(args.phi, args.sigma, args.horizon, args.n,
                                  args.seed, burn_in=args.burn_in)
        spec = {"source": "ar", "phis": args.phi, "sigma": args.sigma,
                "burn_in": args.burn_in}
    spec.update({"horizon": args.horizon, "n_paths": args.n, "seed": args.seed})
    if args.increments:
        ds = data_mod.path_increments(ds)
        spec["increments"] = True
    if args.past is not None:
        future = ds.horizon - args.past
        ds = data_mod.Dataset(samples=ds.samples, kind=data_mod.WINDOWED,
                              past_len=args.past, future_len=future,
                              provenance=ds.provenance)
        spec.update({"past_len": args.past, "future_len": future})
    if args.train_frac:
        ds = data_mod.train_test_split(ds, args.train_frac, args.split_seed)
        spec.update({"train_frac": args.train_frac, "split_seed": args.split_seed})
    data_mod.save_dataset(ds, args.out)
    write_manifest(args.out, "simulate", spec, {})
    print(f"wrote {ds.n_samples} x {ds.horizon} x {ds.in_dim} dataset to {args.out}")
    return 0


def cmd_ingest(args) -> int:
    series = data_mod.load_close_prices(args.csv)
    returns = data_mod.log_returns(series.close)
    if args.past is not None and args.future is not None:
        ds = data_mod.past_future_windows(returns, args.past, args.future)
    else:
        ds = data_mod.rolling_windows(returns, args.window)
    if args.train_frac:
        ds = data_mod.train_test_split(ds, args.train_frac, args.split_seed)
    data_mod.save_dataset(ds, args.out)
    spec = {"source": "csv", "path": args.csv, "window": args.window,
            "past_len": args.past, "future_len": args.future,
            "skipped_rows": series.skipped,
            "train_frac": args.train_frac, "split_seed": args.split_seed}
    write_manifest(args.out, "ingest", spec, {"csv": args.csv})
    print(f"ingested {len(series.close)} prices ({series.skipped} rows skipped) -> "
          f"{ds.n_samples} windows in {args.out}")
    return 0


def _resolve_config(args) -> dict:
    if args.preset:
        raw = load_preset(args.preset)
    elif args.config:
        raw = load_config_file(args.config)
    else:
        raise ValueError("pass --preset or --config")
    cfg = normalize_config(apply_overrides(raw, args.set))
    if args.steps is not None:
        cfg["training"]["steps"] = args.steps
    return cfg


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    mode = cfg["mode"]
    if args.data:
        dataset = data_mod.load_dataset(args.data)
        cfg["data"] = {"source": "file", "path": args.data}
    else:
        dataset = build_dataset(cfg)
    if mode == "cond" and dataset.kind != data_mod.WINDOWED:
        raise ValueError("conditional training needs a windowed dataset")

    rs_cfg, gen_cfg, tr_cfg = cfg["rs"], cfg["generator"], cfg["training"]
    horizon = dataset.future_len if mode == "cond" else dataset.horizon
    rs = sample_rs_params(rs_cfg["n_dim"], dataset.in_dim, horizon,
                          rs_cfg["weight_std"], Activation(rs_cfg["activation"]),
                          rs_cfg["seed"])
    gcfg = GeneratorConfig(
        d_dim=gen_cfg["d_dim"], out_dim=dataset.in_dim, n_bm=gen_cfg["n_bm"],
        noise_dim=gen_cfg["noise_dim"], horizon=horizon, hidden=gen_cfg["hidden"],
        fixed_std=gen_cfg["fixed_std"], activation=Activation(gen_cfg["activation"]),
        seed=gen_cfg["seed"], rho5_trainable=gen_cfg["rho5_trainable"],
        proj_radius=gen_cfg["proj_radius"],
    )
    tcfg = TrainConfig(
        steps=tr_cfg["steps"], batch_size=tr_cfg["batch_size"],
        learning_rate=tr_cfg["learning_rate"], mc_width=tr_cfg["mc_width"],
        noise_seed=tr_cfg["noise_seed"], batch_seed=tr_cfg["batch_seed"],
        patience=tr_cfg["patience"], checkpoint_interval=tr_cfg["checkpoint_interval"],
    )

    out = args.out
    ckpt_dir = os.path.dirname(os.path.abspath(out))

    if mode == "uncond":
        gen = init_generator(gcfg)

        def checkpoint(step, params):
            save_model(os.path.join(ckpt_dir, f"checkpoint_{step}.json"),
                       ModelBundle("uncond", rs, params, cfg))

        gen, history = train_uncond(gen, rs, dataset, tcfg, checkpoint)
        bundle = ModelBundle("uncond", rs, gen, cfg)
    else:
        gen = init_cond_generator(gcfg, dataset.past_len, rs_cfg["n_dim"])

        def checkpoint(step, params):
            save_model(os.path.join(ckpt_dir, f"checkpoint_{step}.json"),
                       ModelBundle("cond", rs, params, cfg))

        gen, history, ols = train_cond(gen, rs, dataset, tcfg,
                                       ols_ridge=tr_cfg["ols_ridge"],
                                       checkpoint_callback=checkpoint)
        bundle = ModelBundle("cond", rs, gen, cfg, ols=ols)

    save_model(out, bundle)
    history.to_csv(os.path.splitext(out)[0] + "_history.csv")
    write_manifest(out, "train", cfg, {"data": args.data})
    losses = history.losses()
    if losses.size:
        print(f"trained {mode} model: {losses.size} steps, "
              f"loss {losses[0]:.4g} -> {losses[-1]:.4g}; wrote {out}")
    else:
        print(f"trained {mode} model: 0 steps; wrote {out}")
    return 0


def cmd_generate(args) -> int:
    bundle = load_model(args.model)
    if bundle.mode == "uncond":
        paths, _ = generate_uncond(bundle.gen, args.n, args.noise_seed)
        note = f"generated by {args.model} (uncond, seed {args.noise_seed})"
    else:
        if not args.data:
            raise ValueError("conditional generation needs --data with windows")
        ds = data_mod.load_dataset(args.data)
        past = ds.pasts()[args.past_index]
        paths, _ = generate_cond(bundle.gen, bundle.rs, past, args.n, args.noise_seed)
        note = (f"generated by {args.model} (cond, past {args.past_index} of "
                f"{args.data}, seed {args.noise_seed})")
    out_ds = data_mod.Dataset(samples=paths, provenance=note)
    data_mod.save_dataset(out_ds, args.out)
    write_manifest(args.out, "generate",
                   {"n": args.n, "noise_seed": args.noise_seed,
                    "past_index": args.past_index},
                   {"model": args.model, "data": args.data})
    print(f"wrote {args.n} generated paths to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    bundle = load_model(args.model)
    dataset = data_mod.load_dataset(args.data)
    ev = dict(bundle.config["evaluation"])
    apply_overrides({"evaluation": ev}, args.set)

    if bundle.mode == "uncond":
        test = dataset.test_samples()
        paths, _ = generate_uncond(bundle.gen, ev["n_generate"], ev["noise_seed"])
        report = evaluate_uncond_metrics(paths, test, bundle.rs,
                                         expect_normal=ev["expect_normal"],
                                         sw_alpha=ev["sw_alpha"])
    else:
        if dataset.kind != data_mod.WINDOWED:
            raise ValueError("conditional evaluation needs a windowed dataset")
        report = evaluate_cond_metrics(
            bundle.gen, bundle.rs, bundle.ols,
            dataset.pasts(test_only=True), dataset.futures(test_only=True),
            noise_seed=ev["noise_seed"], mc_eval=ev["mc_eval"],
            max_eval_pasts=ev["max_eval_pasts"],
            expect_normal=ev["expect_normal"], sw_alpha=ev["sw_alpha"],
        )
    with open(args.report, "w") as fh:
        json.dump(report.to_dict(), fh, indent=1)
    write_manifest(args.report, "evaluate", {"evaluation": ev},
                   {"model": args.model, "data": args.data})
    sw = report.sw_passed
    print(f"train metric {report.train_metric:.4g} | cov "
          f"{report.cov_metric if report.cov_metric is not None else 'n/a'} | "
          f"acf {report.acf_metric:.4g} | sw "
          f"{f'{sw[0]}/{sw[1]}' if sw else 'n/a'}")
    return 0


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    real = data_mod.load_dataset(args.data)
    fake = data_mod.load_dataset(args.generated)
    base = os.path.splitext(args.out)[0]

    if args.what == "paths":
        k = min(args.count, real.n_samples, fake.n_samples)
        real_sel = real.test_samples()[:k, :, 0]
        fake_sel = fake.samples[:k, :, 0]
        fig, ax = plt.subplots(figsize=(8, 5))
        for row in real_sel:
            ax.plot(row, color="tab:blue", alpha=0.35, lw=0.8)
        for row in fake_sel:
            ax.plot(row, color="tab:orange", alpha=0.35, lw=0.8)
        ax.plot([], [], color="tab:blue", label="real")
        ax.plot([], [], color="tab:orange", label="generated")
        ax.set_xlabel("step")
        ax.legend()
        fig.savefig(args.out, format="svg", metadata={"Date": None})
        np.savetxt(base + "_real.csv", real_sel, delimiter=",", fmt="%.17g")
        np.savetxt(base + "_generated.csv", fake_sel, delimiter=",", fmt="%.17g")
    else:  # kde
        t = args.time_index
        real_marg = real.test_samples()[:, t, 0]
        fake_marg = fake.samples[:, t, 0]
        curve_real = kde(real_marg)
        curve_fake = kde(fake_marg)
        fig, ax = plt.subplots(figsize=(7, 5))
        ax.plot(curve_real.grid, curve_real.density, label="real")
        ax.plot(curve_fake.grid, curve_fake.density, label="generated")
        ax.set_xlabel(f"value at step {t}")
        ax.set_ylabel("density")
        ax.legend()
        fig.savefig(args.out, format="svg", metadata={"Date": None})
        curve_real.write_csv(base + "_real.csv")
        curve_fake.write_csv(base + "_generated.csv")
    write_manifest(args.out, "plot",
                   {"what": args.what, "count": args.count,
                    "time_index": args.time_index},
                   {"data": args.data, "generated": args.generated})
    print(f"wrote {args.out}")
    return 0


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rsiggen",
        description="Reservoir-feature generative modelling for time series.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="simulate a synthetic dataset")
    p_sim.add_argument("process", choices=["bm", "ar"])
    p_sim.add_argument("--mu", type=float, default=0.0)
    p_sim.add_argument("--sigma", type=float, default=1.0)
    p_sim.add_argument("--phi", type=float, action="append",
                       help="AR coefficient (repeatable)")
    p_sim.add_argument("--burn-in", type=int, default=500)
    p_sim.add_argument("--T", dest="horizon", type=int, required=True)
    p_sim.add_argument("--n", type=int, required=True)
    p_sim.add_argument("--seed", type=int, required=True)
    p_sim.add_argument("--increments", action="store_true",
                       help="store first differences instead of the level paths")
    p_sim.add_argument("--past", type=int, default=None,
                       help="mark first PAST steps as the conditioning window")
    p_sim.add_argument("--train-frac", type=float, default=None)
    p_sim.add_argument("--split-seed", type=int, default=0)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=cmd_simulate)

    p_ing = sub.add_parser("ingest", help="price CSV -> log-return windows")
    p_ing.add_argument("--csv", required=True)
    p_ing.add_argument("--window", type=int, default=10)
    p_ing.add_argument("--past", type=int, default=None)
    p_ing.add_argument("--future", type=int, default=None)
    p_ing.add_argument("--train-frac", type=float, default=None)
    p_ing.add_argument("--split-seed", type=int, default=0)
    p_ing.add_argument("--out", required=True)
    p_ing.set_defaults(func=cmd_ingest)

    p_tr = sub.add_parser("train", help="train a generator")
    p_tr.add_argument("--preset", choices=PRESET_NAMES)
    p_tr.add_argument("--config", help="TOML config file")
    p_tr.add_argument("--data", help="dataset JSON (otherwise built from config)")
    p_tr.add_argument("--steps", type=int, default=None)
    p_tr.add_argument("--set", action="append", metavar="SEC.KEY=VAL",
                      help="override a config value (repeatable)")
    p_tr.add_argument("--out", required=True)
    p_tr.set_defaults(func=cmd_train)

    p_gen = sub.add_parser("generate", help="sample paths from a trained model")
    p_gen.add_argument("--model", required=True)
    p_gen.add_argument("--n", type=int, required=True)
    p_gen.add_argument("--noise-seed", type=int, required=True)
    p_gen.add_argument("--data", help="windowed dataset (conditional mode)")
    p_gen.add_argument("--past-index", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_generate)

    p_ev = sub.add_parser("evaluate", help="score a model on held-out data")
    p_ev.add_argument("--model", required=True)
    p_ev.add_argument("--data", required=True)
    p_ev.add_argument("--set", action="append", metavar="SEC.KEY=VAL")
    p_ev.add_argument("--report", required=True)
    p_ev.set_defaults(func=cmd_evaluate)

    p_pl = sub.add_parser("plot", help="SVG figures with CSV data alongside")
    p_pl.add_argument("what", choices=["paths", "kde"])
    p_pl.add_argument("--data", required=True)
    p_pl.add_argument("--generated", required=True)
    p_pl.add_argument("--count", type=int, default=50)
    p_pl.add_argument("--time-index", type=int, default=-1)
    p_pl.add_argument("--out", required=True)
    p_pl.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # CLI boundary: report and signal failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
