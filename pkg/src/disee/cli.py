"""Command-line front end.

Every subcommand accepts ``--config file.toml``; keys are the long option
names with dashes replaced by underscores, and explicit flags win over
file values.  Each run writes its fully resolved configuration next to
its outputs as ``<run-id>.<command>-config.toml``, which replays the run when passed
back through ``--config``.

Exit codes: 0 success, 1 other runtime failure (e.g. the remote API is
unreachable), 2 usage or configuration error, 3 numerical failure,
4 missing input artifact.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import DiseeError, InvalidParams, NumericalError, UndefinedMetric
from .impact import ImpactKind

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_NUMERIC, EXIT_MISSING = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class MissingArtifact(Exception):
    pass


# option registry -------------------------------------------------------------

class _Options:
    """Collects defaults separately so a config file can sit between defaults and flags."""

    def __init__(self, parser):
        self.parser = parser
        self.defaults = {}

    def add(self, flag, default=None, help="", **kw):
        dest = flag.lstrip("-").replace("-", "_")
        self.defaults[dest] = default
        if kw.get("action") == "store_true":
            kw["action"] = "store_const"
            kw["const"] = True
        shown = "" if default is None else f" (default: {default})"
        self.parser.add_argument(flag, dest=dest, default=None, help=help + shown, **kw)


def _common(opts, run_id_help):
    opts.add("--config", help="TOML file with option values")
    opts.add("--out-dir", ".", help="directory for outputs")
    opts.add("--run-id", help=run_id_help)
    opts.add("--seed", 0, type=int, help="random seed")
    opts.add("--threads", 1, type=int, help="worker threads for likelihood evaluation")
    opts.add("--log-level", "warning", choices=["debug", "info", "warning", "error"],
             help="logging verbosity")


def _resolve(args, opts):
    """defaults < config file < explicit flags."""
    explicit = {k: v for k, v in vars(args).items() if v is not None and k in opts.defaults}
    from_file = {}
    if explicit.get("config"):
        path = Path(explicit["config"])
        if not path.exists():
            raise MissingArtifact(f"config file not found: {path}")
        try:
            from_file = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"cannot parse {path}: {exc}") from exc
        from_file.pop("command", None)
        unknown = set(from_file) - set(opts.defaults)
        if unknown:
            raise UsageError(f"unknown keys in {path}: {', '.join(sorted(unknown))}")
    cfg = {**opts.defaults, **from_file, **explicit}
    cfg.pop("config", None)
    return cfg


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return json.dumps(str(v))


def write_resolved(path, command, cfg):
    lines = [f"command = {_toml_value(command)}"]
    lines += [f"{k} = {_toml_value(v)}" for k, v in sorted(cfg.items()) if v is not None]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _out(cfg, kind, ext):
    d = Path(cfg["out_dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d / f"{cfg['run_id']}.{kind}.{ext}"


def _need(path, what):
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise MissingArtifact(f"{what} not found: {p}")
    return p


def _load_net(cfg):
    from .network import load_network
    data = _need(cfg.get("data"), "data")
    nodes = _need(cfg["nodes"], "nodes") if cfg.get("nodes") else None
    return load_network(data, nodes)


# generate ---------------------------------------------------------------------

_GEN_FLAGS = [
    ("n_nodes", int), ("dim", int), ("horizon", float), ("alpha_lambda", float),
    ("theta_lambda", float), ("alpha_beta", float), ("theta_beta", float), ("mu_m", float),
    ("sigma_m", float), ("alpha_s", float), ("theta_s", float), ("sigma_z", float),
    ("sigma_w", float), ("min_citations", int), ("alpha_tau", float), ("theta_tau", float),
    ("mu_mean", float),
]


def _setup_generate(sub):
    p = sub.add_parser("generate", help="sample a synthetic network with planted structure")
    o = _Options(p)
    _common(o, "output prefix (default: the preset name)")
    o.add("--preset", "art-small", choices=["art", "art-small", "tiny"], help="base hyperparameters")
    for name, typ in _GEN_FLAGS:
        o.add("--" + name.replace("_", "-"), type=typ, help=f"override {name}")
    o.add("--impact", choices=["log-normal", "truncated"], help="planted impact family")
    o.add("--appendix-variant", action="store_true", help="use the two-level Gamma-Poisson process")
    o.add("--validate", False, action="store_true", help="also write a statistics report")
    return o


def cmd_generate(cfg):
    from .generator import generate, preset, validate_statistics
    from .network import save_network
    cfg["run_id"] = cfg["run_id"] or cfg["preset"]
    overrides = {k: cfg[k] for k, _ in _GEN_FLAGS if cfg.get(k) is not None}
    if cfg.get("impact"):
        overrides["impact"] = cfg["impact"]
    if cfg.get("appendix_variant"):
        overrides["appendix_variant"] = True
    try:
        gcfg = preset(cfg["preset"], seed=cfg["seed"], **overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    net, truth = generate(gcfg)
    save_network(net, _out(cfg, "edges", "tsv"), _out(cfg, "nodes", "tsv"))
    truth.to_json(_out(cfg, "truth", "json"))
    if cfg["validate"]:
        report = validate_statistics(net, truth, gcfg, seed=cfg["seed"])
        _out(cfg, "stats", "json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n",
                                              encoding="utf-8")
    print(f"{net!r} -> {_out(cfg, 'edges', 'tsv')}")
    return EXIT_OK


# ingest -----------------------------------------------------------------------

def _setup_ingest(sub):
    p = sub.add_parser("ingest", help="build a citation network from the OpenAlex API")
    o = _Options(p)
    _common(o, "output prefix (default: the preset name or 'corpus')")
    o.add("--preset", choices=["ml", "phys", "sosci"], help="field filter and date window")
    o.add("--filter", help="OpenAlex filter expression, e.g. concepts.id:C119857082")
    o.add("--from-date", help="first publication date (YYYY-MM-DD)")
    o.add("--to-date", help="last publication date (YYYY-MM-DD)")
    o.add("--min-citations", 10, type=int, help="in-corpus citations needed to be a target")
    o.add("--max-works", type=int, help="cap on fetched works")
    o.add("--email", help="contact address sent as the mailto parameter")
    o.add("--cache-dir", ".disee-cache", help="response cache directory")
    return o


def cmd_ingest(cfg):
    from .ingest import PRESETS, IngestSpec, build_sen, fetch_works
    from .network import save_network
    base = dict(PRESETS[cfg["preset"]]) if cfg.get("preset") else {}
    for key in ("filter", "from_date", "to_date"):
        if cfg.get(key):
            base[key] = cfg[key]
        elif key not in base:
            raise UsageError(f"--{key.replace('_', '-')} is required without --preset")
    cfg["run_id"] = cfg["run_id"] or cfg.get("preset") or "corpus"
    try:
        spec = IngestSpec(**base, min_citations=cfg["min_citations"], max_works=cfg.get("max_works"),
                          polite_email=cfg.get("email"), cache_dir=cfg["cache_dir"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    fetched = fetch_works(spec)
    net, stats = build_sen(fetched.records, spec, return_stats=True)
    save_network(net, _out(cfg, "edges", "tsv"), _out(cfg, "nodes", "tsv"))
    summary = {"records": len(fetched.records), "skipped_records": fetched.skipped,
               "requests": fetched.requests, **vars(stats)}
    _out(cfg, "ingest", "json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n",
                                           encoding="utf-8")
    print(f"{net!r} from {len(fetched.records)} works ({fetched.requests} requests)")
    return EXIT_OK


# split ------------------------------------------------------------------------

def _setup_split(sub):
    p = sub.add_parser("split", help="hold out links and matched non-links for evaluation")
    o = _Options(p)
    _common(o, "output prefix (default: 'split')")
    o.add("--data", help="edge-list TSV")
    o.add("--nodes", help="node TSV")
    o.add("--fraction", 0.2, type=float, help="share of links held out")
    return o


def cmd_split(cfg):
    from .network import save_split, train_test_split
    cfg["run_id"] = cfg["run_id"] or "split"
    net = _load_net(cfg)
    split = train_test_split(net, cfg["fraction"], seed=cfg["seed"])
    save_split(split, _out(cfg, "split", "json"))
    print(f"held out {len(split.test_positives)} links and {len(split.test_negatives)} non-links")
    return EXIT_OK


# fit --------------------------------------------------------------------------

def _setup_fit(sub):
    from .model import ModelVariant
    p = sub.add_parser("fit", help="train a model by maximum likelihood")
    o = _Options(p)
    _common(o, "output prefix (default: <model>-D<dim>-s<seed>)")
    o.add("--data", help="edge-list TSV")
    o.add("--nodes", help="node TSV")
    o.add("--split", help="split manifest; its held-out dyads are kept out of training")
    o.add("--model", "disee", choices=[v.value for v in ModelVariant], help="model variant")
    o.add("--fixed-impact", False, action="store_true",
          help="freeze impact functions at their empirical fit")
    o.add("--impact", "log-normal", choices=["log-normal", "truncated", "mixture"],
          help="impact family")
    o.add("--components", 3, type=int, help="mixture components")
    o.add("--dim", type=int, help="embedding dimension (default: 2, or 0 without an embedding)")
    o.add("--lr", 0.1, type=float, help="Adam learning rate")
    o.add("--iterations", 3000, type=int, help="Adam steps")
    o.add("--case-control-ratio", 5, type=int, help="controls per link for each target")
    o.add("--min-controls", 5, type=int, help="minimum controls per target")
    o.add("--exact", False, action="store_true", help="use the exact likelihood instead")
    o.add("--log-every", 100, type=int, help="trace and checkpoint interval")
    return o


_FIXED = {"disee": "fi-disee", "disee-pa": "fi-disee-pa"}


def _variant(cfg):
    from .model import ModelVariant
    name = cfg["model"]
    if cfg.get("fixed_impact") and name not in ("fi-disee", "fi-disee-pa"):
        if name not in _FIXED:
            raise UsageError(f"--fixed-impact applies to disee and disee-pa, not {name}")
        name = _FIXED[name]
    variant = ModelVariant(name)
    dim = cfg.get("dim")
    if dim is None:
        dim = 2 if variant.has_embedding else 0
    try:
        variant.check_dim(dim)
        kind = variant.impact_kind(ImpactKind(cfg["impact"]))
    except InvalidParams as exc:
        raise UsageError(str(exc)) from exc
    return variant, dim, kind


def cmd_fit(cfg):
    from .model import CaseControlConfig, save_checkpoint
    from .network import load_split
    from .optim import ModelConfig, TrainConfig, fit
    variant, dim, _ = _variant(cfg)
    cfg["model"], cfg["dim"], cfg["fixed_impact"] = variant.value, dim, variant.frozen_impact
    cfg["run_id"] = cfg["run_id"] or f"{variant.value}-D{dim}-s{cfg['seed']}"
    net = _load_net(cfg)
    exclude = None
    if cfg.get("split"):
        split = load_split(_need(cfg["split"], "split"), net)
        net, exclude = split.train_network, split.held_out
    family = ImpactKind(cfg["impact"])
    cc = None if cfg["exact"] else CaseControlConfig(
        ratio=cfg["case_control_ratio"], min_controls=cfg["min_controls"], seed=cfg["seed"] + 1)
    try:
        tcfg = TrainConfig(learning_rate=cfg["lr"], iterations=cfg["iterations"], seed=cfg["seed"],
                           case_control=cc, log_every=cfg["log_every"], threads=cfg["threads"])
    except InvalidParams as exc:
        raise UsageError(str(exc)) from exc
    mcfg = ModelConfig(dim=dim, family=family, n_components=cfg["components"])
    ckpt = _out(cfg, "checkpoint", "disee.json")
    write_resolved(_out(cfg, "fit-config", "toml"), "fit", cfg)

    def on_log(it, params):
        save_checkpoint(ckpt, params, variant, net)

    try:
        params, trace = fit(net, variant, tcfg, mcfg, exclude=exclude, on_log=on_log)
    except NumericalError as exc:
        if exc.params is not None:
            save_checkpoint(ckpt, exc.params, variant, net)
        raise
    save_checkpoint(ckpt, params, variant, net)
    trace.write_csv(_out(cfg, "trace", "csv"))
    print(f"{variant.value} D={dim}: nll {trace.nll[0]:.4f} -> {trace.nll[-1]:.4f}; {ckpt}")
    return EXIT_OK


# eval -------------------------------------------------------------------------

def _setup_eval(sub):
    p = sub.add_parser("eval", help="score held-out dyads with a trained model")
    o = _Options(p)
    _common(o, "output prefix (default: the checkpoint's run id)")
    o.add("--checkpoint", help="trained model file")
    o.add("--data", help="edge-list TSV")
    o.add("--nodes", help="node TSV")
    o.add("--split", help="split manifest")
    o.add("--truth", help="planted truth JSON, enables recovery statistics")
    o.add("--dataset", "", help="dataset label for the results table")
    o.add("--table", help="results CSV to append a row to")
    return o


def _check_ids(params_header, net):
    if params_header["target_ids"] != list(net.target_ids) or \
            params_header["source_ids"] != list(net.source_ids):
        raise UsageError("checkpoint nodes do not match the training network")


def cmd_eval(cfg):
    import csv

    from .generator import PlantedTruth
    from .metrics import append_csv, evaluate
    from .model import load_checkpoint
    from .network import load_split
    ckpt = _need(cfg.get("checkpoint"), "checkpoint")
    if cfg["run_id"] is None:
        cfg["run_id"] = ckpt.name.split(".")[0]
    params, variant, header = load_checkpoint(ckpt)
    net = _load_net(cfg)
    split = load_split(_need(cfg.get("split"), "split"), net)
    _check_ids(header, split.train_network)
    truth = None
    if cfg.get("truth"):
        truth = PlantedTruth.from_json(_need(cfg["truth"], "truth")).aligned_to(split.train_network)
    report = evaluate(split, params, variant, truth)
    report.write_json(_out(cfg, "report", "json"))
    line = f"{variant.value} D={params.dim}: AUC-PR {report.auc_pr:.4f} AUC-ROC {report.auc_roc:.4f}"
    if cfg.get("table"):
        append_csv(cfg["table"], [report.csv_row(cfg["dataset"])])
        with open(cfg["table"], newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.DictReader(fh) if r["model"] == variant.value
                    and r["D"] == str(params.dim) and r["dataset"] == cfg["dataset"]]
        pr = np.array([float(r["auc_pr"]) for r in rows])
        line += f" | mean AUC-PR over {len(rows)} runs {pr.mean():.4f}"
    print(line)
    return EXIT_OK


# plot -------------------------------------------------------------------------

def _setup_plot(sub):
    p = sub.add_parser("plot", help="impact curves or embedding snapshots as SVG and CSV")
    o = _Options(p)
    _common(o, "output prefix (default: the checkpoint's run id)")
    p.add_argument("mode", choices=["impact", "space"], help="figure type")
    o.add("--checkpoint", help="trained model file")
    o.add("--data", help="edge-list TSV of the training network")
    o.add("--nodes", help="node TSV")
    o.add("--split", help="split manifest used in training")
    o.add("--targets", nargs="+", help="target ids for impact mode (default: the 3 most cited)")
    o.add("--bin-width", 0.5, type=float, help="histogram bin width in years")
    o.add("--years", nargs="+", type=float, help="query years for space mode")
    return o


def cmd_plot(cfg, mode):
    from .model import load_checkpoint
    from .network import load_split
    from .plots import IMPACT_CSV_HEADER, SPACE_CSV_HEADER, impact_figure, space_figures, write_csv
    ckpt = _need(cfg.get("checkpoint"), "checkpoint")
    if cfg["run_id"] is None:
        cfg["run_id"] = ckpt.name.split(".")[0]
    params, variant, header = load_checkpoint(ckpt)
    net = _load_net(cfg)
    if cfg.get("split"):
        net = load_split(_need(cfg["split"], "split"), net).train_network
    _check_ids(header, net)
    if mode == "impact":
        if cfg.get("targets"):
            index = {t: k for k, t in enumerate(net.target_ids)}
            missing = [t for t in cfg["targets"] if t not in index]
            if missing:
                raise UsageError(f"unknown target ids: {', '.join(missing)}")
            picks = [index[t] for t in cfg["targets"]]
        else:
            picks = np.argsort(-net.in_degree(), kind="stable")[:3].tolist()
        rows = []
        for i in picks:
            svg, r = impact_figure(net, params, i, bin_width=cfg["bin_width"])
            _out(cfg, f"impact-{net.target_ids[i]}", "svg").write_text(svg, encoding="utf-8")
            rows += [(net.target_ids[i],) + row for row in r]
        write_csv(_out(cfg, "impact", "csv"), ["target"] + IMPACT_CSV_HEADER, rows)
    else:
        if params.dim != 2:
            raise UsageError(f"space plots need D = 2, checkpoint has D = {params.dim}")
        years = cfg.get("years")
        if not years:
            lo, hi = net.origin, net.origin + net.horizon
            years = np.linspace(lo + 0.25 * (hi - lo), hi, 4).round(3).tolist()
            cfg["years"] = years
        svgs, rows = space_figures(net, params, years)
        for y, svg in zip(years, svgs):
            _out(cfg, f"space-{y:g}", "svg").write_text(svg, encoding="utf-8")
        write_csv(_out(cfg, "space", "csv"), SPACE_CSV_HEADER, rows)
    print(f"wrote {mode} figures to {cfg['out_dir']}")
    return EXIT_OK


# export -----------------------------------------------------------------------

def _setup_export(sub):
    p = sub.add_parser("export", help="write fitted node parameters as CSV")
    o = _Options(p)
    _common(o, "output prefix (default: the checkpoint's run id)")
    o.add("--checkpoint", help="trained model file")
    return o


def cmd_export(cfg):
    import csv

    from .model import load_checkpoint
    ckpt = _need(cfg.get("checkpoint"), "checkpoint")
    if cfg["run_id"] is None:
        cfg["run_id"] = ckpt.name.split(".")[0]
    params, _, header = load_checkpoint(ckpt)
    D = params.dim
    path = _out(cfg, "embeddings", "csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["role", "id", "effect"] + [f"x{k + 1}" for k in range(D)]
                     + ["impact_mu", "impact_log_sigma"])
        imp = params.impact
        for i, tid in enumerate(header["target_ids"]):
            out.writerow(["target", tid, repr(float(params.alpha[i]))]
                         + [repr(float(v)) for v in params.z[i]]
                         + [repr(float(np.ravel(imp.mu)[i])), repr(float(np.ravel(imp.log_sigma)[i]))])
        for j, sid in enumerate(header["source_ids"]):
            out.writerow(["source", sid, repr(float(params.beta[j]))]
                         + [repr(float(v)) for v in params.w[j]] + ["", ""])
    print(f"wrote {path}")
    return EXIT_OK


# entry point ------------------------------------------------------------------

_COMMANDS = {
    "generate": (_setup_generate, cmd_generate),
    "ingest": (_setup_ingest, cmd_ingest),
    "split": (_setup_split, cmd_split),
    "fit": (_setup_fit, cmd_fit),
    "eval": (_setup_eval, cmd_eval),
    "plot": (_setup_plot, cmd_plot),
    "export": (_setup_export, cmd_export),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="disee", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    registry = {name: setup(sub) for name, (setup, _) in _COMMANDS.items()}
    return parser, registry


def main(argv=None):
    parser, registry = build_parser()
    args = parser.parse_args(argv)
    opts = registry[args.command]
    try:
        cfg = _resolve(args, opts)
        logging.basicConfig(level=cfg["log_level"].upper(), format="%(levelname)s %(name)s: %(message)s")
        run = _COMMANDS[args.command][1]
        code = run(cfg, args.mode) if args.command == "plot" else run(cfg)
        if args.command != "fit":
            write_resolved(_out(cfg, f"{args.command}-config", "toml"), args.command, cfg)
        return code
    except UsageError as exc:
        print(f"disee {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingArtifact as exc:
        print(f"disee {args.command}: missing: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NumericalError as exc:
        print(f"disee {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except UndefinedMetric as exc:
        print(f"disee {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidParams, ValueError) as exc:
        print(f"disee {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DiseeError, OSError) as exc:
        print(f"disee {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
