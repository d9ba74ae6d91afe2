"""``mvictr`` command line: prepare, train-rm, replay, report.

Every stage reads and writes inside ``--out-dir`` and embeds the resolved
configuration plus SHA-256 digests of its inputs in a JSON artifact, so any
stage repeated with the same configuration reproduces its outputs byte for
byte.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import dataset as ds
from .agents import AgentConfig, AgentFactory
from .config import ConfigError, resolve_config, sha256_file
from .ratingmatch import CountConsistencyError, NumericalError, RatingMatch
from .replayer import run_trials, welch_t_test

logger = logging.getLogger("mvictr")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_PARTIAL = 5

BASELINES = ("random", "icf", "ctr")


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _provenance(cfg, inputs) -> dict:
    return {"config": cfg.to_dict(), "inputs": {str(p.name): sha256_file(p) for p in inputs}}


def _require(*paths: Path):
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise FileNotFoundError("missing input file(s): " + ", ".join(missing))


# --- stages --------------------------------------------------------------------------

def cmd_prepare(cfg) -> dict:
    data_dir = Path(cfg.data_dir)
    raw = [data_dir / n for n in ("u.data", "u.item", "u.user")]
    _require(*raw)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    ml = ds.load_movielens(data_dir)
    pool = ds.top_items(ml.events, cfg.n_top_items)
    events = ds.filter_top_items(ml.events, cfg.n_top_items)
    train, test = ds.chronological_split(events, cfg.split_fraction)
    stats = ds.cold_start_stats(train, test)

    ds.write_events_csv(out / "events.csv", train, test)
    _dump(out / "schema.json", ml.schema.to_dict())
    _dump(out / "bundles.json", {"user": ds.bundles_to_dict(ml.users), "item": ds.bundles_to_dict(ml.items)})
    report = {
        "stats": stats.__dict__,
        "n_raw_events": len(ml.events),
        "n_filtered_events": len(events),
        "n_filtered_positive": sum(e.reward for e in events),
        "n_train_positive": sum(e.reward for e in train),
        "pool": pool,
        "outputs": {n: sha256_file(out / n) for n in ("events.csv", "schema.json", "bundles.json")},
        "provenance": _provenance(cfg, raw),
    }
    _dump(out / "prepare.json", report)
    print(f"events after top-{cfg.n_top_items} filter: {len(events)} "
          f"({report['n_filtered_positive']} positive)")
    print(f"train/test: {stats.n_train}/{stats.n_test}; "
          f"test cold-start fraction {stats.cold_start_fraction:.4f}")
    return report


def _load_prepared(out: Path):
    _require(out / "events.csv", out / "schema.json", out / "bundles.json", out / "prepare.json")
    train, test = ds.read_events_csv(out / "events.csv")
    schema = ds.FeatureSchema.from_dict(json.loads((out / "schema.json").read_text()))
    bundles = json.loads((out / "bundles.json").read_text())
    users = ds.bundles_from_dict(bundles["user"], "user")
    items = ds.bundles_from_dict(bundles["item"], "item")
    pool = json.loads((out / "prepare.json").read_text())["pool"]
    return train, test, schema, users, items, pool


def _write_trace(path: Path, model: RatingMatch) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    K = int(model.n_clusters)
    w.writerow(["iteration", "perplexity"])
    for it, p in model.perplexity_trace_:
        w.writerow([it, repr(p)])
    path.write_text(buf.getvalue())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration"] + [f"mass_{k}" for k in range(K)])
    for it, row in enumerate(model.cluster_trace_):
        w.writerow([it] + [repr(float(x)) for x in row])
    path.with_name(path.stem + "_clusters.csv").write_text(buf.getvalue())


def cmd_train_rm(cfg) -> dict:
    out = Path(cfg.out_dir)
    train, _, schema, users, items, _ = _load_prepared(out)
    positives = [(users[e.user_id], items[e.item_id]) for e in train if e.reward == 1]
    if not positives:
        raise ConfigError("the training split has no positive events")
    inputs = [out / "events.csv", out / "schema.json", out / "bundles.json"]
    runs = [("rm", ds.VIEWS)]
    if "ctr" in cfg.agent_list:
        runs.append(("lda", ("item",)))
    summary = {"provenance": _provenance(cfg, inputs), "models": {}}
    for name, views in runs:
        model = RatingMatch(schema=schema, n_clusters=cfg.n_clusters, alpha=cfg.alpha, beta=cfg.beta,
                            n_iter=cfg.iterations, views=views, perplexity_every=cfg.perplexity_every,
                            average_last=cfg.average_last, random_state=cfg.rm_seed)
        model.fit(positives)
        model.save(out / f"{name}_model.json")
        _write_trace(out / f"{name}_trace.csv", model)
        summary["models"][name] = {
            "views": list(views),
            "n_events": len(positives),
            "initial_perplexity": model.perplexity_trace_[0][1],
            "final_perplexity": model.perplexity_trace_[-1][1],
            "sha256": sha256_file(out / f"{name}_model.json"),
        }
        print(f"{name}: {len(positives)} events, {cfg.iterations} sweeps, perplexity "
              f"{model.perplexity_trace_[0][1]:.2f} -> {model.perplexity_trace_[-1][1]:.2f}")
    _dump(out / "train_rm.json", summary)
    return summary


def cmd_replay(cfg) -> dict:
    out = Path(cfg.out_dir)
    _, test, _, users, items, pool = _load_prepared(out)
    models, inputs = {}, [out / "events.csv", out / "bundles.json"]
    for kind, name in (("mvictr", "rm"), ("ctr", "lda")):
        if kind in cfg.agent_list:
            path = out / f"{name}_model.json"
            _require(path)
            models[name] = RatingMatch.load(path)
            inputs.append(path)

    traces = out / "traces"
    traces.mkdir(exist_ok=True)
    summaries = {}
    for kind in cfg.agent_list:
        factory = AgentFactory(AgentConfig(kind, cfg.factor_hyper(kind)), models.get("rm"), models.get("lda"))
        s = run_trials(test, factory, pool, cfg.n_trials, cfg.base_seed, users, items,
                       name=kind, n_jobs=cfg.threads)
        for t, r in enumerate(s.results):
            (traces / f"{kind}_trial{t:02d}.csv").write_text(r.trace_csv())
        summaries[kind] = s
        print(f"{kind:>7}: mean {s.mean:.4f} sd {s.sd:.4f} "
              f"impressions/trial {sum(s.impressions) / len(s.impressions):.1f}")

    pairwise = {}
    names = list(summaries)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            try:
                t, p = welch_t_test(summaries[a].averages, summaries[b].averages)
            except ValueError:
                continue
            pairwise[f"{a}|{b}"] = {"t": t, "p": p}
    result = {
        "format": "mvictr.summary",
        "agents": {k: s.to_dict() for k, s in summaries.items()},
        "pairwise": pairwise,
        "provenance": _provenance(cfg, inputs),
    }
    _dump(out / "summary.json", result)
    return result


def _pair_p(summary, a, b):
    for key in (f"{a}|{b}", f"{b}|{a}"):
        if key in summary["pairwise"]:
            return summary["pairwise"][key]["p"]
    return None


def cmd_report(results_dir) -> tuple[list[dict], int]:
    """Merge every summary JSON in ``results_dir`` into one ranked table."""
    root = Path(results_dir)
    files = sorted(root.glob("summary*.json")) if root.is_dir() else []
    if not files:
        raise FileNotFoundError(f"no summary*.json files in {root}")
    rows, code = [], EXIT_OK
    for path in files:
        try:
            summary = json.loads(path.read_text())
            if summary.get("format") != "mvictr.summary":
                raise ValueError("not an mvictr summary")
            agents = summary["agents"]
            baselines = [a for a in agents if a in BASELINES]
            best = max(baselines, key=lambda a: agents[a]["mean"]) if baselines else None
            for name, a in agents.items():
                p = _pair_p(summary, name, best) if best and name != best else None
                rows.append({"source": path.name, "agent": name, "mean": float(a["mean"]),
                             "sd": float(a["sd"]), "trials": len(a["averages"]),
                             "best_baseline": best, "p_vs_best_baseline": p})
        except (ValueError, KeyError, TypeError) as exc:
            logger.warning("skipping malformed summary %s: %s", path, exc)
            code = EXIT_PARTIAL
    rows.sort(key=lambda r: (-r["mean"], r["agent"], r["source"]))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["source", "agent", "mean", "sd", "trials", "best_baseline", "p_vs_best_baseline"]
    w.writerow(cols)
    for r in rows:
        w.writerow([r[c] if r[c] is not None else "" for c in cols])
    (root / "report.csv").write_text(buf.getvalue())

    lines = [f"{'agent':<8} {'mean':>7} {'sd':>7} {'trials':>6}  p vs best baseline"]
    for r in rows:
        p = "-" if r["p_vs_best_baseline"] is None else f"{r['p_vs_best_baseline']:.3g} ({r['best_baseline']})"
        lines.append(f"{r['agent']:<8} {r['mean']:>7.4f} {r['sd']:>7.4f} {r['trials']:>6}  {p}")
    text = "\n".join(lines) + "\n"
    (root / "report.txt").write_text(text)
    print(text, end="")
    return rows, code


# --- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvictr", description="MV-ICTR experiment driver")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="base seed for replay trials and RM training")
    common.add_argument("--trials", type=int, help="number of replay trials per agent")
    common.add_argument("--agents", help="comma-separated subset of random,icf,ctr,mvictr")
    common.add_argument("--out-dir", help="directory for every stage's artifacts")
    common.add_argument("--threads", type=int, help="worker processes for replay trials")
    common.add_argument("--data-dir", help="directory holding u.data, u.item, u.user")
    common.add_argument("--iterations", type=int, help="Gibbs sweeps for RatingMatch")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="parse, filter and split MovieLens 100K")
    sub.add_parser("train-rm", parents=[common], help="train RatingMatch (and the CTR item topic model)")
    sub.add_parser("replay", parents=[common], help="run the offline replayer for every agent")
    rep = sub.add_parser("report", parents=[common], help="tabulate summary JSON files")
    rep.add_argument("results_dir", nargs="?", help="defaults to --out-dir")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"n_trials": args.trials, "agents": args.agents, "out_dir": args.out_dir,
                 "threads": args.threads, "data_dir": args.data_dir, "iterations": args.iterations}
    if args.seed is not None:
        overrides["base_seed"] = args.seed
        overrides["rm_seed"] = args.seed
    try:
        cfg = resolve_config(args.config, overrides)
        if args.command == "prepare":
            cmd_prepare(cfg)
        elif args.command == "train-rm":
            cmd_train_rm(cfg)
        elif args.command == "replay":
            cmd_replay(cfg)
        else:
            _, code = cmd_report(args.results_dir or cfg.out_dir)
            return code
    except (ConfigError, ds.SchemaError) as exc:
        print(f"mvictr: invalid configuration or data: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FileNotFoundError, ds.DataFormatError, OSError) as exc:
        print(f"mvictr: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, CountConsistencyError, FloatingPointError) as exc:
        print(f"mvictr: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
