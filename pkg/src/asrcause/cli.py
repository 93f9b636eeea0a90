"""Command-line pipeline: discretize, discover, quantify, align, simulate.

Exit codes: 0 success, 2 usage error, 3 data error, 4 config error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

from . import fileio
from .citest import TESTS, CiTestConfig
from .discovery import ALGORITHMS, DiscoveryConfig, discover
from .features import (
    AsrFeatureExtractor,
    FeatureConfig,
    FeatureError,
    align_wer,
    bin_outcomes,
)
from .graph import GraphError, MixedGraph, to_dot
from .quantify import CONTRASTS, InferenceError, ace_report, fit, orient_rest
from .scm import ScmError, ScmSpec, emit_records, fixture_path, forward_sample, observed

logger = logging.getLogger("asrcause")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONFIG = 0, 2, 3, 4

DEFAULTS = {
    "seed": None,
    "ci": {"test": "g2", "alpha": 0.05, "min_samples_per_df": 10.0},
    "discovery": {"algorithm": "pc", "max_cond_set": 3},
    "features": {
        "min_records": 30,
        "age_bins": None,
        "age_labels": None,
        "numwords_bins": 4,
        "outcome_bins": 4,
        "gop_log": False,
        "max_drop_fraction": 0.5,
        "breakpoints": None,
    },
    "quantify": {
        "contrast": "extreme",
        "populate": "edge",
        "smoothing": 1.0,
        "units": None,
        "model": None,
        "dag_source": None,
    },
}


class ConfigError(ValueError):
    pass


def load_config(path=None) -> dict:
    """Defaults overlaid with a JSON config file; unknown keys are rejected."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is None:
        return cfg
    try:
        with open(path, encoding="utf-8") as fh:
            user = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    for key, val in user.items():
        if key not in cfg:
            raise ConfigError(f"unknown config section {key!r}")
        if isinstance(cfg[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            unknown = sorted(set(val) - set(cfg[key]))
            if unknown:
                raise ConfigError(f"unknown keys in {key!r}: {unknown}")
            cfg[key].update(val)
        else:
            cfg[key] = val
    return cfg


def _apply_flags(cfg: dict, args) -> dict:
    pairs = [
        ("alpha", "ci", "alpha"),
        ("test", "ci", "test"),
        ("algorithm", "discovery", "algorithm"),
        ("max_cond_set", "discovery", "max_cond_set"),
        ("contrast", "quantify", "contrast"),
        ("populate", "quantify", "populate"),
        ("units", "quantify", "units"),
        ("model", "quantify", "model"),
        ("dag_source", "quantify", "dag_source"),
    ]
    for attr, section, key in pairs:
        val = getattr(args, attr, None)
        if val is not None:
            cfg[section][key] = val
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def _ci_config(cfg) -> CiTestConfig:
    try:
        return CiTestConfig(**cfg["ci"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"ci: {exc}") from None


def _feature_config(cfg) -> tuple[FeatureConfig, dict | None]:
    f = dict(cfg["features"])
    bps = f.pop("breakpoints")
    for key in ("age_bins", "age_labels"):
        if f[key] is not None:
            f[key] = tuple(f[key])
    try:
        return FeatureConfig(**f), bps
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"features: {exc}") from None


def _prov(cmd, cfg, args, **extra):
    inputs = {}
    paths = [(n, getattr(args, n, None)) for n in ("records", "lexicon", "phones", "data", "oracle", "spec")]
    paths += [(f"dag:{Path(d).name}", d) for d in getattr(args, "dag", None) or ()]
    for name, val in paths:
        if isinstance(val, str) and Path(val).is_file():
            inputs[name] = {"file": Path(val).name, "sha256": fileio.file_digest(val)}
        elif isinstance(val, str):
            inputs[name] = val
    return fileio.provenance(cmd, {"config": cfg, "inputs": inputs, **extra}, cfg.get("seed"), inputs=inputs, **extra)


def _load_dag(path) -> tuple[MixedGraph, str]:
    """Graph JSON or SCM spec JSON; returns the graph and a default source tag."""
    obj = fileio.read_json(path)
    nodes = obj.get("nodes") if isinstance(obj, dict) else None
    if nodes and isinstance(nodes[0], dict):
        return ScmSpec.from_json(obj).dag, "hardcoded"
    g = MixedGraph.from_json(obj)
    cmd = (obj.get("provenance") or {}).get("command", "")
    return g, "data-driven" if cmd.startswith("discover") else "hardcoded"


def _resolve_spec(value) -> ScmSpec:
    p = Path(value)
    if not p.exists() and not p.suffix:
        p = fixture_path(value)
    if not p.exists():
        raise FileNotFoundError(value)
    return ScmSpec.from_json(fileio.read_json(p))


# commands

def cmd_discretize(args, cfg) -> int:
    fcfg, bps = _feature_config(cfg)
    records = fileio.read_records(args.records, args.phones)
    lex = fileio.read_lexicon(args.lexicon)
    ext = AsrFeatureExtractor(
        lexicon=lex,
        min_records=fcfg.min_records,
        age_bins=fcfg.age_bins,
        age_labels=fcfg.age_labels,
        numwords_bins=fcfg.numwords_bins,
        outcome_bins=fcfg.outcome_bins,
        gop_log=fcfg.gop_log,
        max_drop_fraction=fcfg.max_drop_fraction,
        breakpoints=bps,
    )
    data = ext.fit_transform(records)
    prov = _prov("discretize", cfg, args)
    out = Path(args.out)
    units = cfg["quantify"]["units"] or "errors per utterance (word count)"
    extra = {"dropped": ext.dropped_, "n_records": len(records), "units": units, "utt_ids": ext.utt_ids_}
    csv_path, _ = fileio.write_dataset(out / "discrete.csv", data, ext.breakpoints_, prov, extra)
    print(f"wrote {csv_path} ({data.n_rows} rows, {sum(ext.dropped_.values())} dropped)")
    return EXIT_OK


def cmd_discover(args, cfg) -> int:
    ci = _ci_config(cfg)
    oracle = _load_dag(args.oracle)[0] if args.oracle else None
    data = fileio.read_dataset(args.data) if args.data else None
    if data is None and oracle is None:
        raise ConfigError("discover needs --data or --oracle")
    algos = ALGORITHMS if cfg["discovery"]["algorithm"] == "both" else (cfg["discovery"]["algorithm"],)
    out = Path(args.out)
    for algo in algos:
        try:
            dcfg = DiscoveryConfig(algo, ci, cfg["discovery"]["max_cond_set"], oracle, args.jobs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"discovery: {exc}") from None
        res = discover(data, dcfg)
        ci_label = {**cfg["ci"], "toolkit_defaults": cfg["ci"] == DEFAULTS["ci"], "oracle": oracle is not None}
        prov = _prov(f"discover {algo}", cfg, args, ci=ci_label)
        fileio.write_json(out / f"{algo}.json", {**res.graph.to_json(), "sepsets": res.sepsets.to_json()}, prov)
        comment = "\n".join(ln[2:] for ln in fileio.header_lines(prov))
        fileio.write_text(out / f"{algo}.dot", to_dot(res.graph, comment=comment))
        fileio.write_jsonl(out / f"{algo}.log.jsonl", res.log, prov)
        print(f"{algo}: {len(res.graph.edges)} edges -> {out / (algo + '.dot')}")
    return EXIT_OK


def cmd_quantify(args, cfg) -> int:
    q = cfg["quantify"]
    if q["contrast"] not in CONTRASTS:
        raise ConfigError(f"unknown contrast policy {q['contrast']!r}")
    if q["populate"] not in ("edge", "path"):
        raise ConfigError(f"populate must be 'edge' or 'path', got {q['populate']!r}")
    data = fileio.read_dataset(args.data)
    side = fileio.sidecar_path(args.data)
    meta_units = fileio.read_json(side).get("units") if side.exists() else None
    out = Path(args.out)
    for dag_path in args.dag:
        dag, source = _load_dag(dag_path)
        if not dag.is_fully_directed():
            if not args.orient_rest:
                raise GraphError(
                    f"{dag_path}: graph is not fully directed; resolve the orientation or pass --orient-rest"
                )
            events: list = []
            dag = orient_rest(dag, events)
            for e in events:
                if e.get("rule") == "extension":
                    logger.warning("--orient-rest: oriented %s -> %s", e["x"], e["y"])
        missing = [n for n in dag.nodes if n not in data and f"{n}_value" not in data]
        if missing:
            raise fileio.DataError(f"{dag_path}: DAG nodes {missing} are not dataset variables")
        net = fit(data, dag, q["smoothing"])
        meta = {
            "model": q["model"] or "unspecified",
            "dag_source": q["dag_source"] or source,
            "dag": Path(dag_path).name,
            "units": q["units"] or meta_units or "unspecified",
        }
        report = ace_report(net, contrast_policy=q["contrast"], populate=q["populate"], metadata=meta)
        stem = Path(dag_path).stem
        prov = _prov("quantify", cfg, args, dag=Path(dag_path).name)
        fileio.write_json(out / f"ace_{stem}.json", report.to_json(), prov)
        table = "\n".join(fileio.header_lines(prov)) + "\n" + report.to_table()
        fileio.write_text(out / f"ace_{stem}.txt", table)
        print(report.to_table(), end="")
    return EXIT_OK


def cmd_align(args, cfg) -> int:
    records = fileio.read_records(args.records)
    rows = [["utt_id", "ref_words", "hyp_words", "subs", "dels", "ins", "matches", "wer"]]
    tot = [0, 0, 0, 0, 0, 0]
    for r in records:
        if not r.ref:
            raise fileio.DataError(f"{args.records}: utterance {r.utt_id!r} has an empty reference")
        a = align_wer(r.ref, r.hyp)
        vals = [len(r.ref), len(r.hyp), a.subs, a.dels, a.ins, a.matches]
        tot = [t + v for t, v in zip(tot, vals)]
        rows.append([r.utt_id, *vals, repr(a.wer)])
    corpus_wer = (tot[2] + tot[3] + tot[4]) / tot[0]
    rows.append(["TOTAL", *tot, repr(corpus_wer)])
    prov = _prov("align", cfg, args)
    path = fileio.write_text(Path(args.out) / "alignment.csv", fileio._csv_text(rows, prov))
    print(f"wrote {path} ({len(records)} utterances, WER {corpus_wer:.4f})")
    return EXIT_OK


def cmd_simulate(args, cfg) -> int:
    spec = _resolve_spec(args.spec)
    seed = cfg["seed"] if cfg["seed"] is not None else spec.seed
    cfg["seed"] = seed
    sample = forward_sample(spec, args.n, seed, n_jobs=args.jobs)
    data, bps = bin_outcomes(observed(spec, sample), cfg["features"]["outcome_bins"])
    out = Path(args.out)
    prov = _prov("simulate", cfg, args, spec_name=spec.name, n=args.n)
    units = cfg["quantify"]["units"] or "simulated outcome units"
    fileio.write_dataset(out / "discrete.csv", data, bps, prov, {"units": units})
    if args.records:
        corpus = emit_records(spec, sample, seed)
        fileio.write_records(out / "records.csv", corpus.records, prov)
        fileio.write_lexicon(out / "lexicon.tsv", corpus.lexicon)
        feats = {
            "features": {
                "age_bins": list(corpus.age_bins),
                "age_labels": list(corpus.age_labels),
                "breakpoints": corpus.breakpoints,
            }
        }
        fileio.write_text(out / "features.json", json.dumps(feats, indent=2) + "\n")
    print(f"wrote {out / 'discrete.csv'} ({args.n} rows, seed {seed})")
    return EXIT_OK


# argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, default=1, help="worker threads (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="asrcause", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("discretize", parents=[common], help="records CSV -> discrete dataset CSV")
    s.add_argument("--records", required=True)
    s.add_argument("--lexicon", required=True)
    s.add_argument("--phones", help="per-phone GoP sidecar (utt_id<TAB>ratios)")
    s.set_defaults(func=cmd_discretize)

    s = sub.add_parser("discover", parents=[common], help="PC / FCI structure search")
    s.add_argument("--data", help="discrete dataset CSV")
    s.add_argument("--algorithm", choices=(*ALGORITHMS, "both"))
    s.add_argument("--test", choices=TESTS)
    s.add_argument("--alpha", type=float)
    s.add_argument("--max-cond-set", type=int, dest="max_cond_set")
    s.add_argument("--oracle", help="DAG (graph or SCM JSON) used as a d-separation oracle")
    s.set_defaults(func=cmd_discover)

    s = sub.add_parser("quantify", parents=[common], help="average causal effects on a DAG")
    s.add_argument("--data", required=True)
    s.add_argument("--dag", required=True, action="append", help="graph or SCM JSON; repeatable")
    s.add_argument("--contrast", choices=CONTRASTS)
    s.add_argument("--populate", choices=("edge", "path"))
    s.add_argument("--orient-rest", action="store_true", dest="orient_rest")
    s.add_argument("--dag-source", choices=("hardcoded", "data-driven"), dest="dag_source")
    s.add_argument("--model", help="model tag recorded in the report")
    s.add_argument("--units", help="outcome units recorded in the report")
    s.set_defaults(func=cmd_quantify)

    s = sub.add_parser("align", parents=[common], help="per-utterance substitution/deletion/insertion counts")
    s.add_argument("--records", required=True)
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("simulate", parents=[common], help="sample a dataset from an SCM spec")
    s.add_argument("--spec", default="asr_errors", help="SCM JSON path or shipped fixture name")
    s.add_argument("-n", type=int, required=True, help="number of rows")
    s.add_argument("--records", action="store_true", help="also write raw records, lexicon and bins")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    if args.jobs < 1:
        print("asrcause: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if getattr(args, "n", 1) < 1:
        print("asrcause: error: -n must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _apply_flags(load_config(args.config), args)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"asrcause: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"asrcause: data error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_DATA
    except (fileio.DataError, FeatureError, ScmError, GraphError, InferenceError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"asrcause: data error: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
