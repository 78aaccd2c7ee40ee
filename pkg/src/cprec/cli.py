"""Command-line pipeline: ``split``, ``synth``, ``train``, ``eval``, ``report``.

Configuration is a JSON document of flat sections, e.g.::

    {"data": {"dataset": "ratings.tsv"}, "train": {"loss": "cpr", "lr": 0.001}}

Every key can also be given as a flag (``--lr 0.01``, ``--k-values 2,3``);
flags beat file values, which beat built-in defaults.
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as data_mod
from .errors import BadFileFormat, CprError, MissingRequired, TypeMismatch, UnknownKey
from .evaluation import distribution_table, evaluate, recommend, truth_agreement
from .model import load_checkpoint, save_checkpoint
from .rng import substream
from .synthworld import generate_world, load_world, sample_interactions, save_world
from .trainer import TrainConfig, train

log = logging.getLogger("cprec")

EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 2, 3, 4


@dataclass(frozen=True)
class Key:
    section: str
    type: type
    default: object
    help: str
    nullable: bool = False
    is_list: bool = False


KEYS = {
    # data
    "dataset": Key("data", str, None, "raw interaction file for `split`", nullable=True),
    "sep": Key("data", str, "auto", "field separator: tab, comma or auto"),
    "core": Key("data", int, 0, "k-core pre-filter applied before splitting (0 = off)"),
    "split_dir": Key("data", str, None, "directory holding train/valid/test files (default: --out)", nullable=True),
    "world": Key("data", str, None, "synthetic world file; adds ground-truth agreement to `eval`", nullable=True),
    # split
    "ratios": Key("split", float, [0.7, 0.1, 0.2], "train,valid,test fractions", is_list=True),
    "cap_a": Key("split", float, 1 / 60, "upper limit on per-item held-out sampling weight"),
    "resample_theta": Key("split", float, None, "degree exponent for biased train resampling", nullable=True),
    "resample_fraction": Key("split", float, 0.7, "fraction of train kept by biased resampling"),
    # synth
    "n_users": Key("synth", int, 300, "synthetic users"),
    "n_items": Key("synth", int, 200, "synthetic items"),
    "latent_rank": Key("synth", int, 16, "rank of the true relevance model"),
    "propensity_skew": Key("synth", float, 1.0, "Zipf exponent of item propensities"),
    "alpha": Key("synth", float, 0.5, "relevance exponent in the exposure model"),
    "max_item_propensity": Key("synth", float, 0.5, "propensity of the most exposed item"),
    "user_propensity_range": Key("synth", float, [0.2, 0.8], "uniform range of user propensities", is_list=True),
    # train
    "loss": Key("train", str, "cpr", "bpr | bce | cpr | relmf | ubpr"),
    "dim": Key("train", int, 128, "embedding size"),
    "lr": Key("train", float, 1e-3, "Adam learning rate"),
    "l2": Key("train", float, 1e-5, "L2 coefficient on touched rows"),
    "batch_size": Key("train", int, 1024, "samples per batch"),
    "epochs_max": Key("train", int, 200, "epoch budget"),
    "patience": Key("train", int, 10, "non-improving evaluations before stopping"),
    "eval_every": Key("train", int, 1, "epochs between validation runs"),
    "init_scale": Key("train", float, 0.01, "std of initial embeddings"),
    "neg_ratio": Key("train", int, 1, "negatives per positive for bce/relmf"),
    "eta": Key("train", float, 0.5, "propensity power for relmf/ubpr"),
    "clip_floor": Key("train", float, 0.01, "propensity clip floor for relmf/ubpr"),
    # sampler
    "beta": Key("sampler", float, 1.0, "dynamic sampling rate (1 = random CPR sampling)"),
    "gamma": Key("sampler", float, 2.0, "choosing rate"),
    "k_values": Key("sampler", int, [2, 3], "CPR sample sizes", is_list=True),
    "k_mix_ratio": Key("sampler", float, [3.0, 1.0], "draw weights per k value", is_list=True),
    # eval
    "K": Key("eval", int, 20, "cut-off for top-K metrics"),
    "n_groups": Key("eval", int, 4, "item degree groups for the distribution table"),
    "checkpoint": Key("eval", str, None, "model file for `eval` (default: <out>/model.cprm)", nullable=True),
    "metrics_files": Key("eval", str, [], "metrics JSON files aggregated by `report`", is_list=True),
    # run
    "seed": Key("run", int, 0, "global seed"),
    "seeds": Key("run", int, [], "run train/eval once per seed into <out>/seed-<s>", is_list=True),
    "threads": Key("run", int, 1, "worker threads, 0 = all cores; never changes results"),
    "out": Key("run", str, "out", "output directory"),
}
SECTIONS = sorted({k.section for k in KEYS.values()})


def _coerce(name: str, value, key: Key, from_cli: bool):
    def one(v):
        if key.type is float:
            if isinstance(v, bool):
                raise TypeMismatch(f"{name}: expected a number, got {v!r}")
            if from_cli and isinstance(v, str):
                try:
                    return float(v)
                except ValueError:
                    raise TypeMismatch(f"{name}: expected a number, got {v!r}") from None
            if not isinstance(v, (int, float)):
                raise TypeMismatch(f"{name}: expected a number, got {v!r}")
            return float(v)
        if key.type is int:
            if from_cli and isinstance(v, str):
                try:
                    return int(v)
                except ValueError:
                    raise TypeMismatch(f"{name}: expected an integer, got {v!r}") from None
            if isinstance(v, bool) or not isinstance(v, int):
                raise TypeMismatch(f"{name}: expected an integer, got {v!r}")
            return v
        if not isinstance(v, str):
            raise TypeMismatch(f"{name}: expected a string, got {v!r}")
        return v

    if value is None or (from_cli and isinstance(value, str) and value.lower() in ("none", "null")
                         and key.nullable):
        if key.nullable:
            return None
        raise TypeMismatch(f"{name}: may not be null")
    if key.is_list:
        if from_cli and isinstance(value, str):
            value = [p for p in value.split(",") if p != ""]
        if not isinstance(value, list):
            raise TypeMismatch(f"{name}: expected a list, got {value!r}")
        return [one(v) for v in value]
    return one(value)


def parse_config(path=None, overrides: dict | None = None) -> dict:
    """Resolve the run configuration: CLI override > file value > default.

    Returns a flat ``{key: value}`` mapping. Unknown keys or sections raise
    :class:`UnknownKey`; wrongly typed values raise :class:`TypeMismatch`.
    """
    cfg = {name: (list(k.default) if isinstance(k.default, list) else k.default) for name, k in KEYS.items()}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise TypeMismatch(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise TypeMismatch(f"{path}: top level must be an object of sections")
        for section, body in doc.items():
            if section not in SECTIONS:
                raise UnknownKey(section)
            if not isinstance(body, dict):
                raise TypeMismatch(f"section {section!r} must be an object")
            for name, value in body.items():
                key = KEYS.get(name)
                if key is None or key.section != section:
                    raise UnknownKey(name)
                cfg[name] = _coerce(name, value, key, from_cli=False)
    for name, value in (overrides or {}).items():
        if name not in KEYS:
            raise UnknownKey(name)
        cfg[name] = _coerce(name, value, KEYS[name], from_cli=True)
    return cfg


def sectioned(cfg: dict) -> dict:
    out = {s: {} for s in SECTIONS}
    for name, key in KEYS.items():
        out[key.section][name] = cfg[name]
    return out


def _write_config(cfg: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(sectioned(cfg), indent=2, sort_keys=True) + "\n")


def _threads(cfg) -> int:
    return cfg["threads"] or (os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# commands

def cmd_split(cfg: dict) -> int:
    if not cfg["dataset"]:
        raise MissingRequired("`split` needs a dataset path (data.dataset / --dataset)")
    out = Path(cfg["out"])
    ds = data_mod.load_interactions(cfg["dataset"], cfg["sep"])
    if cfg["core"] > 0:
        ds = data_mod.core_filter(ds, cfg["core"])
    split_cfg = data_mod.SplitConfig(tuple(cfg["ratios"]), cfg["cap_a"], cfg["resample_theta"],
                                     cfg["resample_fraction"], cfg["seed"])
    tr, va, te = data_mod.unbiased_split(ds, split_cfg, substream(cfg["seed"], "split"))
    if cfg["resample_theta"] is not None:
        tr = data_mod.degree_biased_resample(tr, cfg["resample_theta"], cfg["resample_fraction"],
                                             substream(cfg["seed"], "resample"))
    _write_config(cfg, out)
    for name, part in (("train", tr), ("valid", va), ("test", te)):
        data_mod.write_interactions(part, out / f"{name}.tsv")
    data_mod.write_index_map(ds.user_ids, out / "users.tsv")
    data_mod.write_index_map(ds.item_ids, out / "items.tsv")
    log.info("split %d positives into %d/%d/%d", len(ds), len(tr), len(va), len(te))
    return 0


def cmd_synth(cfg: dict) -> int:
    out = Path(cfg["out"])
    world = generate_world(cfg["n_users"], cfg["n_items"], cfg["latent_rank"], cfg["propensity_skew"],
                           cfg["alpha"], cfg["seed"], cfg["max_item_propensity"],
                           tuple(cfg["user_propensity_range"]))
    ds = sample_interactions(world, substream(cfg["seed"], "synth-sample"))
    _write_config(cfg, out)
    save_world(world, out / "world.cprw")
    data_mod.write_interactions(ds, out / "interactions.tsv")
    log.info("synthetic world %dx%d, %d interactions", world.n_users, world.n_items, len(ds))
    return 0


def load_splits(split_dir):
    split_dir = Path(split_dir)
    users = data_mod.read_index_map(split_dir / "users.tsv")
    items = data_mod.read_index_map(split_dir / "items.tsv")
    return tuple(data_mod.load_interactions(split_dir / f"{name}.tsv", "tab", users, items)
                 for name in ("train", "valid", "test"))


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        loss=cfg["loss"], dim=cfg["dim"], lr=cfg["lr"], l2=cfg["l2"], batch_size=cfg["batch_size"],
        beta=cfg["beta"], gamma=cfg["gamma"], k_values=tuple(cfg["k_values"]),
        k_mix_ratio=tuple(cfg["k_mix_ratio"]), neg_ratio=cfg["neg_ratio"], eta=cfg["eta"],
        clip_floor=cfg["clip_floor"], init_scale=cfg["init_scale"], epochs_max=cfg["epochs_max"],
        patience=cfg["patience"], eval_K=cfg["K"], eval_every=cfg["eval_every"], seed=seed,
        threads=_threads(cfg),
    )


def _per_seed(cfg: dict):
    out = Path(cfg["out"])
    if not cfg["seeds"]:
        yield cfg["seed"], out
    else:
        for s in cfg["seeds"]:
            yield s, out / f"seed-{s}"


def cmd_train(cfg: dict) -> int:
    tr, va, _ = load_splits(cfg["split_dir"] or cfg["out"])
    for seed, out in _per_seed(cfg):
        model, history = train(tr, va, _train_config(cfg, seed))
        _write_config(dict(cfg, seed=seed), out)
        save_checkpoint(model, out / "model.cprm")
        history.write_csv(out / "epochs.csv")
        summary = {"best_epoch": history.best_epoch, "best_valid_recall": history.best_recall,
                   "epochs_run": len(history.records), "optimizer_steps": history.steps,
                   "sampler_shortfalls": history.sampler.shortfalls}
        (out / "train_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        log.info("seed %d: best epoch %s, valid recall %s", seed, history.best_epoch, history.best_recall)
    return 0


def _world_indices(ids, prefix: str, n: int) -> np.ndarray:
    """World index of each dataset id; synthetic ids are ``u<k>`` / ``i<k>``."""
    out = []
    for ext in ids:
        if not (ext.startswith(prefix) and ext[1:].isdigit() and int(ext[1:]) < n):
            raise BadFileFormat(f"id {ext!r} does not belong to the synthetic world")
        out.append(int(ext[1:]))
    return np.array(out, dtype=np.int64)


def cmd_eval(cfg: dict) -> int:
    tr, va, te = load_splits(cfg["split_dir"] or cfg["out"])
    world = load_world(cfg["world"]) if cfg["world"] else None
    if world is not None:
        world_maps = (_world_indices(tr.user_ids, "u", world.n_users), _world_indices(tr.item_ids, "i", world.n_items))
    threads = _threads(cfg)
    for seed, out in _per_seed(cfg):
        ckpt = cfg["checkpoint"] if (cfg["checkpoint"] and not cfg["seeds"]) else out / "model.cprm"
        model = load_checkpoint(ckpt)
        rep = evaluate(model, te, [tr, va], cfg["K"], train_degrees=tr.item_degrees,
                       n_groups=cfg["n_groups"], threads=threads)
        if world is not None:
            rep.extras.update(truth_agreement(model, world, cfg["K"], None, *world_maps))
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(rep.to_json())
        users = np.flatnonzero(te.user_degrees > 0)
        recs = recommend(model, users, cfg["K"], [tr, va], threads)
        n_groups = min(cfg["n_groups"], te.n_items)
        rows = distribution_table(recs, tr.item_degrees, te.item_degrees, n_groups)
        with open(out / "distribution.csv", "w", encoding="utf-8") as fh:
            fh.write("group,frac_train_degrees,frac_test,frac_recommended\n")
            for g, a, b, c in rows:
                fh.write(f"{g},{a:.6g},{b:.6g},{c:.6g}\n")
    return 0


def aggregate_reports(paths) -> dict:
    """Mean and population std of every numeric metric across metrics files."""
    docs = []
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            docs.append(json.load(fh))
    if not docs:
        raise MissingRequired("`report` needs at least one metrics file")
    out = {"n_runs": len(docs), "files": [os.fspath(p) for p in paths], "metrics": {}}
    names = sorted({k for d in docs for k, v in d.items()
                    if isinstance(v, (int, float)) and not isinstance(v, bool)})
    for name in names:
        vals = [d.get(name) for d in docs]
        vals = [float(v) for v in vals if isinstance(v, (int, float)) and not isinstance(v, bool)]
        if not vals:
            continue
        mean = math.fsum(vals) / len(vals)
        std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / len(vals))
        out["metrics"][name] = {"mean": mean, "std": std, "n": len(vals)}
    return out


def cmd_report(cfg: dict, files=()) -> int:
    paths = list(files) or list(cfg["metrics_files"])
    if not paths:
        paths = sorted(glob.glob(os.path.join(cfg["out"], "seed-*", "metrics.json")))
    rep = aggregate_reports(paths)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    return 0


COMMANDS = {"split": cmd_split, "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cprec", description=__doc__.split("\n")[0],
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("files", nargs="*", help="metrics files (report only)")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("-v", "--verbose", action="store_true")
    for section in SECTIONS:
        group = parser.add_argument_group(section)
        for name, key in KEYS.items():
            if key.section != section:
                continue
            default = ",".join(map(str, key.default)) if key.is_list else key.default
            group.add_argument("--" + name.replace("_", "-"), dest=name, default=argparse.SUPPRESS,
                               metavar=key.type.__name__.upper() + ("S" if key.is_list else ""),
                               help=f"{key.help} (default: {default})")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_intermixed_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k in KEYS}
    try:
        from threadpoolctl import threadpool_limits

        cfg = parse_config(args.config, overrides)
        log.info("resolved config: %s", json.dumps(sectioned(cfg), sort_keys=True))
        with threadpool_limits(limits=1):
            if args.command == "report":
                return cmd_report(cfg, args.files)
            if args.files:
                raise TypeMismatch(f"`{args.command}` takes no positional files")
            return COMMANDS[args.command](cfg)
    except CprError as exc:
        print(f"cprec {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"cprec {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, FloatingPointError) as exc:
        print(f"cprec {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
