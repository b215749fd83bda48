"""Command-line entry point: ``uaclip <subcommand> ...``.

Every declared failure prints one ``error:<code>: <message>`` line on stderr
and exits with that error's status code.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import plotting
from .analysis import bound_check, corpus_mean_fill, load_joint, occlusion_heatmap
from .contrastive import Batch, TrainConfig, UtilityConfig, train
from .datagen import SynthSpec, write_dataset
from .demand import (
    ORIENTATIONS,
    DemandModel,
    demand_score,
    fit_demand,
    load_schema,
    observations_from_rows,
    read_csv_rows,
    spec_from_schema,
)
from .encoder import EncoderDims, EncoderParams, encode_image, encode_text, featurize_image, featurize_text, init_params
from .errors import IOFailure, InvalidConfig, MissingField, UaclipError
from .imaging import ATTRIBUTE_NAMES, fit_scaler, load_image, raw_attributes
from .scoring import build_candidates, image_attributes, rank_candidates, retrieval_metrics, utility_h

log = logging.getLogger("uaclip")


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path}: invalid JSON ({exc})") from exc


def _write_json(path, obj):
    try:
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=2)
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


def _out(args, name):
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def read_manifest(path, need=("id", "image_path")):
    """Rows of a manifest CSV with ``image_path`` resolved against its folder."""
    rows = read_csv_rows(path)
    base = os.path.dirname(os.path.abspath(path))
    for row in rows:
        for key in need:
            if key not in row or row[key] in (None, ""):
                raise MissingField(f"manifest {path} row lacks {key!r}")
        row["image_path"] = os.path.join(base, row["image_path"])
    return rows


def _utility_config(args):
    return UtilityConfig(alpha_v=args.alpha, beta_s=args.beta, tau=args.tau, eta=args.eta)


def _corpus_utilities(rows, images, params, model, eta):
    """Demand score and h for each manifest row (manifest ``h`` if no model)."""
    if model is None:
        h = [float(r["h"]) for r in rows]
        return h, [x / eta if eta else x for x in h], None
    embeddings = None
    if "uniqueness" in model.attributes:
        embeddings = [encode_image(params, featurize_image(img, params.dims.G)) for img in images]
    attrs = [image_attributes(img, model, params, embeddings) for img in images]
    demand = [demand_score(model, a) for a in attrs]
    h = [utility_h(model, a, eta) for a in attrs]
    return h, demand, attrs


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_synth(args):
    obj = _read_json(args.spec)
    if args.seed is not None:
        obj["seed"] = args.seed
    summary = write_dataset(SynthSpec.from_json(obj), args.out_dir)
    errs = ", ".join(f"{k}={v:.4f}" for k, v in sorted(summary["max_target_error"].items()))
    print(f"generated {summary['n']} items in {args.out_dir}; max target error: {errs}")
    return 0


def cmd_extract(args):
    rows = read_manifest(args.manifest)
    raws = []
    with open(_out(args, "attributes.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *ATTRIBUTE_NAMES])
        for row in rows:
            raw = raw_attributes(load_image(row["image_path"]))
            raws.append(raw)
            w.writerow([row["id"], *[repr(v) for v in raw.as_dict().values()]])
    fit_scaler(raws).save(_out(args, "scaler.json"))
    print(f"extracted attributes for {len(rows)} images")
    return 0


def cmd_fit_demand(args):
    schema = load_schema(args.schema)
    rows = read_csv_rows(args.observations)
    obs, scaler = observations_from_rows(rows, schema)
    model = fit_demand(obs, spec_from_schema(schema), args.orientation, scaler)
    model.save(_out(args, "model.json"))
    with open(_out(args, "coefficients.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["column", "coefficient", "std_error"])
        for name, b, se in zip(model.columns, model.coefficients, model.standard_errors):
            w.writerow([name, repr(b), repr(se)])
    if not args.no_figures:
        plotting.plot_demand_curves(model, _out(args, "demand_curves.png"))
    print(f"fitted {len(model.columns)} coefficients on {model.n_obs} observations, R^2 = {model.r2:.4f}")
    return 0


def _load_corpus(manifest, dims):
    rows = read_manifest(manifest, need=("id", "image_path", "text"))
    images = [load_image(r["image_path"]) for r in rows]
    X = np.array([featurize_image(img, dims.G) for img in images])
    T = np.array([featurize_text(r["text"], dims.H) for r in rows])
    return rows, images, X, T


def cmd_train(args):
    conf = _read_json(args.train_config) if args.train_config else {}
    util = dict(conf.pop("utility", {}))
    for key in ("alpha_v", "beta_s", "tau", "eta"):
        cli = getattr(args, {"alpha_v": "alpha", "beta_s": "beta"}.get(key, key))
        if cli is not None:
            util[key] = cli
    for key, cli in (("learning_rate", args.lr), ("epochs", args.epochs), ("batch_size", args.batch_size),
                     ("objective", args.objective)):
        if cli is not None:
            conf[key] = cli
    seed = 0 if args.seed is None else args.seed
    conf.setdefault("shuffle_seed", seed)
    dims_conf = conf.pop("dims", {})
    cfg = TrainConfig(utility=UtilityConfig(**util), **conf)
    dims = EncoderDims(**dims_conf)
    params = init_params(seed, dims)
    model = DemandModel.load(args.model) if args.model else None
    rows, images, X, T = _load_corpus(args.manifest, dims)
    h, _, _ = _corpus_utilities(rows, images, params, model, cfg.utility.eta)
    trained, report = train(params, Batch(X, T, h), cfg)
    trained.save(_out(args, "params.json"))
    report.config["dims"] = {"d": dims.d, "G": dims.G, "H": dims.H, "m": dims.m}
    report.save(_out(args, "report.json"))
    if not args.no_figures:
        plotting.plot_training_curve(report, _out(args, "loss.png"))
    for i, loss in enumerate(report.epoch_losses, 1):
        print(f"epoch {i} loss {loss:.6f}")
    return 0


def cmd_rank(args):
    params = EncoderParams.load(args.params)
    model = DemandModel.load(args.model)
    cfg = _utility_config(args)
    rows = read_manifest(args.candidates)
    items = [(r["id"], load_image(r["image_path"])) for r in rows]
    cands = build_candidates(items, params, model)
    reference = None
    if args.reference:
        ref_img = load_image(args.reference)
        reference = build_candidates([("reference", ref_img)] + items, params, model)[0]
    result = rank_candidates(cands, args.prompt, params, model, cfg, reference)
    result.save(_out(args, "ranking.csv"), _out(args, "ranking.json"))
    for e in result.entries:
        print(f"{e.rank}\t{e.id}\t{e.US:.6f}")
    return 0


def _parse_grid(text):
    try:
        r, c = (int(x) for x in text.lower().split("x"))
    except ValueError as exc:
        raise InvalidConfig(f"grid must look like 7x7, got {text!r}") from exc
    return r, c


def cmd_occlude(args):
    params = EncoderParams.load(args.params)
    model = DemandModel.load(args.model) if args.model else None
    cfg = _utility_config(args)
    img = load_image(args.image)
    corpus = None
    fill = "gray"
    if args.corpus:
        rows = read_manifest(args.corpus)
        corpus_imgs = [load_image(r["image_path"]) for r in rows]
        corpus = [encode_image(params, featurize_image(c, params.dims.G)) for c in corpus_imgs]
        if args.fill == "corpus-mean":
            fill = corpus_mean_fill(corpus_imgs)
    elif args.fill == "corpus-mean":
        raise InvalidConfig("corpus-mean fill needs --corpus")
    grid = occlusion_heatmap(img, args.prompt, args.scorer, params, model, cfg, _parse_grid(args.grid), fill, corpus)
    grid.save_csv(_out(args, "occlusion.csv"))
    grid.save_pgm(_out(args, "occlusion.pgm"))
    if not args.no_figures:
        plotting.plot_occlusion(img, grid, _out(args, "occlusion.png"), title=f"{args.scorer} score drop")
    print(f"base score {grid.base_score:.6f}; max drop {grid.deltas.max():.6f}")
    return 0


def cmd_bound_check(args):
    joint = load_joint(args.joint)
    h = _read_json(args.h)
    if isinstance(h, dict):
        h = h["h"]
    seed = 0 if args.seed is None else args.seed
    report = bound_check(joint, h, args.alpha, args.N, args.trials, seed)
    _write_json(_out(args, "bound_report.json"), report.to_json())
    verdict = "holds" if report.holds else "VIOLATED"
    print(f"I={report.exact_mi:.6f} lhs={report.lhs_estimate:.6f} rhs={report.rhs:.6f} "
          f"slack={report.slack:.6f}±{report.slack_se:.6f} {verdict}")
    return 0


def cmd_eval(args):
    model = DemandModel.load(args.model) if args.model else None
    cfg = _utility_config(args)
    encoders = [("ua", EncoderParams.load(args.params))]
    if args.baseline_params:
        encoders.append(("baseline", EncoderParams.load(args.baseline_params)))
    table = []
    for name, params in encoders:
        rows, images, X, T = _load_corpus(args.manifest, params.dims)
        h, demand, attrs = _corpus_utilities(rows, images, params, model, cfg.eta)
        Uv = encode_image(params, X)
        Ut = encode_text(params, T)
        scorers = [("similarity", UtilityConfig(alpha_v=0.0, beta_s=cfg.beta_s, tau=cfg.tau, eta=cfg.eta))]
        if cfg.alpha_v > 0:
            scorers.append(("ua", cfg))
        for scorer, scfg in scorers:
            metrics = retrieval_metrics(Uv, Ut, h, demand, attrs, scfg)
            table.append({"encoder": name, "scorer": scorer, **metrics})
    columns = list(table[0])
    with open(_out(args, "metrics.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for row in table:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    _write_json(_out(args, "metrics.json"), table)
    if not args.no_figures:
        plotting.plot_eval_metrics(
            [dict(r, encoder=f"{r['encoder']}/{r['scorer']}") for r in table], _out(args, "metrics.png"))
    for row in table:
        print(f"{row['encoder']}\t{row['scorer']}\trecall@1={row['recall_at_1']:.4f}\t"
              f"mean_demand={row['mean_demand']:.6f}\tmean_fidelity={row['mean_fidelity']:.4f}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_utility_flags(p, alpha=0.0):
    p.add_argument("--alpha", type=float, default=alpha, help="weight on the visual utility term")
    p.add_argument("--beta", type=float, default=1.0, help="weight on the similarity term")
    p.add_argument("--tau", type=float, default=0.07)
    p.add_argument("--eta", type=float, default=1.0, help="scale of the demand-based utility")


def _common_flags(suppress):
    p = argparse.ArgumentParser(add_help=False)

    def default(value):
        return argparse.SUPPRESS if suppress else value

    p.add_argument("--seed", type=int, default=default(None))
    p.add_argument("--out-dir", default=default("."))
    p.add_argument("--config", default=default(None), help="JSON file of option defaults")
    p.add_argument("--no-figures", action="store_true", default=default(False), help="skip PNG figures")
    p.add_argument("-v", "--verbose", action="store_true", default=default(False))
    return p


def build_parser():
    # global flags are accepted before or after the subcommand; the subcommand
    # copies use SUPPRESS so they do not overwrite values given up front
    parser = argparse.ArgumentParser(prog="uaclip", parents=[_common_flags(False)],
                                     description=__doc__.splitlines()[0])
    common = _common_flags(True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", parents=[common], help="render a synthetic corpus")
    p.add_argument("spec")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("extract", parents=[common], help="compute raw visual attributes")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("fit-demand", parents=[common], help="estimate the quadratic demand model")
    p.add_argument("observations")
    p.add_argument("schema")
    p.add_argument("--orientation", choices=ORIENTATIONS, required=True)
    p.set_defaults(func=cmd_fit_demand)

    p = sub.add_parser("train", parents=[common], help="train the dual encoder")
    p.add_argument("manifest")
    p.add_argument("--model", default=None, help="demand model JSON used to compute h")
    p.add_argument("--train-config", default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--objective", choices=("utility-aware", "standard"), default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rank", parents=[common], help="rank candidate images for a prompt")
    p.add_argument("candidates")
    p.add_argument("--prompt", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--reference", default=None)
    _add_utility_flags(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("occlude", parents=[common], help="occlusion saliency heatmap")
    p.add_argument("image")
    p.add_argument("--prompt", required=True)
    p.add_argument("--scorer", choices=("clip", "ua"), default="clip")
    p.add_argument("--grid", default="7x7")
    p.add_argument("--params", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--fill", choices=("gray", "corpus-mean"), default="gray")
    p.add_argument("--corpus", default=None, help="manifest used for corpus-mean fill and uniqueness")
    _add_utility_flags(p)
    p.set_defaults(func=cmd_occlude)

    p = sub.add_parser("bound-check", parents=[common], help="Monte Carlo check of the MI bound")
    p.add_argument("joint")
    p.add_argument("h")
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--N", type=int, default=8)
    p.add_argument("--trials", type=int, default=1000)
    p.set_defaults(func=cmd_bound_check)

    p = sub.add_parser("eval", parents=[common], help="retrieval and demand metrics")
    p.add_argument("manifest")
    p.add_argument("--params", required=True)
    p.add_argument("--baseline-params", default=None)
    p.add_argument("--model", default=None)
    _add_utility_flags(p)
    p.set_defaults(func=cmd_eval)
    return parser


def _apply_config(parser, argv):
    """Re-parse with defaults taken from ``--config`` (explicit flags win)."""
    pre, _ = parser.parse_known_args(argv)
    if not pre.config:
        return parser.parse_args(argv)
    conf = _read_json(pre.config)
    sub = parser._subparsers._group_actions[0].choices[pre.command]
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in conf.items()})
    return parser.parse_args(argv)


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except UaclipError as exc:
        print(exc.line(), file=sys.stderr)
        return exc.exit_status
    except OSError as exc:
        err = IOFailure(str(exc))
        print(err.line(), file=sys.stderr)
        return err.exit_status


if __name__ == "__main__":
    sys.exit(main())
