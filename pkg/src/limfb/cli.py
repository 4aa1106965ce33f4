"""Command line interface: generate / train / feedback / sweep / report."""

import argparse
import sys

import numpy as np

from .estimators import build_omp_dictionary, estimate_gmm, estimate_lmmse, \
    estimate_omp
from .evaluate import (Experiment, ExperimentConfig, dump_raw, emit_csv,
                       read_sweep_csv, run_sweep)
from .feedback import (build_dft_codebook, build_pilot_matrix, observe,
                       select_codebook_index)
from .gmm import EmOptions, fit_em, load_model, project_to_observation, \
    save_model
from .scene import (ArrayGeometry, generate_channels, load_dataset,
                    load_scene_config, normalize_dataset, save_dataset)

FEEDBACK_SCHEMES = ("gmm", "tgmm", "dft:gmm", "dft:tgmm", "dft:lmmse",
                    "dft:omp")


def _parse_geometry(text):
    try:
        n_vert, n_horiz = (int(part) for part in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"geometry must look like '4x16', got {text!r}")
    return ArrayGeometry(n_vert, n_horiz)


def _cmd_generate(args):
    config = load_scene_config(args.config)
    dataset = generate_channels(config, args.count, sample_seed=args.seed)
    if args.normalize:
        dataset = normalize_dataset(dataset)
    save_dataset(dataset, args.out)
    print(f"wrote {args.count} channels of dim {config.geometry.n} "
          f"to {args.out}")


def _cmd_train(args):
    dataset = load_dataset(args.data)
    if not dataset.normalized:
        dataset = normalize_dataset(dataset)
    options = EmOptions(max_iters=args.max_iters, rel_loglik_tol=args.tol,
                        seed=args.seed)
    model = fit_em(dataset, 2 ** args.bits, constraint=args.constraint,
                   options=options, geometry=args.geometry)
    save_model(model, args.out)
    lls = model.fit_log_likelihoods
    print(f"fit {args.constraint} mixture with K={2 ** args.bits} in "
          f"{len(lls)} iterations (avg log-lik {lls[-1]:.4f}); "
          f"wrote {args.out}")


def _cmd_feedback(args):
    dataset = load_dataset(args.data)
    geometry = args.geometry
    if geometry is None:
        raise SystemExit("--geometry is required (dataset files carry no "
                         "array shape)")
    if geometry.n != dataset.dim:
        raise SystemExit("geometry does not match the dataset dimension")
    model = load_model(args.model, geometry=geometry)
    sigma_n2 = 1.0 / 10.0 ** (args.snr_db / 10.0)
    setup = build_pilot_matrix(geometry, args.pilots).with_noise(sigma_n2)

    needs_codebook = args.scheme.startswith("dft:")
    codebook = None
    obs = None
    lmmse_stats = None
    omp_dict = None
    if needs_codebook:
        bits = int(round(np.log2(model.n_components)))
        codebook = build_dft_codebook(geometry, bits)
    if args.scheme in ("gmm", "tgmm", "dft:gmm", "dft:tgmm"):
        obs = project_to_observation(model, setup)
    if args.scheme == "dft:lmmse":
        if not args.train_data:
            raise SystemExit("dft:lmmse needs --train-data for the sample "
                             "statistics")
        train = load_dataset(args.train_data)
        x = train.samples.astype(np.complex128)
        mean = x.mean(axis=0)
        centered = x - mean
        lmmse_stats = (mean, centered.T @ centered.conj() / len(x))
    if args.scheme == "dft:omp":
        omp_dict = build_omp_dictionary(geometry)

    count = len(dataset) if args.count is None else min(args.count,
                                                        len(dataset))
    lines = ["user,index,scheme"]
    for j in range(count):
        h = dataset.samples[j].astype(np.complex128)
        y = observe(setup, h, [args.seed, j])
        if args.scheme in ("gmm", "tgmm"):
            index = int(np.argmax(obs.log_responsibilities(y))) + 1
        else:
            estimator = args.scheme[4:]
            if estimator in ("gmm", "tgmm"):
                h_hat = estimate_gmm(model, setup, y, obs=obs)
            elif estimator == "lmmse":
                h_hat = estimate_lmmse(*lmmse_stats, setup, y)
            else:
                h_hat = estimate_omp(setup, omp_dict, y)
            index = select_codebook_index(codebook, h_hat, user=j).index
        lines.append(f"{j},{index},{args.scheme}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        print(f"wrote {count} feedback reports to {args.out}")
    else:
        sys.stdout.write(text)


def _cmd_sweep(args):
    config = ExperimentConfig.from_file(args.config)
    overrides = {}
    if args.precoder:
        overrides["precoder"] = args.precoder
    if args.iters is not None:
        overrides["iters"] = args.iters
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        fields = dict(config.__dict__)
        fields.update(overrides)
        config = ExperimentConfig(**fields)
    experiment = Experiment(config)
    values = None
    if args.values:
        caster = float if args.axis == "snr" else int
        values = [caster(v) for v in args.values.split(",")]
    result = run_sweep(experiment, args.axis, values=values)
    emit_csv(result, args.out)
    if result.metadata["skipped"]:
        for tag, reason in result.metadata["skipped"].items():
            print(f"skipped {tag}: {reason}")
    if args.dump_raw:
        dump_raw(result, args.dump_raw)
    print(f"wrote {len(result.values)} axis points x "
          f"{len(result.schemes)} schemes to {args.out} "
          f"({result.metadata['runtime_s']:.1f}s)")


def _cmd_report(args):
    axis, header, rows = read_sweep_csv(args.csv)
    schemes = [name[:-5] for name in header[1:] if name.endswith("_mean")]
    widths = [max(10, len(axis))] + [max(14, len(s) + 2) for s in schemes]
    line = axis.ljust(widths[0])
    for width, scheme in zip(widths[1:], schemes):
        line += scheme.rjust(width)
    print(line)
    for row in rows:
        line = f"{row[0]:g}".ljust(widths[0])
        for s_idx, width in enumerate(widths[1:]):
            mean, se = row[1 + 2 * s_idx], row[2 + 2 * s_idx]
            line += f"{mean:.3f}+-{se:.3f}".rjust(width)
        print(line)
    if args.raw:
        raw = load_dataset(args.raw)
        values = raw.samples.real.astype(np.float64)
        n_rows = len(rows)
        n_const = values.shape[0] // n_rows
        print(f"\nrecomputed from {args.raw} ({n_const} constellations):")
        for v_idx in range(n_rows):
            block = values[v_idx * n_const:(v_idx + 1) * n_const]
            means = block.mean(axis=0)
            ses = block.std(axis=0, ddof=1) / np.sqrt(n_const)
            line = f"{rows[v_idx][0]:g}".ljust(widths[0])
            for s_idx, width in enumerate(widths[1:]):
                line += f"{means[s_idx]:.3f}+-{ses[s_idx]:.3f}".rjust(width)
            print(line)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="limfb",
        description="Limited-feedback multi-user MIMO simulation lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="generate a synthetic dataset")
    p_gen.add_argument("--config", required=True,
                       help="scene config file (flat key = value)")
    p_gen.add_argument("--count", type=int, required=True)
    p_gen.add_argument("--seed", type=int, default=None,
                       help="sample seed (default: the scene seed)")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--normalize", action="store_true",
                       help="normalize so the mean of ||h||^2 equals N")
    p_gen.set_defaults(func=_cmd_generate)

    p_train = sub.add_parser("train", help="fit a mixture model")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--bits", type=int, required=True)
    p_train.add_argument("--constraint", choices=("full", "toeplitz"),
                         default="full")
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--geometry", type=_parse_geometry, default=None,
                         help="array shape VxH (required for toeplitz)")
    p_train.add_argument("--max-iters", type=int, default=100)
    p_train.add_argument("--tol", type=float, default=1e-6)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.set_defaults(func=_cmd_train)

    p_fb = sub.add_parser("feedback", help="compute feedback indices")
    p_fb.add_argument("--model", required=True)
    p_fb.add_argument("--scheme", choices=FEEDBACK_SCHEMES, required=True)
    p_fb.add_argument("--pilots", type=int, required=True)
    p_fb.add_argument("--snr-db", type=float, required=True)
    p_fb.add_argument("--data", required=True,
                      help="dataset of channels to report feedback for")
    p_fb.add_argument("--geometry", type=_parse_geometry, required=True)
    p_fb.add_argument("--train-data", default=None,
                      help="training dataset (dft:lmmse statistics)")
    p_fb.add_argument("--count", type=int, default=None)
    p_fb.add_argument("--seed", type=int, default=0)
    p_fb.add_argument("--out", default=None)
    p_fb.set_defaults(func=_cmd_feedback)

    p_sweep = sub.add_parser("sweep", help="run a Monte-Carlo sweep")
    p_sweep.add_argument("--config", required=True,
                         help="experiment config file (flat key = value)")
    p_sweep.add_argument("--axis", required=True,
                         choices=("snr", "pilots", "bits", "users",
                                  "iterations"))
    p_sweep.add_argument("--out", required=True, help="output CSV path")
    p_sweep.add_argument("--values", default=None,
                         help="comma-separated axis values")
    p_sweep.add_argument("--dump-raw", default=None,
                         help="path for the per-constellation raw dump")
    p_sweep.add_argument("--precoder", choices=("rci", "swmmse"), default=None)
    p_sweep.add_argument("--iters", type=int, default=None)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_rep = sub.add_parser("report", help="print a sweep CSV as a table")
    p_rep.add_argument("--csv", required=True)
    p_rep.add_argument("--raw", default=None,
                       help="raw dump to recompute the statistics from")
    p_rep.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    args.func(args)
    return 0
