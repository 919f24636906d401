"""Command line interface.

``groupweights experiment <name> --config FILE --out DIR``
    run one of the reproduction studies;
``groupweights fit TASKS GROUPS --out MODEL.json``
    learn inverse scales for a family of groups;
``groupweights denoise NOISY.pgm --sigma2 S --out DENOISED.pgm``
    wavelet-domain denoising of a grayscale image.

Exit codes: 0 success, 1 I/O failure, 2 configuration or input error,
3 numerical abort.
"""
import argparse
import json
import logging
import sys

import numpy as np

from . import experiments as ex
from .active_set import ActiveSetConfig
from .datagen.images import extract_patches, read_pgm, reconstruct, write_pgm
from .datagen.wavelets import WaveletTree, haar2d_forward, haar2d_inverse, wavelet_path_groups
from .exceptions import ConfigError, DomainError, NumericalError, StructuralError
from .inference import FitConfig, fit, solve_all
from .model import GroupFamily, HyperParams, TaskData, VariationalState, objective
from .priors import PriorConfig

log = logging.getLogger("groupweights")

EXIT_IO, EXIT_CONFIG, EXIT_NUMERICAL = 1, 2, 3


# ---------------------------------------------------------------------------
# input files

def read_tasks(path):
    """Tasks from a CSV file (one identity-design task per line) or an ``.npz``.

    An ``.npz`` holds ``Y`` of shape ``(K, N)`` and optionally ``X`` of
    shape ``(K, N, P)``.  Returns a ``(K, P)`` array or a list of tasks.
    """
    if path.endswith(".npz"):
        with np.load(path) as z:
            if "Y" not in z:
                raise ConfigError(f"{path}: missing array 'Y'")
            Y = np.asarray(z["Y"], float)
            X = np.asarray(z["X"], float) if "X" in z else None
        if X is None:
            return Y
        if X.ndim != 3 or X.shape[:2] != Y.shape:
            raise ConfigError(f"{path}: X has shape {X.shape}, expected (K, N, P) with (K, N) = {Y.shape}")
        return [TaskData(y, x) for y, x in zip(Y, X)]
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                row = [float(t) for t in line.replace(",", " ").split()]
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: cannot parse {line!r} as numbers") from None
            if rows and len(row) != len(rows[0]):
                raise ConfigError(f"{path}:{lineno}: expected {len(rows[0])} values, got {len(row)}")
            rows.append(row)
    if not rows:
        raise ConfigError(f"{path}: no tasks")
    return np.array(rows)


def read_groups(path, n_features):
    """One group per line as 0-based indices separated by commas or spaces."""
    groups = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                groups.append([int(t) for t in line.replace(",", " ").split()])
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: cannot parse {line!r} as indices") from None
    try:
        return GroupFamily(groups, n_features)
    except StructuralError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _n_features(data):
    return data.shape[1] if isinstance(data, np.ndarray) else data[0].n_features


def _prior(args):
    if args.prior == "student_t":
        return PriorConfig.student_t(args.shape)
    return PriorConfig.generalized_gaussian(args.shape)


# ---------------------------------------------------------------------------
# model files

def model_to_dict(res, prior, hp, cfg):
    fam = res.family
    return {
        "n_features": fam.n_features,
        "groups": [list(k) for k in fam.keys()],
        "f": fam.f.tolist(),
        "zeta": res.state.zeta.tolist(),
        "sigma2": res.sigma2,
        "beta": hp.beta,
        "learn_sigma2": hp.learn_sigma2,
        "prior": {"family": prior.family.value, "shape": prior.shape},
        "update_path": cfg.update_path.value,
        "objective_trace": res.objective_trace,
        "n_sweeps": res.n_sweeps,
        "converged": res.converged,
    }


def load_model(path):
    """Inverse of :func:`model_to_dict` as ``(family, zeta, prior, hp, path)``."""
    with open(path) as fh:
        d = json.load(fh)
    f = [float(x) for x in d["f"]]  # "inf" strings parse directly
    fam = GroupFamily(d["groups"], d["n_features"], f)
    prior = PriorConfig(d["prior"]["family"], d["prior"]["shape"])
    hp = HyperParams(d["sigma2"], d["beta"], d.get("learn_sigma2", False))
    zeta = np.array(d["zeta"], float)
    return fam, zeta, prior, hp, d.get("update_path", "auto")


def score(data, family, zeta, prior, hp, path="auto"):
    """Objective at the posterior implied by ``family.f`` and ``zeta``."""
    if not isinstance(data, np.ndarray):
        data = list(data)
    stats = solve_all(data, family, zeta, hp.sigma2, path)
    return objective(VariationalState(stats, zeta, hp.sigma2), data, family, prior, hp)


# ---------------------------------------------------------------------------
# commands

def cmd_experiment(args):
    text = ""
    if args.config:
        with open(args.config) as fh:
            text = fh.read()
    cfg = ex.parse_config(text, args.name, source=args.config or "<defaults>")
    for item in args.set or []:
        cfg = ex.parse_config(item, args.name, source="--set", base=cfg)
    summary = ex.run_experiment(args.name, cfg, args.out)
    print(json.dumps(ex.jsonable(summary), indent=2, sort_keys=True)[:4000])
    return 0


def cmd_fit(args):
    data = read_tasks(args.tasks)
    fam = read_groups(args.groups, _n_features(data))
    if not fam.covers():
        raise ConfigError(f"{args.groups}: groups do not cover all {fam.n_features} variables")
    prior = _prior(args)
    hp = HyperParams(args.sigma2, args.beta, args.learn_sigma2)
    cfg = FitConfig(max_sweeps=args.max_sweeps, rel_tol=args.rel_tol, update_path=args.path,
                    tie_f=args.tie_f, rng_seed=args.seed)
    res = fit(data, fam, prior, hp, cfg)
    out = model_to_dict(res, prior, hp, cfg)
    hp_final = HyperParams(res.sigma2, hp.beta, hp.learn_sigma2)
    out["sigma2"] = res.sigma2
    out["final_objective"] = score(data, res.family, res.state.zeta, prior, hp_final, cfg.update_path)
    ex.write_json(args.out, out)
    print(f"fitted {fam.n_groups} groups on {len(data)} tasks in {res.n_sweeps} sweeps; "
          f"{int(np.sum(np.isinf(res.f)))} pinned; model written to {args.out}")
    return 0


def denoise_image(image, sigma2, model, beta, prior, patch=32, stride=None, fit_cfg=None,
                  as_rounds=2):
    """Patch, transform, fit, invert and average; returns ``(image, W_hat, positions)``."""
    stride = stride or ex.auto_stride(min(image.shape), patch)
    patches, pos = extract_patches(image, patch, stride)
    Y = haar2d_forward(patches)
    P = Y.shape[1]
    structured = wavelet_path_groups(WaveletTree.for_side(patch))
    as_cfg = ActiveSetConfig(4 * P, 2 * P, as_rounds)
    w, _ = ex.fit_model(model, Y, prior, HyperParams(sigma2, beta), fit_cfg or FitConfig(),
                        structured, as_cfg)
    out = reconstruct(haar2d_inverse(w), pos, image.shape)
    return out, w, pos


def cmd_denoise(args):
    image = read_pgm(args.image)
    if not args.sigma2 > 0:
        raise ConfigError("sigma2 must be positive")
    fit_cfg = FitConfig(max_sweeps=args.max_sweeps, rel_tol=args.rel_tol)
    den, w, pos = denoise_image(image, args.sigma2, args.model, args.beta, _prior(args),
                                args.patch, args.stride, fit_cfg, args.as_rounds)
    write_pgm(args.out, den)
    report = {"model": args.model, "beta": args.beta, "sigma2": args.sigma2, "K": len(pos)}
    if args.clean:
        clean = read_pgm(args.clean)
        if clean.shape != image.shape:
            raise ConfigError("clean and noisy images differ in size")
        W = haar2d_forward(extract_patches(clean, args.patch, args.stride
                                           or ex.auto_stride(min(image.shape), args.patch))[0])
        report["coef_mse"], report["coef_half_width"] = ex.mse_stats(np.mean((w - W) ** 2, axis=1))
        report["pixel_mse"] = float(np.mean((den - clean) ** 2))
        report["input_pixel_mse"] = float(np.mean((image - clean) ** 2))
    if args.report:
        ex.write_json(args.report, report)
    print(json.dumps(ex.jsonable(report), sort_keys=True))
    return 0


# ---------------------------------------------------------------------------

def _add_prior_flags(p):
    p.add_argument("--prior", choices=["student_t", "generalized_gaussian"], default="student_t")
    p.add_argument("--shape", type=float, default=1.5,
                   help="Student-t shape a, or generalized Gaussian exponent gamma")
    p.add_argument("--beta", type=float, default=0.0, help="hyperprior exponent")
    p.add_argument("--max-sweeps", type=int, default=500)
    p.add_argument("--rel-tol", type=float, default=1e-7)


def build_parser():
    ap = argparse.ArgumentParser(prog="groupweights", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("experiment", help="run a reproduction study")
    p.add_argument("name", choices=sorted(ex.DEFAULTS))
    p.add_argument("--config", help="flat key = value file; missing keys take defaults")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one key")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("fit", help="learn group inverse scales")
    p.add_argument("tasks", help="CSV of responses (identity design) or .npz with Y and X")
    p.add_argument("groups", help="one group per line, 0-based indices")
    p.add_argument("--sigma2", type=float, required=True)
    p.add_argument("--learn-sigma2", action="store_true")
    p.add_argument("--tie-f", action="store_true", help="one shared inverse scale")
    p.add_argument("--path", default="auto",
                   choices=["auto", "naive", "woodbury_p", "woodbury_n", "identity"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_prior_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("denoise", help="wavelet denoising of a PGM image")
    p.add_argument("image")
    p.add_argument("--sigma2", type=float, required=True)
    p.add_argument("--model", choices=ex.MODELS, default="structured")
    p.add_argument("--patch", type=int, default=32)
    p.add_argument("--stride", type=int, default=None, help="default: image side / patch")
    p.add_argument("--as-rounds", type=int, default=2)
    p.add_argument("--clean", help="clean reference image for the error report")
    p.add_argument("--report", help="write the error report as JSON")
    p.add_argument("--out", required=True)
    _add_prior_flags(p)
    p.set_defaults(func=cmd_denoise)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, DomainError, StructuralError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
