"""Reproduction runners for the one-variable, two-variable, toy denoising
and wavelet denoising studies.

Each runner takes a fully resolved config dict (see :data:`DEFAULTS`) and
an output directory, writes CSV/JSON files there, and returns the summary
dict.  Random streams are derived from ``(seed, repetition, cell)`` so a
config reproduces every number bit for bit.
"""
import csv
import json
import logging
import math
import os
import time

import numpy as np

from . import oracle
from .active_set import ActiveSetConfig, active_set_fit
from .datagen import ScenarioSpec, gen_tasks
from .datagen.images import extract_patches, read_pgm, reconstruct, write_pgm
from .datagen.wavelets import WaveletTree, haar2d_forward, haar2d_inverse, wavelet_path_groups
from .exceptions import ConfigError
from .inference import FitConfig, fit
from .model import GroupFamily, HyperParams, explained_variance, explained_variance_shares
from .priors import PriorConfig

log = logging.getLogger(__name__)

MODELS = ("lasso", "wlasso", "structured", "structured_as")

_FIT_KEYS = dict(max_sweeps=500, rel_tol=1e-7, init_f="equal")

DEFAULTS = {
    "p1-scale": dict(K=10000, a=1.5, sigma2=1.0, f_min=0.02, f_max=50.0, n_f=14,
                     betas=[0.0, 0.05, 0.25], repetitions=5, seed=0, oracle=True,
                     oracle_points=4001, f_irrelevant=oracle.F_IRRELEVANT, **_FIT_KEYS),
    "p2-pair": dict(K=5000, a=1.5, sigma2=1.0, f_min=0.01, f_max=25.0, n_f=14,
                    betas=[0.0, 0.03, 0.15], repetitions=1, seed=0, **_FIT_KEYS),
    "toy-denoise": dict(K=10000, P=10, a=1.5, f_relevant=0.2, f_irrelevant=200.0,
                        scenarios=["singletons", "one_group", "overlapping"],
                        models=list(MODELS),
                        betas=[0.0, 0.001, 0.003, 0.01, 0.03, 0.1, 0.3],
                        repetitions=1, seed=0, as_T=40, as_D=20, as_rounds=5, as_new_scale=10.0,
                        **_FIT_KEYS),
    "wavelet-denoise": dict(image="", sigma2=400.0, patch=32, stride=0, a=1.5,
                            models=list(MODELS),
                            betas=[0.0, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2],
                            seed=0, as_rounds=2, as_T=0, as_D=0, as_new_scale=10.0,
                            write_images=True,
                            **{**_FIT_KEYS, "max_sweeps": 100}),
}

#: Keys whose values are lists.
_LIST_KEYS = {"betas", "scenarios", "models"}


# ---------------------------------------------------------------------------
# config files

def _coerce(key, text, default):
    text = text.strip()
    try:
        if key in _LIST_KEYS:
            items = [t.strip() for t in text.split(",") if t.strip()]
            if key == "betas":
                return [float(t) for t in items]
            return items
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {text!r}") from None


def parse_config(text, name, source="<config>", base=None):
    """Parse a flat ``key = value`` file and merge it over ``base``.

    ``base`` defaults to the defaults of experiment ``name``.  ``#`` starts
    a comment; lists are comma separated.
    """
    if name not in DEFAULTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {sorted(DEFAULTS)}")
    defaults = DEFAULTS[name]
    base = defaults if base is None else base
    cfg = {k: (list(v) if isinstance(v, list) else v) for k, v in base.items()}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r} for {name}")
        cfg[key] = _coerce(key, val, defaults[key])
    validate_config(name, cfg)
    return cfg


def validate_config(name, cfg):
    for m in cfg.get("models", []):
        if m not in MODELS:
            raise ConfigError(f"unknown model {m!r}; choose from {list(MODELS)}")
    for s in cfg.get("scenarios", []):
        if s not in ("singletons", "one_group", "overlapping"):
            raise ConfigError(f"unknown scenario {s!r}")
    if any(b < 0 for b in cfg.get("betas", [])):
        raise ConfigError("betas must be nonnegative")
    if not cfg.get("betas"):
        raise ConfigError("betas must not be empty")
    if cfg.get("init_f") not in ("data", "family", "equal"):
        raise ConfigError("init_f must be 'data', 'family' or 'equal'")
    for key in ("K", "repetitions", "max_sweeps"):
        if key in cfg and cfg[key] < 1:
            raise ConfigError(f"{key} must be positive")
    if name == "wavelet-denoise" and not cfg["image"]:
        raise ConfigError("wavelet-denoise needs 'image = <file.pgm>'")


def format_config(cfg):
    lines = []
    for k in sorted(cfg):
        v = cfg[k]
        if isinstance(v, list):
            v = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# output helpers

def jsonable(obj):
    """Replace non-finite floats by string sentinels, recursively."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (list, tuple, np.ndarray)):
        return ";".join(_cell(v) for v in x)
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_cell(r[h]) for h in header])


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _rng(seed, *stream):
    return np.random.default_rng([int(seed), *[int(s) for s in stream]])


def _fit_config(cfg, **kw):
    return FitConfig(max_sweeps=cfg["max_sweeps"], rel_tol=cfg["rel_tol"],
                     init_f=cfg["init_f"], **kw)


def mse_stats(err):
    """Mean and 95% half-width (1.96 standard errors) of per-task errors."""
    err = np.asarray(err, float)
    hw = 1.96 * err.std(ddof=1) / math.sqrt(err.size) if err.size > 1 else float("nan")
    return float(err.mean()), float(hw)


def group_label(key):
    return "-".join(str(i) for i in key)


# ---------------------------------------------------------------------------
# one-variable study

def student_variance(f, a, card=1):
    """Variance ``|A| / ((a - 1) f)``; zero for ``f = inf``."""
    f = np.asarray(f, float)
    with np.errstate(divide="ignore"):
        return np.where(np.isinf(f), 0.0, card / ((a - 1) * f))


def run_p1_scale(cfg, out):
    a, s2, K = cfg["a"], cfg["sigma2"], cfg["K"]
    prior = PriorConfig.student_t(a)
    grid = oracle.default_f_grid(cfg["n_f"], cfg["f_min"], cfg["f_max"])
    cand = np.append(grid, cfg["f_irrelevant"])
    fam = GroupFamily.singletons(1)
    rows = []
    for rep in range(cfg["repetitions"]):
        for i, f_true in enumerate(grid):
            rng = _rng(cfg["seed"], rep, i)
            spec = ScenarioSpec("one_var", K, prior=prior, f_relevant=float(f_true), sigma2=s2)
            Y, _, _, _ = gen_tasks(spec, rng)
            scores = None
            if cfg["oracle"]:
                _, scores = oracle.grid_search_f(Y[:, 0], cand, a, s2, 0.0, return_scores=True,
                                                 n_points=cfg["oracle_points"])
            for beta in cfg["betas"]:
                res = fit(Y, fam, prior, HyperParams(s2, beta), _fit_config(cfg))
                f_hat = float(res.f[0])
                row = dict(repetition=rep, beta=beta, f_true=float(f_true),
                           var_true=float(student_variance(f_true, a)),
                           f_var=f_hat, var_var=float(student_variance(f_hat, a)),
                           n_sweeps=res.n_sweeps, converged=int(res.converged),
                           f_grid=float("nan"), var_grid=float("nan"))
                if scores is not None:
                    tot = {f: sc + (K * beta * math.log(f) if beta > 0 else 0.0)
                           for f, sc in scores.items()}
                    f_g = min(tot, key=lambda f: (-tot[f], f))
                    row["f_grid"] = f_g
                    row["var_grid"] = float(student_variance(f_g, a))
                rows.append(row)
    header = ["repetition", "beta", "f_true", "var_true", "f_var", "var_var",
              "f_grid", "var_grid", "n_sweeps", "converged"]
    write_csv(os.path.join(out, "p1_scale.csv"), header, rows)
    summary = {"candidate_f": cand.tolist(), "cells": []}
    for beta in cfg["betas"]:
        for f_true in grid:
            sel = [r for r in rows if r["beta"] == beta and r["f_true"] == float(f_true)]
            vv = np.array([r["var_var"] for r in sel])
            vg = np.array([r["var_grid"] for r in sel])
            summary["cells"].append(dict(
                beta=beta, f_true=float(f_true), var_true=float(student_variance(f_true, a)),
                var_var_mean=float(vv.mean()), var_grid_mean=float(vg.mean()),
                n_pinned=int(sum(np.isinf(r["f_var"]) for r in sel))))
    write_json(os.path.join(out, "summary.json"), summary)
    return summary


# ---------------------------------------------------------------------------
# two-variable study

def pair_variances(family, prior):
    """Estimated total singleton variance and pair variance of a 3-group fit."""
    ev = explained_variance(family, prior)
    return float(ev[0] + ev[1]), float(ev[2])


def classify_pair(single, pair, sigma2):
    """``pair``/``single`` for the dominating source, ``noise`` if both are below ``2 sigma2``."""
    if max(single, pair) <= 2 * sigma2:
        return "noise"
    return "pair" if pair > single else "single"


def run_p2_pair(cfg, out):
    a, s2, K = cfg["a"], cfg["sigma2"], cfg["K"]
    prior = PriorConfig.student_t(a)
    grid = oracle.default_f_grid(cfg["n_f"], cfg["f_min"], cfg["f_max"])
    fam = GroupFamily([[0], [1], [0, 1]], 2)
    rows = []
    for rep in range(cfg["repetitions"]):
        for i, f_single in enumerate(grid):
            for j, f_pair in enumerate(grid):
                rng = _rng(cfg["seed"], rep, i, j)
                spec = ScenarioSpec("two_var", K, prior=prior, f_relevant=float(f_pair),
                                    f_irrelevant=float(f_single), sigma2=s2)
                Y, _, _, _ = gen_tasks(spec, rng)
                for beta in cfg["betas"]:
                    res = fit(Y, fam, prior, HyperParams(s2, beta), _fit_config(cfg))
                    single, pair = pair_variances(res.family, prior)
                    rows.append(dict(repetition=rep, beta=beta, f_single=float(f_single),
                                     f_pair=float(f_pair), f_hat=res.f.tolist(),
                                     var_single=single, var_pair=pair,
                                     label=classify_pair(single, pair, s2),
                                     n_sweeps=res.n_sweeps))
    header = ["repetition", "beta", "f_single", "f_pair", "f_hat", "var_single", "var_pair",
              "label", "n_sweeps"]
    write_csv(os.path.join(out, "p2_pair.csv"), header, rows)
    summary = {"f_grid": grid.tolist(), "counts": {}}
    for beta in cfg["betas"]:
        labels = [r["label"] for r in rows if r["beta"] == beta]
        summary["counts"][repr(beta)] = {k: labels.count(k) for k in ("pair", "single", "noise")}
    write_json(os.path.join(out, "summary.json"), summary)
    return summary


# ---------------------------------------------------------------------------
# model zoo shared by the denoising studies

def fit_model(model, Y, prior, hp, fit_cfg, structured=None, as_cfg=None):
    """Fit one of :data:`MODELS` to identity-design responses ``Y``.

    Returns ``(w, family)``; for the active-set model the family is the
    one of the last fit.
    """
    P = Y.shape[1]
    if model == "lasso":
        cfg = FitConfig(**{**fit_cfg.__dict__, "tie_f": True})
        res = fit(Y, GroupFamily.singletons(P), prior, hp, cfg)
        return res.w, res.family
    if model == "wlasso":
        res = fit(Y, GroupFamily.singletons(P), prior, hp, fit_cfg)
        return res.w, res.family
    if model == "structured":
        res = fit(Y, structured, prior, hp, fit_cfg)
        return res.w, res.family
    if model == "structured_as":
        res = active_set_fit(Y, prior, hp, fit_cfg, as_cfg, n_features=P)
        return res.w, res.fit.family
    raise ConfigError(f"unknown model {model!r}")


# ---------------------------------------------------------------------------
# toy denoising study

def run_toy_denoise(cfg, out):
    prior = PriorConfig.student_t(cfg["a"])
    P, K = cfg["P"], cfg["K"]
    fit_cfg = _fit_config(cfg)
    as_cfg = ActiveSetConfig(cfg["as_T"], cfg["as_D"], cfg["as_rounds"], cfg["as_new_scale"])
    structured = GroupFamily.prefixes(P)
    rows = []
    summary = {"betas": cfg["betas"], "cells": []}
    for rep in range(cfg["repetitions"]):
        for si, scen in enumerate(cfg["scenarios"]):
            spec = ScenarioSpec(scen, K, P=P, prior=prior, f_relevant=cfg["f_relevant"],
                                f_irrelevant=cfg["f_irrelevant"])
            Y, W, _, s2 = gen_tasks(spec, _rng(cfg["seed"], rep, si))
            half = K // 2
            Ya, Wa, Yb, Wb = Y[:half], W[:half], Y[half:], W[half:]
            for model in cfg["models"]:
                t0 = time.perf_counter()
                sel = []
                for beta in cfg["betas"]:
                    hp = HyperParams(s2, beta)
                    w, fam = fit_model(model, Ya, prior, hp, fit_cfg, structured, as_cfg)
                    err = np.sum((w - Wa) ** 2, axis=1).mean()
                    sel.append(err)
                    rows.append(dict(scenario=scen, model=model, beta=beta, repetition=rep,
                                     sigma2=s2, train_mse=float(err), test_mse=float("nan"),
                                     selected=0, groups=[group_label(k) for k in fam.keys()],
                                     f=fam.f, shares=explained_variance_shares(fam, prior)))
                best = int(np.argmin(sel))
                beta = cfg["betas"][best]
                w, _ = fit_model(model, Yb, prior, HyperParams(s2, beta), fit_cfg, structured, as_cfg)
                err = np.sum((w - Wb) ** 2, axis=1)
                mean, hw = mse_stats(err)
                row = rows[len(rows) - len(cfg["betas"]) + best]
                row["test_mse"], row["selected"] = mean, 1
                summary["cells"].append(dict(scenario=scen, model=model, repetition=rep,
                                             beta=beta, test_mse=mean, half_width=hw,
                                             sigma2=s2))
                log.info("%s/%s rep %d: beta=%g test mse %.3f (%.1fs)", scen, model, rep, beta,
                         mean, time.perf_counter() - t0)
    header = ["scenario", "model", "beta", "repetition", "sigma2", "train_mse", "test_mse",
              "selected", "groups", "f", "shares"]
    write_csv(os.path.join(out, "toy_denoise.csv"), header, rows)
    write_json(os.path.join(out, "summary.json"), summary)
    return summary


# ---------------------------------------------------------------------------
# wavelet image denoising

def auto_stride(side, patch=32):
    """Stride giving 29 patches per side at 256 pixels and 31 at 512."""
    return max(1, side // patch)


def run_wavelet_denoise(cfg, out):
    image = read_pgm(cfg["image"])
    size = cfg["patch"]
    stride = cfg["stride"] or auto_stride(min(image.shape), size)
    patches, pos = extract_patches(image, size, stride)
    W = haar2d_forward(patches)
    K, P = W.shape
    s2 = cfg["sigma2"]
    Y = W + math.sqrt(s2) * _rng(cfg["seed"], 0).standard_normal(W.shape)
    prior = PriorConfig.student_t(cfg["a"])
    tree = WaveletTree.for_side(size)
    structured = wavelet_path_groups(tree)
    as_cfg = ActiveSetConfig(cfg["as_T"] or 4 * P, cfg["as_D"] or 2 * P, cfg["as_rounds"],
                            cfg["as_new_scale"])
    fit_cfg = _fit_config(cfg)
    noisy_img = reconstruct(haar2d_inverse(Y), pos, image.shape)
    rows = []
    best = {}
    for model in cfg["models"]:
        for beta in cfg["betas"]:
            t0 = time.perf_counter()
            w, fam = fit_model(model, Y, prior, HyperParams(s2, beta), fit_cfg, structured, as_cfg)
            coef_err = np.mean((w - W) ** 2, axis=1)
            den = reconstruct(haar2d_inverse(w), pos, image.shape)
            pix = float(np.mean((den - image) ** 2))
            mean, hw = mse_stats(coef_err)
            rows.append(dict(model=model, beta=beta, coef_mse=mean, half_width=hw,
                             pixel_mse=pix, n_groups=fam.n_groups,
                             n_pinned=int(np.sum(np.isinf(fam.f))),
                             seconds=round(time.perf_counter() - t0, 1)))
            log.info("%s beta=%g: coefficient mse %.2f, pixel mse %.2f", model, beta, mean, pix)
            if model not in best or mean < best[model]["coef_mse"]:
                best[model] = dict(beta=beta, coef_mse=mean, half_width=hw, pixel_mse=pix)
                if cfg["write_images"]:
                    write_pgm(os.path.join(out, f"denoised_{model}.pgm"), den)
    if cfg["write_images"]:
        write_pgm(os.path.join(out, "noisy.pgm"), noisy_img)
    header = ["model", "beta", "coef_mse", "half_width", "pixel_mse", "n_groups", "n_pinned"]
    write_csv(os.path.join(out, "wavelet_denoise.csv"), header, rows)
    summary = dict(K=K, stride=stride, noisy_pixel_mse=float(np.mean((noisy_img - image) ** 2)),
                   best=best)
    write_json(os.path.join(out, "summary.json"), summary)
    return summary


RUNNERS = {
    "p1-scale": run_p1_scale,
    "p2-pair": run_p2_pair,
    "toy-denoise": run_toy_denoise,
    "wavelet-denoise": run_wavelet_denoise,
}


def run_experiment(name, cfg, out):
    """Echo the resolved config into ``out`` and run the experiment."""
    if name not in RUNNERS:
        raise ConfigError(f"unknown experiment {name!r}")
    validate_config(name, cfg)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(f"# experiment: {name}\n")
        fh.write(format_config(cfg))
    return RUNNERS[name](cfg, out)
