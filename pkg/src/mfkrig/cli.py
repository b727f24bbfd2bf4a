"""Command line: ``mfkrig reduce|train|predict|report|isherwood|sensitivity``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
error, 5 source failure, 1 anything else. Log verbosity is read from
``MFKRIG_LOG_LEVEL``.
"""

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import data_io
from .acquisition import (
    CandidatePool,
    FunctionSource,
    IsherwoodSource,
    ReplaySource,
    TrainingLog,
    generate_pool,
    run_sequential,
    uniform_pool,
)
from .empirical import INPUT_NAMES, OUTPUT_NAMES, isherwood_coefficients, isherwood_from_inputs, unscale_input
from .errors import ConfigError, DataError, MfkrigError, SourceError
from .gp import FitConfig, GPRegressor
from .multifidelity import FidelityDataset, MultiFidelityGP
from .sensitivity import ActiveSubspace, gradient_covariance, eigendecompose, response_surface, sobol_indices

logger = logging.getLogger("mfkrig")

# (varied input, output) pairs for the exported response surfaces; phi is the other axis
SURFACE_AXES = {"c_x": "M", "c_y": "ASS_AL", "c_m": "C_LOA"}


def _merge(base, update):
    out = copy.deepcopy(base)
    for key, value in (update or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def default_config():
    text = resources.files("mfkrig").joinpath("data").joinpath("default_config.yaml").read_text("utf-8")
    return yaml.safe_load(text)


@dataclass
class RunConfig:
    """Validated run settings; ``base_dir`` anchors relative paths."""

    data: dict
    base_dir: Path

    @classmethod
    def load(cls, path=None, overrides=None):
        data = default_config()
        base = Path.cwd()
        if path is not None:
            path = Path(path)
            try:
                user = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
            except (OSError, yaml.YAMLError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            if not isinstance(user, dict):
                raise ConfigError(f"config {path} must be a mapping")
            data = _merge(data, user)
            base = path.resolve().parent
        data = _merge(data, {k: v for k, v in (overrides or {}).items() if v is not None})
        cfg = cls(data, base)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.data[key]

    def path(self, key):
        value = self.data.get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def resolve(self, value):
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def seed(self):
        return int(self.data["seed"])

    @property
    def output(self):
        return self.path("output")

    def fit_config(self):
        fit = dict(self.data.get("fit") or {})
        fit["seed"] = self.seed
        try:
            return FitConfig.from_dict(fit)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid fit settings: {exc}") from exc

    def validate(self):
        d = self.data
        if not isinstance(d.get("seed"), int) or d["seed"] < 0:
            raise ConfigError("seed must be a nonnegative integer")
        for key in ("table", "ranges", "catalogue"):
            p = self.path(key)
            if p is not None and not p.is_file():
                raise ConfigError(f"{key} file not found: {p}")
        if (d.get("table") is None) != (d.get("ranges") is None):
            raise ConfigError("table and ranges must be given together")
        red = d["reduce"]
        if not 0 < float(red["threshold"]) <= 1:
            raise ConfigError("reduce.threshold must lie in (0, 1]")
        for key in ("bootstrap_samples", "gradient_samples"):
            if int(red[key]) < 2:
                raise ConfigError(f"reduce.{key} must be at least 2")
        if int(d["pool"]["size"]) < 1:
            raise ConfigError("pool.size must be at least 1")
        if d["pool"]["kind"] not in ("auto", "catalogue", "uniform", "replay"):
            raise ConfigError("pool.kind must be auto, catalogue, uniform or replay")
        acq = d["acquisition"]
        if not float(acq["epsilon"]) >= 0:
            raise ConfigError("acquisition.epsilon must be nonnegative")
        if int(acq["max_iterations"]) < 0:
            raise ConfigError("acquisition.max_iterations must be nonnegative")
        levels = d.get("levels") or []
        if not levels:
            raise ConfigError("at least one level must be configured")
        for k, lv in enumerate(levels, start=1):
            if lv.get("source") not in ("isherwood", "synthetic", "replay"):
                raise ConfigError(f"level {k}: source must be isherwood, synthetic or replay")
            if not float(lv.get("cost", 0)) > 0:
                raise ConfigError(f"level {k}: cost must be positive")
            if lv["source"] == "replay":
                if "path" not in lv or not self.resolve(lv["path"]).is_file():
                    raise ConfigError(f"level {k}: replay file not found")
            if lv["source"] == "synthetic" and lv.get("benchmark") not in data_io.BENCHMARKS:
                raise ConfigError(f"level {k}: unknown benchmark {lv.get('benchmark')!r}")
        init = d["initial"]
        if init.get("manifest") is None:
            sizes = [int(n) for n in init.get("sizes") or []]
            if len(sizes) != len(levels):
                raise ConfigError("initial.sizes needs one entry per level")
            if min(sizes) < 2 or any(a < b for a, b in zip(sizes, sizes[1:])):
                raise ConfigError("initial.sizes must be nonincreasing and at least 2")
        elif not self.resolve(init["manifest"]).is_file():
            raise ConfigError("initial.manifest not found")
        sens = d["sensitivity"]
        if int(sens["sobol_samples"]) < 64:
            raise ConfigError("sensitivity.sobol_samples must be at least 64")
        res = sens["resolution"]
        res = [res, res] if isinstance(res, int) else list(res)
        if len(res) != 2 or min(res) < 1:
            raise ConfigError("sensitivity.resolution must be a positive integer or a pair")

    def table(self):
        if self.data.get("table") is None:
            return data_io.default_table()
        return data_io.load_coefficient_table(self.path("table"), self.path("ranges"))

    def catalogue(self):
        if self.data.get("catalogue") is None:
            return data_io.default_catalogue()
        return data_io.load_catalogue(self.path("catalogue"))


# -- atomic output helpers -----------------------------------------------------


def _write_json(path, obj):
    data_io.write_text_atomic(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _names_to_index(names):
    bad = [n for n in names if n not in INPUT_NAMES]
    if bad:
        raise ConfigError(f"unknown input name(s): {', '.join(bad)}")
    return [INPUT_NAMES.index(n) for n in names]


# -- reduce --------------------------------------------------------------------


def bootstrap_samples(table, n, seed):
    """Uniform scaled inputs over the validity box and their Isherwood outputs."""
    U = np.random.default_rng(seed).random((n, len(INPUT_NAMES)))
    return U, isherwood_from_inputs(unscale_input(U, table), table, warn=False)


def cmd_reduce(cfg):
    """Bootstrap GPs per coefficient, active subspace, selected input set."""
    table = cfg.table()
    red = cfg["reduce"]
    U, Y = bootstrap_samples(table, int(red["bootstrap_samples"]), cfg.seed)
    fit = cfg.fit_config()
    selected, per_output, eig_rows, load_rows = set(), {}, [], []
    for i, name in enumerate(OUTPUT_NAMES):
        gp = GPRegressor(**fit.estimator_params()).fit(U, Y[:, i])
        sub = ActiveSubspace(
            n_samples=int(red["gradient_samples"]),
            threshold=float(red["threshold"]),
            loading_cutoff=float(red["loading_cutoff"]),
            surrogate=gp,
            random_state=cfg.seed,
        ).fit(U)
        res = sub.result_
        sel = [INPUT_NAMES[k] for k in sub.selected_]
        selected.update(sub.selected_)
        per_output[name] = {
            "eigenvalues": res.eigenvalues.tolist(),
            "n_active": res.n_active,
            "selected": sel,
        }
        cum = res.cumulative_fraction
        for k, (lam, frac) in enumerate(zip(res.eigenvalues, cum), start=1):
            eig_rows.append([name, k, float(lam), float(frac)])
        for m, pname in enumerate(INPUT_NAMES):
            load_rows.append([name, pname, *map(float, res.eigenvectors[m])])
    names = [INPUT_NAMES[k] for k in sorted(selected)]
    report = {"selected": names, "outputs": per_output, "seed": cfg.seed}
    out = cfg.output
    data_io.write_csv(out / "reduce_eigenvalues.csv", ["output", "k", "eigenvalue", "cumulative_fraction"], eig_rows)
    data_io.write_csv(
        out / "reduce_loadings.csv",
        ["output", "parameter"] + [f"w{k}" for k in range(1, len(INPUT_NAMES) + 1)],
        load_rows,
    )
    _write_json(out / "reduction.json", report)
    return report


# -- train ---------------------------------------------------------------------


def _reduced_inputs(cfg):
    names = cfg.data.get("reduced_inputs")
    if names is None:
        path = cfg.output / "reduction.json"
        if not path.is_file():
            raise ConfigError("reduced_inputs not set and no reduction.json from a previous reduce run")
        names = json.loads(path.read_text(encoding="utf-8"))["selected"]
    names = list(names)
    _names_to_index(names)
    if names[-1] != "phi":
        raise ConfigError("the wind angle phi must be the last reduced input")
    return names


def _affine(src, lv):
    scale, offset = float(lv.get("scale", 1.0)), float(lv.get("offset", 0.0))
    if scale == 1.0 and offset == 0.0:
        return src
    return FunctionSource(src, scale, offset)


def build_problem(cfg):
    """Sources, input/output names and a matching candidate pool."""
    levels = cfg["levels"]
    kinds = {lv["source"] for lv in levels}
    if "synthetic" in kinds and "isherwood" in kinds:
        raise ConfigError("synthetic and isherwood sources cannot be mixed")
    sources, dims, replay_points = [], set(), None
    table = reduced = None
    if "isherwood" in kinds or cfg["pool"]["kind"] == "catalogue":
        table = cfg.table()
        reduced = _reduced_inputs(cfg)
    for lv in levels:
        if lv["source"] == "isherwood":
            src = IsherwoodSource(table, _names_to_index(reduced))
            dims.add(len(reduced))
            input_names, output_names = tuple(reduced), OUTPUT_NAMES
        elif lv["source"] == "synthetic":
            bench = data_io.make_benchmark(lv["benchmark"], seed=int(lv.get("seed", 0)), dim=lv.get("dim"))
            src = FunctionSource(bench.level(lv.get("fidelity", "high")))
            dims.add(bench.dim)
            input_names = tuple(f"x{k}" for k in range(bench.dim))
            output_names = ("y",)
        else:
            ds = data_io.load_dataset(cfg.resolve(lv["path"]), output_names=lv.get("outputs", OUTPUT_NAMES))
            src = ReplaySource.from_dataset(ds)
            if replay_points is None:
                replay_points = ds.inputs
            dims.add(ds.inputs.shape[1])
            input_names, output_names = ds.input_names, ds.output_names
        sources.append(_affine(src, lv))
    if len(dims) != 1:
        raise ConfigError(f"levels disagree on the input dimension: {sorted(dims)}")
    dim = dims.pop()
    pool_cfg = cfg["pool"]
    pool_seed = cfg.seed if pool_cfg.get("seed") is None else int(pool_cfg["seed"])
    kind = pool_cfg["kind"]
    if kind == "auto":
        kind = "catalogue" if reduced is not None else "uniform"
    if kind == "catalogue":
        cat = cfg.catalogue()
        if tuple(cat.names) + ("phi",) != tuple(reduced):
            raise ConfigError(
                f"catalogue coordinates {cat.names} do not match reduced inputs {tuple(reduced)}"
            )
        idx = _names_to_index(reduced)
        pool = generate_pool(cat, int(pool_cfg["size"]), pool_seed, table.lower[idx], table.upper[idx])
    elif kind == "replay":
        if replay_points is None:
            raise ConfigError("pool.kind replay needs a replay level")
        pool = CandidatePool(replay_points)
    else:
        pool = uniform_pool(dim, int(pool_cfg["size"]), pool_seed)
    return sources, input_names, output_names, pool


def initial_datasets(cfg, sources, input_names, output_names, pool):
    """Nested initial design drawn from the pool (evaluated points leave it)."""
    levels = cfg["levels"]
    costs = [float(lv["cost"]) for lv in levels]
    init = cfg["initial"]
    if init.get("manifest") is not None:
        _, datasets = data_io.load_manifest_datasets(cfg.resolve(init["manifest"]))
        if len(datasets) != len(levels):
            raise ConfigError("manifest and levels differ in the number of fidelity levels")
        return datasets
    sizes = [int(n) for n in init["sizes"]]
    if sizes[0] > len(pool):
        raise ConfigError("initial design larger than the candidate pool")
    order = np.random.default_rng(cfg.seed + 1).permutation(len(pool))[: sizes[0]]
    datasets = []
    for k, (n, src) in enumerate(zip(sizes, sources), start=1):
        Z = pool.points[order[:n]]
        try:
            Y = np.asarray(src(Z), dtype=float)
        except MfkrigError:
            raise
        except Exception as exc:
            raise SourceError(f"level {k} source failed on the initial design: {exc!r}") from exc
        datasets.append(FidelityDataset(k, Z, Y, costs[k - 1], tuple(input_names), tuple(output_names)))
    pool.feasible[order] = False
    return datasets


def model_set_dict(models, input_names, output_names, costs):
    return {
        "kind": "mfkrig_model_set",
        "input_names": list(input_names),
        "output_names": list(output_names),
        "costs": [float(c) for c in costs],
        "models": [m.to_dict() for m in models],
    }


def load_model_set(path):
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read model file: {exc}", path=path) from exc
    if d.get("kind") != "mfkrig_model_set":
        raise DataError("not an mfkrig model file", path=path)
    models = [MultiFidelityGP.from_dict(m) for m in d["models"]]
    return models, tuple(d["input_names"]), tuple(d["output_names"])


def cmd_train(cfg):
    sources, input_names, output_names, pool = build_problem(cfg)
    datasets = initial_datasets(cfg, sources, input_names, output_names, pool)
    costs = [float(lv["cost"]) for lv in cfg["levels"]]
    fit = cfg.fit_config()
    params = MultiFidelityGP.from_config(fit).get_params()
    out = cfg.output
    acq = cfg["acquisition"]
    try:
        result = run_sequential(
            datasets,
            pool,
            sources,
            costs,
            epsilon=float(acq["epsilon"]),
            max_iterations=int(acq["max_iterations"]),
            model_params=params,
            log_path=out / "training_log.jsonl",
        )
    except SourceError as exc:
        logger.error("training aborted after %d iterations", len(exc.log or ()))
        raise
    for d in result.datasets:
        data_io.save_dataset(d, out / f"level{d.level}.csv")
    _write_json(out / "model.json", model_set_dict(result.models, input_names, output_names, costs))
    return result


# -- predict -------------------------------------------------------------------


def predict_table(models, X):
    cols = []
    for m in models:
        mean, std = m.predict(X, return_std=True)
        cols += [mean, std]
    return np.column_stack(cols) if cols and X.shape[0] else np.empty((X.shape[0], 2 * len(models)))


def cmd_predict(model_path, inputs_path, output_path):
    models, input_names, output_names = load_model_set(model_path)
    header, X = data_io.read_numeric_csv(inputs_path, allow_empty=True)
    if tuple(header) != input_names:
        raise DataError(f"input columns {tuple(header)} do not match model inputs {input_names}", row=0)
    P = predict_table(models, X)
    cols = [f"{name}_{stat}" for name in output_names for stat in ("mean", "std")]
    data_io.write_csv(output_path, list(input_names) + cols, np.hstack([X, P]).tolist())
    return P


# -- sensitivity / report --------------------------------------------------------


def _sobol_rows(models, output_names, input_names, n, seed):
    rows, out = [], {}
    for m, name in zip(models, output_names):
        res = sobol_indices(m, len(input_names), n, seed)
        out[name] = res
        for k, pname in enumerate(input_names):
            rows.append([name, pname, float(res.first_order[k]), float(res.total[k])])
    return rows, out


def top_ranked(result, input_names):
    """Highest total-index input, the wind angle excluded."""
    excl = [input_names.index("phi")] if "phi" in input_names else []
    return input_names[result.ranking(exclude=excl)[0]]


def bootstrap_reduced_models(cfg):
    """Isherwood-bootstrapped GP per coefficient on the reduced inputs."""
    table = cfg.table()
    reduced = _reduced_inputs(cfg)
    idx = _names_to_index(reduced)
    n = int(cfg["reduce"]["bootstrap_samples"])
    Z = np.random.default_rng(cfg.seed).random((n, len(reduced)))
    Y = IsherwoodSource(table, idx)(Z)
    fit = cfg.fit_config()
    models = [GPRegressor(**fit.estimator_params()).fit(Z, Y[:, i]) for i in range(Y.shape[1])]
    return models, tuple(reduced), OUTPUT_NAMES


def cmd_sensitivity(cfg, method, model_path=None):
    if model_path is None:
        models, input_names, output_names = bootstrap_reduced_models(cfg)
    else:
        models, input_names, output_names = load_model_set(model_path)
    out, seed = cfg.output, cfg.seed
    if method == "sobol":
        rows, res = _sobol_rows(models, output_names, list(input_names), int(cfg["sensitivity"]["sobol_samples"]), seed)
        data_io.write_csv(out / "sobol.csv", ["output", "parameter", "first_order", "total"], rows)
        return {name: top_ranked(r, list(input_names)) for name, r in res.items()}
    rows, summary = [], {}
    n1 = int(cfg["reduce"]["gradient_samples"])
    for m, name in zip(models, output_names):
        res = eigendecompose(gradient_covariance(m, n1, seed, len(input_names)))
        summary[name] = res.eigenvalues.tolist()
        for k, lam in enumerate(res.eigenvalues, start=1):
            rows.append([name, k, float(lam), *map(float, res.eigenvectors[:, k - 1])])
    data_io.write_csv(
        out / "active_subspace.csv", ["output", "k", "eigenvalue"] + [f"w_{p}" for p in input_names], rows
    )
    return summary


def cmd_report(cfg, model_path):
    models, input_names, output_names = load_model_set(model_path)
    names = list(input_names)
    sens = cfg["sensitivity"]
    rows, res = _sobol_rows(models, output_names, names, int(sens["sobol_samples"]), cfg.seed)
    out = cfg.output
    data_io.write_csv(out / "sobol.csv", ["output", "parameter", "first_order", "total"], rows)
    resolution = sens["resolution"]
    resolution = (resolution, resolution) if isinstance(resolution, int) else tuple(resolution)
    fixed = np.full(len(names), 0.5)
    surfaces = {}
    for m, name in zip(models, output_names):
        if "phi" in names and SURFACE_AXES.get(name) in names:
            a1, a2 = names.index("phi"), names.index(SURFACE_AXES[name])
        elif len(names) >= 2:
            a1, a2 = 0, 1
        else:
            continue
        u, v, grid = response_surface(m, a1, a2, resolution, fixed)
        rows = [[float(u[i]), float(v[j]), float(grid[i, j])] for i in range(len(u)) for j in range(len(v))]
        path = out / f"surface_{name}.csv"
        data_io.write_csv(path, [names[a1], names[a2], name], rows)
        surfaces[name] = str(path)
    return {"top": {n: top_ranked(r, names) for n, r in res.items()}, "surfaces": surfaces}


def cmd_isherwood(cfg, geometry_path, phis, output_path=None):
    geom = data_io.load_geometry(geometry_path)
    table = cfg.table()
    rows = []
    for phi in phis:
        c = isherwood_coefficients(geom, phi, table)
        rows.append([float(phi), c.c_x, c.c_y, c.c_m])
    if output_path is not None:
        data_io.write_csv(output_path, ["phi", *OUTPUT_NAMES], rows)
    return rows


# -- entry point -----------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override the global seed")
    common.add_argument("--output", help="output directory (or file for predict/isherwood)")

    parser = argparse.ArgumentParser(prog="mfkrig", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("reduce", parents=[common], help="bootstrap active-subspace input reduction")
    sub.add_parser("train", parents=[common], help="sequential multi-fidelity training")
    p = sub.add_parser("predict", parents=[common], help="predict from a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--inputs", required=True)
    p = sub.add_parser("report", parents=[common], help="Sobol table and response surfaces")
    p.add_argument("--model", required=True)
    p = sub.add_parser("isherwood", parents=[common], help="evaluate the empirical correlation")
    p.add_argument("--geometry", required=True, help="YAML ship geometry")
    p.add_argument("--phi", type=float, nargs="+", required=True, help="wind angles in degrees")
    p = sub.add_parser("sensitivity", parents=[common], help="Sobol indices or active subspace")
    p.add_argument("method", choices=("sobol", "subspace"))
    p.add_argument("--model", help="trained model; default bootstraps the correlation")
    return parser


def _print_csv(header, rows):
    print(",".join(header))
    for row in rows:
        print(",".join(data_io.fmt(v) if isinstance(v, float) else str(v) for v in row))


def run(args):
    overrides = {"seed": args.seed}
    if args.command not in ("predict", "isherwood"):
        overrides["output"] = args.output
    cfg = RunConfig.load(args.config, overrides)
    if args.command == "reduce":
        report = cmd_reduce(cfg)
        for name, info in report["outputs"].items():
            fr = np.cumsum(info["eigenvalues"]) / max(sum(info["eigenvalues"]), 1e-300)
            print(f"{name}: p={info['n_active']} captured={fr[info['n_active'] - 1]:.4f} selected={','.join(info['selected'])}")
        print("selected: " + ",".join(report["selected"]))
    elif args.command == "train":
        res = cmd_train(cfg)
        sizes = ",".join(str(len(d)) for d in res.datasets)
        print(f"iterations={len(res.log)} stop={res.stopped} sizes={sizes}")
    elif args.command == "predict":
        out = args.output or "predictions.csv"
        P = cmd_predict(args.model, args.inputs, out)
        print(f"wrote {P.shape[0]} predictions to {out}")
    elif args.command == "report":
        rep = cmd_report(cfg, args.model)
        for name, top in rep["top"].items():
            print(f"{name}: top-ranked {top}")
    elif args.command == "isherwood":
        rows = cmd_isherwood(cfg, args.geometry, args.phi, args.output)
        _print_csv(["phi", *OUTPUT_NAMES], rows)
    elif args.command == "sensitivity":
        summary = cmd_sensitivity(cfg, args.method, args.model)
        for name, value in summary.items():
            if isinstance(value, str):
                print(f"{name}: top-ranked {value}")
            else:
                print(f"{name}: eigenvalues " + " ".join(f"{v:.4g}" for v in value))
    return 0


def main(argv=None):
    level = os.environ.get("MFKRIG_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except MfkrigError as exc:
        print(f"mfkrig: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"mfkrig: error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
