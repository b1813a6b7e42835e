"""Command-line entry point: ``thindeep gen|fit|eval|cv|sample-prior|export``.

Every command writes its validated configuration to ``<out>/config.json``;
``thindeep rerun <config.json>`` replays it.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import click
import numpy as np

from .errors import ThinDeepError

log = logging.getLogger("thindeep")

CHECKPOINT_FORMAT = "thindeep-checkpoint"
CHECKPOINT_VERSION = 1
MODELS = ("tdgp", "sgp-shallow")


@dataclass
class RunConfig:
    command: str
    out: str
    data: str = "synthetic"
    target_col: str = "y"
    n: int = 200
    model: str = "tdgp"
    latent_dim: int | None = None
    inducing_out: int = 50
    inducing_hidden: int = 25
    seed: int = 0
    epochs: tuple = (500, 1500, 5000)
    lrs: tuple = (0.1, 0.01, 0.001)
    folds: int = 10
    jobs: int = 1
    augment_bias: bool = False
    checkpoint: str | None = None
    grid: str | None = None
    kind: str = "cdgp"
    depth: int = 1
    mean_mode: str = "zero"
    mrae_kind: str = "relative"
    extra: dict = field(default_factory=dict)

    def validate(self):
        if self.model not in MODELS:
            raise click.BadParameter(f"--model must be one of {MODELS}")
        if self.latent_dim is not None and self.latent_dim < 1:
            raise click.BadParameter("--latent-dim must be >= 1")
        if self.inducing_out < 1 or self.inducing_hidden < 1:
            raise click.BadParameter("inducing counts must be >= 1")
        if len(self.epochs) != 3 or any(e < 0 for e in self.epochs):
            raise click.BadParameter("epochs must be three non-negative ints")
        if len(self.lrs) != 3 or any(not lr > 0 for lr in self.lrs):
            raise click.BadParameter("step sizes must be three positive numbers")
        if self.command == "cv" and self.folds < 2:
            raise click.BadParameter("--folds must be >= 2")
        if self.data != "synthetic" and self.command in ("fit", "cv", "eval"):
            if not Path(self.data).is_file():
                raise click.BadParameter(f"data file {self.data!r} does not exist")
        if self.command in ("eval", "export") and not self.checkpoint:
            raise click.BadParameter("--checkpoint is required")
        if self.checkpoint and not Path(self.checkpoint).is_file():
            raise click.BadParameter(f"checkpoint {self.checkpoint!r} does not exist")
        if self.jobs < 1:
            raise click.BadParameter("--jobs must be >= 1")
        return self

    def snapshot(self, out_dir):
        d = asdict(self)
        d["epochs"], d["lrs"] = list(self.epochs), list(self.lrs)
        Path(out_dir, "config.json").write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path):
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        d["epochs"], d["lrs"] = tuple(d["epochs"]), tuple(d["lrs"])
        return cls(**d)


# -- helpers --------------------------------------------------------------------------


def _schedule(cfg):
    from .train import Schedule

    return Schedule.standard(tuple(cfg.epochs), tuple(cfg.lrs))


def _load(cfg):
    from .data import gen_synthetic, load_csv

    if cfg.data == "synthetic":
        return gen_synthetic(cfg.n, cfg.seed)
    return load_csv(cfg.data, cfg.target_col)


def _build(cfg, X):
    from .sgp import SparseGP
    from .tdgp import TdgpModel

    if cfg.model == "tdgp":
        return TdgpModel.initialize(
            X,
            latent_dim=cfg.latent_dim,
            m_u=cfg.inducing_out,
            m_v=cfg.inducing_hidden,
            seed=cfg.seed,
            augment_bias=cfg.augment_bias,
        )
    return SparseGP.initialize(X, m_u=cfg.inducing_out, seed=cfg.seed)


def save_checkpoint(path, model, ds, cfg):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": model.to_dict(),
        "normalization": {
            "x_mean": np.asarray(ds.x_mean).tolist(),
            "x_std": np.asarray(ds.x_std).tolist(),
            "y_mean": ds.y_mean,
            "y_std": ds.y_std,
            "columns": list(ds.columns),
            "target": ds.target,
        },
        "config": {k: v for k, v in asdict(cfg).items()},
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_checkpoint(path):
    from .sgp import SparseGP
    from .tdgp import TdgpModel

    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ThinDeepError(f"{path}: not a thindeep checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ThinDeepError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    kind = doc["model"]["kind"]
    cls = {"tdgp": TdgpModel, "sgp-shallow": SparseGP}[kind]
    return cls.from_dict(doc["model"]), doc["normalization"]


def _apply_norm(ds, norm):
    return dataclasses.replace(
        ds,
        X=(ds.X - np.asarray(norm["x_mean"])) / np.asarray(norm["x_std"]),
        y=(ds.y - norm["y_mean"]) / norm["y_std"],
        x_mean=np.asarray(norm["x_mean"]),
        x_std=np.asarray(norm["x_std"]),
        y_mean=norm["y_mean"],
        y_std=norm["y_std"],
    )


def _write_trace(path, result):
    import csv

    keys, rows = result.trace_rows()
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])


def parse_grid(spec, dim):
    """``lo:hi:n`` (repeated over ``dim`` axes as a product grid) or a CSV path."""
    if spec is None:
        spec = "-2:2:21"
    if Path(spec).is_file():
        import csv

        with open(spec, encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        return np.array([[float(t) for t in r] for r in rows[1:] if r], dtype=float)
    try:
        lo, hi, n = spec.split(":")
        axis = np.linspace(float(lo), float(hi), int(n))
    except ValueError:
        raise click.BadParameter(f"grid must be lo:hi:n or a CSV file, got {spec!r}") from None
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


# -- commands ---------------------------------------------------------------------------


def cmd_gen(cfg: RunConfig):
    from .data import gen_synthetic, save_csv

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.snapshot(out)
    ds = gen_synthetic(cfg.n, cfg.seed)
    path = out / "data.csv"
    save_csv(ds, path)
    return path


def _fit_on(cfg, ds, train_mask, out):
    from .data import normalize
    from .train import fit

    nds = normalize(ds, train_mask)
    tr = nds.subset(train_mask)
    model = _build(cfg, tr.X)
    t0 = time.perf_counter()
    res = fit(model, tr.X, tr.y, _schedule(cfg), seed=cfg.seed)
    elapsed = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.json", res.model, nds, cfg)
    _write_trace(out / "loss_trace.csv", res)
    return res.model, nds, elapsed


def cmd_fit(cfg: RunConfig):
    ds = _load(cfg)
    mask = ds.train_mask if ds.train_mask is not None else np.ones(ds.n, bool)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.snapshot(out)
    model, _, _ = _fit_on(cfg, ds, mask, out)
    return model


def cmd_eval(cfg: RunConfig):
    from .metrics import EvalReport, evaluate

    model, norm = load_checkpoint(cfg.checkpoint)
    ds = _load(cfg)
    test = ~ds.train_mask if ds.train_mask is not None else np.ones(ds.n, bool)
    nds = _apply_norm(ds.subset(test), norm)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.snapshot(out)
    rep = EvalReport(model.kind, cfg.data)
    rep.folds.append(evaluate(model, nds.X, nds.y, norm["y_std"], 0, cfg.mrae_kind))
    rep.to_json(out / "report.json")
    rep.to_csv(out / "metrics.csv")
    return rep


def _cv_fold(args):
    cfg, ds, labels, k = args
    from .metrics import evaluate

    fold_cfg = dataclasses.replace(cfg, seed=cfg.seed * 1000 + k)
    out = Path(cfg.out) / f"fold_{k}"
    model, nds, elapsed = _fit_on(fold_cfg, ds, labels != k, out)
    test = nds.subset(labels == k)
    fr = evaluate(model, test.X, test.y, nds.y_std, k, cfg.mrae_kind)
    fr.seconds = elapsed
    return fr


def cmd_cv(cfg: RunConfig):
    from .data import kfold
    from .metrics import EvalReport

    ds = _load(cfg)
    if ds.train_mask is not None:
        ds = dataclasses.replace(ds, train_mask=None)
    labels = ds.folds if ds.folds is not None else kfold(ds, cfg.folds, cfg.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.snapshot(out)
    ks = sorted(set(labels.tolist()))
    jobs = [(cfg, ds, labels, k) for k in ks]
    if cfg.jobs > 1:
        import multiprocessing as mp
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(cfg.jobs, mp_context=mp.get_context("spawn")) as pool:
            results = list(pool.map(_cv_fold, jobs))
    else:
        results = [_cv_fold(j) for j in jobs]
    rep = EvalReport(cfg.model, cfg.data, results)
    rep.to_json(out / "report.json")
    rep.to_csv(out / "metrics.csv")
    return rep


def cmd_sample_prior(cfg: RunConfig):
    from .priors import DepthConfig, sample_prior

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.snapshot(out)
    grid = parse_grid(cfg.grid or "-5:5:101", 1)
    dc = DepthConfig(cfg.depth, cfg.kind, cfg.mean_mode)
    sample = sample_prior(dc, grid, cfg.seed)
    sample.to_csv(out)
    return sample


def cmd_export(cfg: RunConfig):
    import csv

    from .tdgp import TdgpModel, export_field, export_latent, relevance_profile

    model, norm = load_checkpoint(cfg.checkpoint)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.snapshot(out)
    grid = parse_grid(cfg.grid, model.input_dim)

    def dump(name, header, rows):
        with (out / name).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([v if isinstance(v, int) else repr(float(v)) for v in r])

    xcols = [f"x{j}" for j in range(grid.shape[1])]
    if isinstance(model, TdgpModel):
        H = export_latent(model, grid)
        dump("latent.csv", xcols + [f"h{q}" for q in range(H.shape[1])], np.hstack([grid, H]))
        ev = export_field(model, grid)
        dump("field.csv", xcols + [f"eig{j}" for j in range(ev.shape[1])], np.hstack([grid, ev]))
        rel, parts = relevance_profile(model)
        dump(
            "relevance.csv",
            ["dim", "relevance", "kernel_variance", "mean_norm"],
            [[q, rel[q], parts["kernel_variance"][q], parts["mean_norm"][q]] for q in range(len(rel))],
        )
    else:
        rel = model.relevance()
        dump("relevance.csv", ["dim", "relevance", "inverse_lengthscale"],
             [[q, rel[q], 1.0 / model.lengthscales[q]] for q in range(len(rel))])
    return out


COMMANDS = {
    "gen": cmd_gen,
    "fit": cmd_fit,
    "eval": cmd_eval,
    "cv": cmd_cv,
    "sample-prior": cmd_sample_prior,
    "export": cmd_export,
}


def run(cfg: RunConfig):
    cfg.validate()
    return COMMANDS[cfg.command](cfg)


# -- click wiring -------------------------------------------------------------------------


def _setup_logging():
    level = os.environ.get("THINDEEP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _common(f):
    opts = [
        click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory."),
        click.option("--seed", default=0, show_default=True, type=int),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _model_opts(f):
    opts = [
        click.option("--data", default="synthetic", show_default=True, help="CSV path or 'synthetic'."),
        click.option("--target-col", default="y", show_default=True),
        click.option("--n", default=200, show_default=True, type=int, help="Synthetic sample count."),
        click.option("--model", default="tdgp", show_default=True, type=click.Choice(MODELS)),
        click.option("--latent-dim", default=None, type=int, help="Q (default: input dimension)."),
        click.option("--inducing-out", default=50, show_default=True, type=int),
        click.option("--inducing-hidden", default=25, show_default=True, type=int),
        click.option("--augment-bias", is_flag=True, help="Append a constant input (affine layers)."),
        click.option("--epochs-phase1", default=500, show_default=True, type=int),
        click.option("--epochs-phase2", default=1500, show_default=True, type=int),
        click.option("--epochs-phase3", default=5000, show_default=True, type=int),
        click.option("--lr-phase1", default=0.1, show_default=True, type=float),
        click.option("--lr-phase2", default=0.01, show_default=True, type=float),
        click.option("--lr-phase3", default=0.001, show_default=True, type=float),
        click.option("--mrae", "mrae_kind", default="relative", show_default=True,
                     type=click.Choice(["relative", "dispersion"])),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _cfg_from(command, kw):
    kw = dict(kw)
    epochs = tuple(kw.pop(f"epochs_phase{i}") for i in (1, 2, 3))
    lrs = tuple(kw.pop(f"lr_phase{i}") for i in (1, 2, 3))
    return RunConfig(command=command, epochs=epochs, lrs=lrs, **kw)


def _invoke(cfg):
    try:
        return run(cfg)
    except click.BadParameter:
        raise
    except (ThinDeepError, OSError) as exc:
        out = Path(cfg.out)
        if out.is_dir():
            (out / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
        raise click.ClickException(str(exc)) from exc


@click.group()
def main():
    """Thin-and-deep Gaussian process experiments."""
    _setup_logging()


@main.command()
@_common
@click.option("--n", default=200, show_default=True, type=int)
def gen(**kw):
    """Write the synthetic benchmark to <out>/data.csv."""
    click.echo(_invoke(RunConfig(command="gen", **kw)))


@main.command("fit")
@_common
@_model_opts
def fit_cmd(**kw):
    """Train a model; writes checkpoint.json and loss_trace.csv."""
    _invoke(_cfg_from("fit", kw))
    click.echo(Path(kw["out"]) / "checkpoint.json")


@main.command("eval")
@_common
@_model_opts
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False))
def eval_cmd(**kw):
    """Score a checkpoint on the test rows of --data."""
    rep = _invoke(_cfg_from("eval", kw))
    click.echo(json.dumps(rep.summary()))


@main.command()
@_common
@_model_opts
@click.option("--folds", default=10, show_default=True, type=int)
@click.option("--jobs", default=1, show_default=True, type=int)
def cv(**kw):
    """k-fold cross-validation with per-fold fits and an aggregate report."""
    rep = _invoke(_cfg_from("cv", kw))
    click.echo(json.dumps(rep.summary()))


@main.command("sample-prior")
@_common
@click.option("--kind", default="cdgp", show_default=True, type=click.Choice(["cdgp", "tdgp", "tdgp-augmented"]))
@click.option("--depth", default=1, show_default=True, type=int)
@click.option("--mean-mode", default="zero", show_default=True, type=click.Choice(["zero", "linear-identity"]))
@click.option("--grid", default="-5:5:101", show_default=True, help="lo:hi:n or CSV file.")
def sample_prior_cmd(**kw):
    """Draw one deep prior sample on a 1D grid and write CSVs."""
    _invoke(RunConfig(command="sample-prior", **kw))
    click.echo(kw["out"])


@main.command()
@_common
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False))
@click.option("--grid", default="-2:2:21", show_default=True, help="lo:hi:n or CSV file.")
def export(**kw):
    """Latent space, lengthscale-field eigenvalues and relevances on a grid."""
    click.echo(_invoke(RunConfig(command="export", **kw)))


@main.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default=None, help="Override the output directory.")
def rerun(config, out):
    """Replay a run from its saved config.json."""
    cfg = RunConfig.from_json(config)
    if out:
        cfg.out = out
    _invoke(cfg)
    click.echo(cfg.out)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
