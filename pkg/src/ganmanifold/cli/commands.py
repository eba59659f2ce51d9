"""Subcommand implementations.  Each returns nothing and writes into ``out``."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..checkpoint import load_checkpoint, save_checkpoint
from ..datasets import LabeledSet, SplitSpec, load_csv, split_semi_supervised, two_circles, two_moons
from ..errors import CheckpointError, ConfigError, ShapeError
from ..gan import ConsensusConfig, GanModel, GanOptimizers, sample_latent, train_gan
from ..nn import Mlp, MlpSpec, init_params, make_rng, rmsprop
from ..regularizers import RegularizerConfig, manifold_directions, paired_distance
from ..ssl_gan import SslGanModel, SslLossWeights, SslTrainState, predict, train_ssl_gan
from ..trainer import (DecoupledConfig, UnsupConfig, cluster_agreement, error_rate,
                       summarize_runs, train_decoupled, train_unsupervised)
from . import svg
from .config import ExperimentConfig, dump_config

log = logging.getLogger("ganmanifold.cli")

METRICS_HEADER = ("step", "loss_total", "loss_supervised", "loss_unsupervised",
                  "loss_feature_matching", "omega_manifold", "omega_ambient", "entropy", "ridge",
                  "error_rate_val")
SUMMARY_HEADER = ("seed", "error_rate_test", "error_rate_val", "steps", "wall_clock_s")
SWEEP_HEADER = ("value", "error_rate_test_mean", "error_rate_test_std", "error_rate_val_mean",
                "error_rate_val_std", "omega_manifold")

# rng streams derived from a run seed
SPLIT_STREAM, TEST_STREAM, SSL_STREAM, PLOT_STREAM, GAN_INIT_STREAM = 10, 11, 20, 30, 0


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def metrics_row(step, report=None, val=None, **override):
    values = {"loss_total": None, "loss_supervised": None, "loss_unsupervised": None,
              "loss_feature_matching": None, "omega_manifold": None, "omega_ambient": None,
              "entropy": None, "ridge": None}
    if report is not None:
        values.update(loss_total=report.total, loss_supervised=report.supervised,
                      loss_unsupervised=report.unsupervised,
                      loss_feature_matching=report.feature_matching,
                      omega_manifold=report.manifold, omega_ambient=report.ambient,
                      entropy=report.entropy, ridge=report.ridge)
    values.update(override)
    return [step] + [values[k] for k in METRICS_HEADER[1:-1]] + [val]


@dataclass
class SeedResult:
    seed: int
    test_error: float | None
    val_error: float | None
    steps: int
    wall: float
    last_manifold: float | None = None


def write_summary(path: Path, results: list[SeedResult], timing: bool) -> None:
    rows = [[r.seed, r.test_error, r.val_error, r.steps, r.wall if timing else None]
            for r in results]

    def stats(values):
        values = [v for v in values if v is not None]
        if not values:
            return None, None
        s = summarize_runs(values)
        return s.mean, s.std

    t_mean, t_std = stats([r.test_error for r in results])
    v_mean, v_std = stats([r.val_error for r in results])
    s_mean, s_std = stats([r.steps for r in results])
    w_mean, w_std = stats([r.wall for r in results]) if timing else (None, None)
    rows.append(["mean", t_mean, v_mean, s_mean, w_mean])
    rows.append(["std", t_std, v_std, s_std, w_std])
    write_csv(path, SUMMARY_HEADER, rows)


# ---------------------------------------------------------------------------
# shared helpers


def build_data(cfg: ExperimentConfig) -> LabeledSet:
    d = cfg.data
    rng = make_rng(d.seed)
    if d.name == "two_moons":
        return two_moons(d.n, d.noise, rng)
    if d.name == "two_circles":
        return two_circles(d.n, d.noise, d.radius_ratio, rng)
    return load_csv(d.path)


def build_test(cfg: ExperimentConfig) -> LabeledSet:
    """Fresh draw from the data distribution (the CSV source is its own test set)."""
    d = cfg.data
    rng = make_rng(d.seed, TEST_STREAM)
    if d.name == "two_moons":
        return two_moons(d.test_n, d.noise, rng)
    if d.name == "two_circles":
        return two_circles(d.test_n, d.noise, d.radius_ratio, rng)
    return load_csv(d.path)


def split(cfg: ExperimentConfig, data: LabeledSet, seed: int):
    spec = SplitSpec(cfg.data.labels_per_class, cfg.data.validation_fraction, seed)
    return split_semi_supervised(data, spec, make_rng(seed, SPLIT_STREAM))


def reg_config(cfg: ExperimentConfig) -> RegularizerConfig:
    r = cfg.regularizer
    try:
        return RegularizerConfig(r.epsilon, r.eta, r.variant, r.max_resample)
    except ValueError as exc:
        raise ConfigError(f"regularizer: {exc}") from None


def n_classes(data: LabeledSet) -> int:
    return int(data.ground_truth().max()) + 1


def classifier_spec(cfg: ExperimentConfig, dim: int, k: int) -> MlpSpec:
    c = cfg.classifier
    return MlpSpec((dim, *([c.hidden] * c.layers), k), c.activation)


def _gan_checkpoint_meta(cfg):
    return {"kind": "gan", "latent_dist": cfg.gan.latent_dist}


def run_gan(cfg: ExperimentConfig, data: LabeledSet, seed: int, out: Path, timing: bool):
    """Train one consensus GAN on the points of ``data``; checkpoints go to ``out``."""
    g = cfg.gan
    out.mkdir(parents=True, exist_ok=True)
    model = GanModel.toy(make_rng(seed, GAN_INIT_STREAM), data.dim, g.latent_dim, g.hidden,
                         g.layers, g.latent_dist)
    rows = []
    meta = _gan_checkpoint_meta(cfg)

    def on_log(step, d_loss, g_loss):
        rows.append(metrics_row(step, loss_total=d_loss, loss_unsupervised=d_loss,
                                loss_feature_matching=g_loss))
        log.info("gan seed %d step %d d_loss %.4f g_loss %.4f", seed, step, d_loss, g_loss)

    def on_checkpoint(step, m):
        save_checkpoint(out / f"gan_step_{step:05d}.npz",
                        {"generator": m.generator, "discriminator": m.discriminator},
                        seed=seed, step=step, meta=meta)

    start = time.perf_counter()
    opts = GanOptimizers(rmsprop(g.lr, g.decay), rmsprop(g.lr, g.decay))
    try:
        consensus = ConsensusConfig(g.gamma_c, g.hvp_step)
    except ValueError as exc:
        raise ConfigError(f"gan: {exc}") from None
    model, _ = train_gan(model, data.points, g.steps, g.batch_size, seed, consensus, opts,
                         cfg.experiment.log_interval, g.checkpoint_every, on_checkpoint, on_log)
    wall = time.perf_counter() - start
    save_checkpoint(out / "gan.npz", {"generator": model.generator,
                                      "discriminator": model.discriminator},
                    seed=seed, step=g.steps, meta=meta)
    write_csv(out / "metrics.csv", METRICS_HEADER, rows)
    return model, SeedResult(seed, None, None, g.steps, wall)


def load_generator(path, dim: int | None = None) -> tuple[Mlp, str]:
    ckpt = load_checkpoint(path)
    ckpt.require("generator")
    gen = ckpt.networks["generator"]
    if dim is not None and gen.spec.output_dim != dim:
        raise ShapeError(f"{path}: generator emits {gen.spec.output_dim}-d points, "
                         f"data is {dim}-d")
    return gen, ckpt.meta.get("latent_dist", "gaussian")


def resolve_generator(cfg: ExperimentConfig, data: LabeledSet, out: Path, timing: bool):
    """Generator from ``gan.checkpoint`` or, if unset, a GAN trained now into ``out/generator``."""
    if cfg.gan.checkpoint:
        return load_generator(cfg.gan.checkpoint, data.dim)
    log.info("no gan.checkpoint given; training a generator (seed %d)", cfg.gan.seed)
    model, _ = run_gan(cfg, data, cfg.gan.seed, out / "generator", timing)
    return model.generator, cfg.gan.latent_dist


# ---------------------------------------------------------------------------
# subcommands


def cmd_train_gan(cfg: ExperimentConfig, out: Path):
    data = build_data(cfg)
    timing = cfg.experiment.timing
    results = [run_gan(cfg, data, s, out / f"seed-{s}", timing)[1] for s in cfg.experiment.seeds]
    write_summary(out / "summary.csv", results, timing)
    return results


def _classifier_seed(cfg, data, test, generator, latent_dist, seed, out: Path):
    d = cfg.decoupled
    labeled, _, validation = split(cfg, data, seed)
    try:
        dcfg = DecoupledConfig(d.gamma_m, reg_config(cfg), d.epochs, d.batch_size, d.ema_decay,
                               d.latent_batch_size, d.lr, d.beta1, latent_dist)
    except ValueError as exc:
        raise ConfigError(f"decoupled: {exc}") from None
    spec = classifier_spec(cfg, data.dim, n_classes(data))
    rows = []

    def on_log(step, report, val):
        rows.append(metrics_row(step, report, val))
        log.info("classifier seed %d step %d loss %.5f val_err %s", seed, step, report.total, val)

    start = time.perf_counter()
    result = train_decoupled(spec, labeled, generator, dcfg, seed,
                             validation if len(validation) else None,
                             cfg.experiment.log_interval, on_log)
    wall = time.perf_counter() - start
    net = result.ema_net
    steps = d.epochs * math.ceil(len(labeled) / d.batch_size)
    test_err = error_rate(predict(net, test.points), test.ground_truth())
    val_err = (error_rate(predict(net, validation.points), validation.ground_truth())
               if len(validation) else None)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "classifier.npz", {"classifier": net, "generator": generator},
                    seed=seed, step=steps, meta={"kind": "classifier", "latent_dist": latent_dist})
    write_csv(out / "metrics.csv", METRICS_HEADER, rows)
    last = result.history[-1][1].manifold if result.history else None
    return SeedResult(seed, test_err, val_err, steps, wall, last)


def cmd_train_classifier(cfg: ExperimentConfig, out: Path):
    data, test = build_data(cfg), build_test(cfg)
    generator, latent_dist = resolve_generator(cfg, data, out, cfg.experiment.timing)
    results = [_classifier_seed(cfg, data, test, generator, latent_dist, s, out / f"seed-{s}")
               for s in cfg.experiment.seeds]
    write_summary(out / "summary.csv", results, cfg.experiment.timing)
    return results


def cmd_train_unsup(cfg: ExperimentConfig, out: Path):
    data, test = build_data(cfg), build_test(cfg)
    generator, latent_dist = resolve_generator(cfg, data, out, cfg.experiment.timing)
    u = cfg.unsup
    try:
        ucfg = UnsupConfig(u.gamma_L, u.gamma_K, u.gamma_h, reg_config(cfg), u.entropy_mode,
                           u.steps, u.batch_size, u.latent_batch_size, u.lr, u.beta1,
                           u.ema_decay, latent_dist)
    except ValueError as exc:
        raise ConfigError(f"unsup: {exc}") from None
    k = n_classes(data)
    spec = classifier_spec(cfg, data.dim, k)
    results = []
    for seed in cfg.experiment.seeds:
        rows = []

        def on_log(step, report, _val, seed=seed):
            rows.append(metrics_row(step, report, None))
            log.info("unsup seed %d step %d loss %.5f entropy %.4f", seed, step, report.total,
                     report.entropy)

        start = time.perf_counter()
        result = train_unsupervised(spec, data.points, generator, ucfg, seed,
                                    cfg.experiment.log_interval, on_log)
        wall = time.perf_counter() - start
        net = result.ema_net
        test_err = 1.0 - cluster_agreement(predict(net, test.points), test.ground_truth(), k)
        train_err = 1.0 - cluster_agreement(predict(net, data.points), data.ground_truth(), k)
        sdir = out / f"seed-{seed}"
        sdir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(sdir / "classifier.npz", {"classifier": net, "generator": generator},
                        seed=seed, step=u.steps, meta={"kind": "unsup", "latent_dist": latent_dist})
        write_csv(sdir / "metrics.csv", METRICS_HEADER, rows)
        last = result.history[-1][1].manifold if result.history else None
        results.append(SeedResult(seed, test_err, train_err, u.steps, wall, last))
    write_summary(out / "summary.csv", results, cfg.experiment.timing)
    return results


def ssl_model(cfg: ExperimentConfig, dim: int, k: int, seed: int) -> SslGanModel:
    s = cfg.ssl
    rng = make_rng(seed, GAN_INIT_STREAM)
    dspec = MlpSpec((dim, *([s.disc_hidden] * s.disc_layers), k), s.activation)
    gspec = MlpSpec((s.latent_dim, *([s.gen_hidden] * s.gen_layers), dim), s.activation)
    disc = Mlp(dspec, init_params(dspec, rng, s.init_std))
    gen = Mlp(gspec, init_params(gspec, rng, s.init_std))
    try:
        return SslGanModel(disc, gen, k, s.feature_layer or None, s.latent_dist)
    except (ShapeError, ValueError) as exc:
        raise ConfigError(f"ssl: {exc}") from None


def cmd_train_ssl_gan(cfg: ExperimentConfig, out: Path):
    data, test = build_data(cfg), build_test(cfg)
    s = cfg.ssl
    try:
        weights = SslLossWeights(s.gamma_m, s.gamma_a)
    except ValueError as exc:
        raise ConfigError(f"ssl: {exc}") from None
    reg = reg_config(cfg)
    k = n_classes(data)
    results = []
    for seed in cfg.experiment.seeds:
        labeled, unlabeled, validation = split(cfg, data, seed)
        model = ssl_model(cfg, data.dim, k, seed)
        state = SslTrainState.fresh(model, s.ema_decay, s.lr, s.beta1)
        rows = []
        interval = cfg.experiment.log_interval

        def on_step(step, m, st, report, seed=seed, validation=validation):
            if step % interval:
                return
            val = None
            if len(validation):
                val = error_rate(predict(m.discriminator, validation.points, st.ema.shadow),
                                 validation.ground_truth())
            rows.append(metrics_row(step, report, val))
            log.info("ssl seed %d step %d loss %.5f val_err %s", seed, step, report.total, val)

        start = time.perf_counter()
        model, state, reports = train_ssl_gan(model, labeled, unlabeled, s.steps, s.batch_size,
                                              weights, reg, make_rng(seed, SSL_STREAM), state,
                                              on_step)
        wall = time.perf_counter() - start
        ema_disc = model.discriminator.with_params(state.ema.shadow)
        test_err = error_rate(predict(ema_disc, test.points), test.ground_truth())
        val_err = (error_rate(predict(ema_disc, validation.points), validation.ground_truth())
                   if len(validation) else None)
        sdir = out / f"seed-{seed}"
        sdir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(sdir / "ssl_gan.npz",
                        {"classifier": ema_disc, "discriminator": model.discriminator,
                         "generator": model.generator},
                        seed=seed, step=s.steps, meta={"kind": "ssl-gan",
                                                       "latent_dist": s.latent_dist})
        write_csv(sdir / "metrics.csv", METRICS_HEADER, rows)
        last = reports[-1].manifold if reports else None
        results.append(SeedResult(seed, test_err, val_err, s.steps, wall, last))
    write_summary(out / "summary.csv", results, cfg.experiment.timing)
    return results


def _load_network(path, name):
    ckpt = load_checkpoint(path)
    ckpt.require(name)
    return ckpt, ckpt.networks[name]


def cmd_eval(cfg: ExperimentConfig, out: Path):
    if not cfg.eval.checkpoint:
        raise ConfigError("eval.checkpoint is required for eval")
    ckpt, net = _load_network(cfg.eval.checkpoint, cfg.eval.network)
    data, test = build_data(cfg), build_test(cfg)
    if net.spec.input_dim != data.dim:
        raise ShapeError(f"network expects {net.spec.input_dim}-d inputs, data is {data.dim}-d")
    if net.spec.output_dim < 2:
        raise CheckpointError(f"network {cfg.eval.network!r} is not a classifier")
    test_err = error_rate(predict(net, test.points), test.ground_truth())
    _, _, validation = split(cfg, data, ckpt.seed)
    val_err = (error_rate(predict(net, validation.points), validation.ground_truth())
               if len(validation) else None)
    results = [SeedResult(ckpt.seed, test_err, val_err, ckpt.step, 0.0)]
    write_summary(out / "summary.csv", results, False)
    return results


SWEEP_TARGETS = {
    ("gamma", "train-classifier"): ("decoupled", "gamma_m"),
    ("gamma", "train-ssl-gan"): ("ssl", "gamma_m"),
    ("gamma", "train-unsup"): ("unsup", "gamma_L"),
}


def cmd_sweep(cfg: ExperimentConfig, out: Path):
    sw = cfg.sweep
    if not sw.values:
        raise ConfigError("sweep.values must list at least one value")
    if not all(math.isfinite(v) for v in sw.values):
        raise ConfigError("sweep.values must be finite")
    section, key = SWEEP_TARGETS.get((sw.parameter, sw.task), ("regularizer", sw.parameter))
    if sw.task in ("train-classifier", "train-unsup") and not cfg.gan.checkpoint:
        # one generator serves every value
        run_gan(cfg, build_data(cfg), cfg.gan.seed, out / "generator", cfg.experiment.timing)
        cfg = cfg.with_values("gan", checkpoint=str(out / "generator" / "gan.npz"))
    rows = []
    for value in sw.values:
        sub = cfg.with_values(section, **{key: float(value)})
        sub_out = out / f"{sw.parameter}={value!r}"
        sub_out.mkdir(parents=True, exist_ok=True)
        results = COMMANDS[sw.task](sub, sub_out)
        test = [r.test_error for r in results if r.test_error is not None]
        val = [r.val_error for r in results if r.val_error is not None]
        ts = summarize_runs(test) if test else None
        vs = summarize_runs(val) if val else None
        manifold = [r.last_manifold for r in results if r.last_manifold is not None]
        rows.append([float(value), ts and ts.mean, ts and ts.std, vs and vs.mean, vs and vs.std,
                     float(np.mean(manifold)) if manifold else None])
    write_csv(out / "sweep.csv", SWEEP_HEADER, rows)
    return rows


def _read_metrics(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "step" not in reader.fieldnames:
            raise CheckpointError(f"{path}: not a metrics file")
        rows = list(reader)
    steps = [float(r["step"]) for r in rows]
    series = {}
    for name in METRICS_HEADER[1:]:
        vals = [float(r[name]) if r.get(name) else math.nan for r in rows]
        if any(math.isfinite(v) for v in vals):
            series[name] = vals
    return steps, series


def cmd_plot(cfg: ExperimentConfig, out: Path):
    p = cfg.plot
    seed = cfg.experiment.seeds[0]
    rng = make_rng(seed, PLOT_STREAM)
    target = out / f"{p.kind}.svg"
    if p.kind == "loss_curves":
        metrics = Path(p.metrics) if p.metrics else out / "metrics.csv"
        steps, series = _read_metrics(metrics)
        target.write_text(svg.loss_curves(steps, series), encoding="utf-8")
        return target
    if not p.checkpoint:
        raise ConfigError(f"plot.checkpoint is required for {p.kind}")
    ckpt = load_checkpoint(p.checkpoint)
    data = build_data(cfg)
    latent_dist = ckpt.meta.get("latent_dist", "gaussian")
    reg = reg_config(cfg)
    if p.kind == "decision_boundary":
        ckpt.require(p.network)
        net = ckpt.networks[p.network]
        labeled, unlabeled, _ = split(cfg, data, ckpt.seed)
        text = svg.decision_boundary(lambda pts: predict(net, pts), p.bounds, p.resolution,
                                     unlabeled.points, labeled.points, labeled.labels)
    else:
        ckpt.require("generator")
        gen = ckpt.networks["generator"]
        zs = sample_latent(p.n_samples, gen.spec.input_dim, latent_dist, rng)
        if p.kind == "samples_overlay":
            text = svg.samples_overlay(gen(zs), data.points, p.bounds)
        else:
            x0, rbar = manifold_directions(gen, zs, reg.eta, rng, reg.max_resample)
            if p.kind == "direction_field":
                text = svg.direction_field(x0, reg.epsilon * rbar, p.bounds, data.points)
            else:
                ckpt.require(p.network)
                net = ckpt.networks[p.network]
                term = paired_distance(net, x0, x0 + reg.epsilon * rbar)
                text = svg.regularizer_magnitude(x0, term.per_sample, p.bounds, data.points)
    target.write_text(text, encoding="utf-8")
    return target


COMMANDS = {
    "train-gan": cmd_train_gan,
    "train-ssl-gan": cmd_train_ssl_gan,
    "train-classifier": cmd_train_classifier,
    "train-unsup": cmd_train_unsup,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "plot": cmd_plot,
}


def run(cfg: ExperimentConfig, command: str, out: Path):
    if command not in COMMANDS:
        raise ConfigError(f"unknown subcommand {command!r}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(cfg), encoding="utf-8")
    return COMMANDS[command](cfg, out)
