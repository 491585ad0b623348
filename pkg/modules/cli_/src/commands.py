"""The ``srnas`` command line."""

import logging
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Mapping

import click
import numpy as np
import speedmodel
from attrs import define, field
from cellophane import data
from dataeval import (
    ImageError,
    bicubic_resize,
    evaluate,
    load_corpus,
    mean_row,
    synthetic_corpus,
    to_batch,
    to_image,
    write_report,
)
from diffcore import Tensor, no_grad
from latlab import (
    AnalyticCoeffs,
    CoefficientError,
    DatasetParseError,
    TimerResolutionError,
    build_dataset,
    compare_fusion,
    load_csv,
    measure_model,
    sample_configs,
    save_csv,
)
from nastrain import SearchConfig, SearchError, finetune, make_patches, run_search, validation_psnr, write_history
from ruamel.yaml import YAML
from ruamel.yaml.error import YAMLError
from srnet import (
    CheckpointError,
    CompactModel,
    SupernetModel,
    extract_architecture,
    load_compact,
    save_compact,
    save_supernet,
    snapshot_architecture,
)

from .config import ENV_VAR, ConfigError, load_config
from .report import predicted_latency, render

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
_LOGGER = logging.LoggerAdapter(logging.getLogger("srnas"), {})

Images = dict[str, np.ndarray]


class UsageFailure(click.ClickException):
    """Bad configuration, missing or malformed input, unwritable output."""

    exit_code = 2


class GateFailure(click.ClickException):
    """The command ran but its result missed a configured threshold."""

    exit_code = 1


_USAGE_ERRORS = (ConfigError, CheckpointError, DatasetParseError, ImageError, CoefficientError, OSError)
_RUN_ERRORS = (SearchError, speedmodel.SpeedModelError, TimerResolutionError)


class _Handler(logging.Handler):
    def emit(self, record: logging.LogRecord) -> None:
        try:
            click.echo(self.format(record), err=True)
        except Exception:  # pylint: disable=broad-except
            self.handleError(record)


def setup_logging(level: str) -> None:
    """Replace any handler a previous invocation installed with one that echoes to stderr."""
    root = logging.getLogger()
    for handler in [handler for handler in root.handlers if isinstance(handler, _Handler)]:
        root.removeHandler(handler)
    handler = _Handler()
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)-8s %(name)s: %(message)s", "%H:%M:%S"))
    root.addHandler(handler)
    root.setLevel(level.upper())


def _exit_codes(func: Callable) -> Callable:
    @wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except _USAGE_ERRORS as exc:
            _LOGGER.error(str(exc))
            raise UsageFailure(str(exc)) from exc
        except _RUN_ERRORS as exc:
            _LOGGER.error(str(exc))
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _parse_assignment(_: Any, __: Any, values: tuple[str, ...]) -> dict[str, Any]:
    overrides = {}
    for value in values:
        key, sep, raw = value.partition("=")
        if not sep or not key:
            raise click.BadParameter(f"expected KEY=VALUE, got '{value}'")
        try:
            overrides[key] = YAML(typ="safe").load(raw)
        except YAMLError as exc:
            raise click.BadParameter(f"cannot parse the value of '{key}': {exc}") from exc
    return overrides


@define
class Session:
    """Settings shared by every command of one invocation."""

    config_path: Path | None = None
    seed: int | None = None
    overrides: dict[str, Any] = field(factory=dict)

    def load(self, command: str, overrides: Mapping[str, Any] | None = None, seed: int | None = None) -> data.Container:
        """Validated configuration for ``command``; flags win over the file, the file over defaults."""
        seed = seed if seed is not None else self.seed
        config = load_config(self.config_path, {**self.overrides, **(overrides or {}), "seed": seed})
        images = config.dataeval.get("images")
        if images is not None and not Path(images).is_dir():
            raise ConfigError(f"dataeval.images: {images} is not a directory")
        _LOGGER.info(f"srnas {command} (seed {config.seed})")
        return config


def _prepare_output(path: Path, directory: bool = False) -> Path:
    path = Path(path)
    (path if directory else path.parent).mkdir(parents=True, exist_ok=True)
    return path


def search_config(config: data.Container, scale: int | None = None) -> SearchConfig:
    nas, adam = config.nastrain, config.diffcore.adam
    return SearchConfig(
        v_t=nas.v_t,
        gamma=nas.gamma,
        search_epochs=nas.search_epochs,
        finetune_epochs=nas.finetune_epochs,
        warmup_epochs=nas.warmup_epochs,
        lr=nas.lr,
        arch_lr=nas.get("arch_lr"),
        lr_halve_epochs=nas.lr_halve_epochs,
        finetune_lr_halve_epochs=nas.finetune_lr_halve_epochs,
        beta1=adam.beta1,
        beta2=adam.beta2,
        eps=adam.eps,
        batch_size=nas.batch_size,
        patch=nas.patch,
        patches_per_epoch=nas.patches_per_epoch,
        scale=config.srnet.scale if scale is None else scale,
        seed=config.seed,
        mode=nas.mode,
    )


def build_supernet(config: data.Container) -> SupernetModel:
    net = config.srnet
    return SupernetModel.build(
        scale=net.scale,
        blocks=net.blocks,
        trunk_width=net.trunk_width,
        widths=tuple(net.widths),
        kernels=tuple(net.kernels),
        thres=net.thres,
        v0=net.v0,
        skip_kernel=net.skip_kernel,
        mask_init=tuple(net.mask_init),
        seed=config.seed,
    )


def load_images(config: data.Container) -> Images:
    if config.dataeval.get("images") is not None:
        return load_corpus(Path(config.dataeval.images), _LOGGER)
    synthetic = config.dataeval.synthetic
    return synthetic_corpus(synthetic.count, tuple(synthetic.size), config.seed)


def split_images(images: Images, eval_count: int) -> tuple[Images, Images]:
    """The last ``eval_count`` images in name order are held out."""
    names = list(images)
    if len(names) <= eval_count:
        _LOGGER.warning(f"Only {len(names)} images, training and validating on all of them")
        return images, images
    return {name: images[name] for name in names[:-eval_count]}, {name: images[name] for name in names[-eval_count:]}


def bicubic_sr(scale: int) -> Callable[[np.ndarray], np.ndarray]:
    def run(lr: np.ndarray) -> np.ndarray:
        return bicubic_resize(lr, lr.shape[0] * scale, lr.shape[1] * scale)

    return run


def model_sr(compact: CompactModel) -> Callable[[np.ndarray], np.ndarray]:
    def run(lr: np.ndarray) -> np.ndarray:
        with no_grad():
            return to_image(compact.forward(Tensor(to_batch([lr]))).data[0])

    return run


seed_option = click.option("--seed", type=int, help="Seed of every random choice (overrides the group option)")
images_option = click.option(
    "--images",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    help="Directory of PNG images; a synthetic corpus is used when omitted",
)


@click.group()
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False, path_type=Path),
    envvar=ENV_VAR,
    help="YAML run configuration (default: $SRNAS_CONFIG)",
)
@click.option("--seed", type=int, help="Seed of every random choice")
@click.option(
    "--set",
    "overrides",
    multiple=True,
    metavar="KEY=VALUE",
    callback=_parse_assignment,
    help="Override one configuration key, e.g. nastrain.gamma=0.02",
)
@click.option("--log-level", type=click.Choice(LOG_LEVELS, case_sensitive=False), default="INFO", show_default=True)
@click.pass_context
def cli(
    ctx: click.Context,
    config_path: Path | None,
    seed: int | None,
    overrides: dict[str, Any],
    log_level: str,
) -> None:
    """Latency-constrained architecture search for super-resolution."""
    setup_logging(log_level)
    ctx.obj = Session(config_path=config_path, seed=seed, overrides=overrides)


@cli.command()
@click.option("--mode", type=click.Choice(["measured", "analytic"]), help="Latency source")
@click.option("--n", type=int, help="Number of width configurations")
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path), help="Dataset CSV")
@click.option(
    "--compare-fusion",
    "fusion_configs",
    type=click.IntRange(min=1),
    help="Also time this many configs with fused and unfused kernels and report both medians",
)
@seed_option
@click.pass_obj
@_exit_codes
def bench(
    session: Session,
    mode: str | None,
    n: int | None,
    out: Path,
    fusion_configs: int | None,
    seed: int | None,
) -> None:
    """Build a latency dataset of random block widths."""
    config = session.load("bench", {"latlab.mode": mode, "latlab.n": n}, seed)
    lab = config.latlab
    _prepare_output(out)
    dataset = build_dataset(
        lab.mode,
        lab.n,
        maxima=tuple(lab.maxima),
        seed=config.seed,
        spatial=tuple(lab.spatial),
        coeffs=AnalyticCoeffs(**lab.coeffs),
        stack=lab.stack,
        reps=lab.reps,
        warmup=lab.warmup,
        fusion=lab.fusion,
        n_jobs=lab.parallel,
        cpu=lab.cpu,
        logger=_LOGGER,
    )
    save_csv(dataset, out, _LOGGER)
    if len(dataset):
        t_ms = dataset.targets()
        click.echo(
            f"{len(dataset)} {lab.mode} records (seed {config.seed}): "
            f"min {t_ms.min():.4f} ms, median {np.median(t_ms):.4f} ms, max {t_ms.max():.4f} ms"
        )
    else:
        click.echo(f"0 {lab.mode} records (seed {config.seed})")
    if fusion_configs is not None:
        report = compare_fusion(
            sample_configs(fusion_configs, tuple(lab.maxima), config.seed, tuple(lab.spatial)),
            stack=lab.stack,
            reps=lab.reps,
            warmup=lab.warmup,
            seed=config.seed,
            cpu=lab.cpu,
            logger=_LOGGER,
        )
        click.echo(
            f"Fusion over {report.count} configs: fused median {report.fused_ms:.4f} ms, "
            f"unfused median {report.unfused_ms:.4f} ms"
        )


@cli.command("fit-speed")
@click.option(
    "--dataset",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Latency dataset CSV",
)
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path), help="Speed model file")
@click.option("--history", type=click.Path(dir_okay=False, path_type=Path), help="Per-epoch fit CSV")
@seed_option
@click.pass_obj
@_exit_codes
def fit_speed(session: Session, dataset: Path, out: Path, history: Path | None, seed: int | None) -> None:
    """Train the speed model on a latency dataset."""
    config = session.load("fit-speed", seed=seed)
    opts = config.speedmodel
    _prepare_output(out)
    history = _prepare_output(history or out.with_name(f"{out.stem}_history.csv"))
    fit = speedmodel.train_speed_model(
        load_csv(dataset, _LOGGER),
        split=opts.split,
        epochs=opts.epochs,
        lr=opts.lr,
        seed=config.seed,
        batch_size=opts.batch_size,
        lr_halve_epochs=tuple(opts.lr_halve_epochs),
        hidden=tuple(opts.hidden),
        logger=_LOGGER,
    )
    speedmodel.save(out, fit.model)
    speedmodel.write_history(fit.history, history)
    speedmodel.load(out)
    click.echo(f"train MAPE {fit.train_mape:.2%}, val MAPE {fit.val_mape:.2%} (seed {config.seed})")
    if fit.val_mape > opts.max_val_mape:
        raise GateFailure(f"Validation MAPE {fit.val_mape:.2%} exceeds the gate of {opts.max_val_mape:.2%}")


@cli.command()
@click.option(
    "--speed",
    "speed_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Speed model file",
)
@click.option("--vt", type=float, help="Latency budget in ms")
@click.option("--epochs", type=int, help="Search epochs")
@click.option("--mode", type=click.Choice(["both", "width", "depth", "none"]), help="Searched dimensions")
@click.option("--out", required=True, type=click.Path(file_okay=False, path_type=Path), help="Output directory")
@click.option("--resume", is_flag=True, help="Continue from the last finished epoch in --out")
@images_option
@seed_option
@click.pass_obj
@_exit_codes
def search(
    session: Session,
    speed_path: Path,
    vt: float | None,
    epochs: int | None,
    mode: str | None,
    out: Path,
    resume: bool,
    images: Path | None,
    seed: int | None,
) -> None:
    """Search block widths and depth under the latency budget."""
    config = session.load(
        "search",
        {
            "nastrain.v_t": vt,
            "nastrain.search_epochs": epochs,
            "nastrain.mode": mode,
            "dataeval.images": None if images is None else str(images),
        },
        seed,
    )
    _prepare_output(out, directory=True)
    speed = speedmodel.load(speed_path)
    cfg = search_config(config)
    train, _ = split_images(load_images(config), config.dataeval.eval_count)
    pairs = make_patches(train, cfg.scale, cfg.patch, cfg.patches_per_epoch, cfg.seed, config.dataeval.antialias)

    model, history = run_search(pairs, build_supernet(config), speed, cfg, out_dir=out, resume=resume, logger=_LOGGER)
    write_history(history, out / "history.csv")
    save_supernet(out / "supernet.npz", model, _LOGGER)
    compact = extract_architecture(model, _LOGGER)
    save_compact(out / "compact.npz", compact, _LOGGER)
    snapshot = snapshot_architecture(model, speed)
    text = render(
        config.templates.summary,
        seed=config.seed,
        v_t=cfg.v_t,
        snapshot=snapshot,
        params=compact.param_count(),
    )
    (out / "architecture.txt").write_text(text)
    click.echo(text, nl=False)
    if snapshot.v_n > cfg.v_t:
        _LOGGER.warning(f"Predicted latency {snapshot.v_n:.3f} ms is above the budget of {cfg.v_t:.3f} ms")


@cli.command("finetune")
@click.option(
    "--checkpoint",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Compact model to train",
)
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path), help="Fine-tuned model file")
@click.option("--epochs", type=int, help="Fine-tune epochs")
@images_option
@seed_option
@click.pass_obj
@_exit_codes
def finetune_command(
    session: Session,
    checkpoint: Path,
    out: Path,
    epochs: int | None,
    images: Path | None,
    seed: int | None,
) -> None:
    """Train the weights of an extracted model."""
    config = session.load(
        "finetune",
        {"nastrain.finetune_epochs": epochs, "dataeval.images": None if images is None else str(images)},
        seed,
    )
    _prepare_output(out)
    compact = load_compact(checkpoint)
    cfg = search_config(config, scale=compact.scale)
    antialias = config.dataeval.antialias
    train, held = split_images(load_images(config), config.dataeval.eval_count)
    pairs = make_patches(train, cfg.scale, cfg.patch, cfg.patches_per_epoch, cfg.seed, antialias)
    val_pairs = make_patches(held, cfg.scale, cfg.patch, max(cfg.batch_size, len(held)), cfg.seed + 1, antialias)

    before = validation_psnr(compact, val_pairs, cfg.batch_size)
    compact = finetune(compact, pairs, cfg, val_pairs, _LOGGER)
    after = validation_psnr(compact, val_pairs, cfg.batch_size)
    save_compact(out, compact, _LOGGER)
    click.echo(f"Validation PSNR {before:.3f} dB -> {after:.3f} dB (seed {config.seed})")


@cli.command("eval")
@click.option(
    "--checkpoint",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Compact model to evaluate",
)
@click.option("--bicubic", is_flag=True, help="Evaluate plain bicubic upscaling instead of a model")
@click.option("--report", type=click.Path(dir_okay=False, path_type=Path), help="Report CSV")
@images_option
@seed_option
@click.pass_obj
@_exit_codes
def eval_command(
    session: Session,
    checkpoint: Path | None,
    bicubic: bool,
    report: Path | None,
    images: Path | None,
    seed: int | None,
) -> None:
    """Y-channel PSNR/SSIM per image against a bicubic baseline."""
    if bicubic == (checkpoint is not None):
        raise click.UsageError("Give exactly one of --checkpoint and --bicubic")
    config = session.load("eval", {"dataeval.images": None if images is None else str(images)}, seed)
    if report is not None:
        _prepare_output(report)
    corpus = load_images(config)
    if config.dataeval.get("images") is None:
        _, corpus = split_images(corpus, config.dataeval.eval_count)

    if bicubic:
        scale, sr_fn = config.srnet.scale, bicubic_sr(config.srnet.scale)
    else:
        compact = load_compact(checkpoint)
        scale, sr_fn = compact.scale, model_sr(compact)
    rows = evaluate(
        corpus,
        sr_fn,
        scale,
        shave=config.dataeval.get("shave"),
        antialias=config.dataeval.antialias,
        logger=_LOGGER,
    )
    click.echo(f"{'image':<20} {'psnr_db':>9} {'ssim':>7} {'bicubic_psnr_db':>16} {'bicubic_ssim':>13}")
    for row in [*rows, mean_row(rows)]:
        click.echo(
            f"{row.image:<20} {row.psnr_db:>9.3f} {row.ssim:>7.4f} "
            f"{row.bicubic_psnr_db:>16.3f} {row.bicubic_ssim:>13.4f}"
        )
    if report is not None:
        write_report(rows, report)


@cli.command()
@click.option(
    "--checkpoint",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Compact model to export",
)
@click.option("--out", required=True, type=click.Path(file_okay=False, path_type=Path), help="Output directory")
@click.option(
    "--speed",
    "speed_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Speed model for the predicted latency",
)
@click.option("--measure", is_flag=True, help="Time the model on this host")
@seed_option
@click.pass_obj
@_exit_codes
def export(
    session: Session,
    checkpoint: Path,
    out: Path,
    speed_path: Path | None,
    measure: bool,
    seed: int | None,
) -> None:
    """Write the compact model and its architecture report."""
    config = session.load("export", seed=seed)
    _prepare_output(out, directory=True)
    compact = load_compact(checkpoint)
    save_compact(out / "model.npz", compact, _LOGGER)
    spatial = tuple(config.latlab.spatial)
    predicted = None
    if speed_path is not None:
        predicted = predicted_latency(compact, speedmodel.load(speed_path), config.srnet.v0)
    measured = None
    if measure:
        lab = config.latlab
        measured = measure_model(compact, spatial, lab.reps, lab.warmup, config.seed, lab.cpu, _LOGGER)
    text = render(
        config.templates.export,
        seed=config.seed,
        scale=compact.scale,
        widths=compact.widths(),
        params=compact.param_count(),
        macs=compact.macs(*spatial),
        spatial=spatial,
        predicted=predicted,
        fps=None if not predicted or predicted <= 0 else 1000.0 / predicted,
        measured=measured,
    )
    (out / "architecture.txt").write_text(text)
    click.echo(text, nl=False)


def main() -> None:
    cli(prog_name="srnas")
