"""End-to-end orchestration: configuration, stage DAG, sampling, reports.

The pipeline is a DAG of named stages over one output directory:

    scatter -> fit-pca -> whiten -> train-decoder -> sample / vizmatrix
                               \\-> train-vae ------/
                               \\-> train-gan -----/
                               \\-> test-normality -> report

Each stage reads the artifacts of its upstream stages, never its own, and
writes its result atomically, so a finished stage can be re-run or resumed
at any time; with an identical config and seed the artifact bytes come out
identical.  Missing upstream artifacts raise DependencyError naming the
stage that has to run first.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, fields, replace

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import load_idx_images
from .errors import DependencyError, FormatError, ParameterError
from .imaging import ImageGrid, export_grid, grid_from_images
from .models import (
    Decoder,
    DecoderConfig,
    Gan,
    TrainSettings,
    Vae,
    train,
)
from .pca import PcaModel, fit_pca, whiten
from .scattering import ScatteringConfig, build_filter_bank, flatten_coefficients, scatter
from .stats import ComponentResult, NormalityReport, test_all_components
from .tensor import Tensor

STAGES = (
    "scatter",
    "fit-pca",
    "whiten",
    "train-decoder",
    "train-vae",
    "train-gan",
    "sample",
    "vizmatrix",
    "test-normality",
    "report",
)


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of the pipeline; config files use these field names as keys."""

    dataset: str = "data/train-images.idx3-ubyte"
    dataset_name: str = "mnist"
    out_dir: str = "runs/default"
    seed: int = 0
    n_train: int = 10000
    scattering_j: int = 2
    scattering_l: int = 8
    n_components: int = 512
    latent_width: int = 64
    beta: float = 0.001
    kl_warmup_epochs: int = 24
    decoder_epochs: int = 50
    vae_epochs: int = 31
    gan_epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    gan_learning_rate: float = 2e-4
    gan_beta1: float = 0.5
    gan_final_activation: str = "linear"
    channel_schedule: tuple = (128, 64, 32)
    sample_source: str = "gaussian"
    sample_count: int = 16
    viz_component_1: int = 0
    viz_component_2: int = 1
    viz_values: tuple = (-10.0, -5.0, 5.0, 10.0)
    alpha_levels: tuple = (0.05, 0.01)
    normality_samples: int = 0  # 0 means every available row

    def __post_init__(self):
        if self.n_components < 2:
            raise ParameterError(
                f"n_components must be >= 2 (visualization needs two components), "
                f"got {self.n_components}"
            )
        if self.latent_width > self.n_components:
            raise ParameterError(
                f"latent_width {self.latent_width} must not exceed "
                f"n_components {self.n_components}"
            )
        if self.n_train < 1:
            raise ParameterError(f"n_train must be positive, got {self.n_train}")
        object.__setattr__(self, "channel_schedule", tuple(self.channel_schedule))
        object.__setattr__(self, "viz_values", tuple(self.viz_values))
        object.__setattr__(self, "alpha_levels", tuple(self.alpha_levels))


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; '#' starts a comment, blanks ignored."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {lineno} is not 'key = value': {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _coerce(name: str, text: str, example):
    if isinstance(example, bool):
        raise ParameterError(f"unsupported config field type for {name}")
    if isinstance(example, int):
        return int(text)
    if isinstance(example, float):
        return float(text)
    if isinstance(example, tuple):
        if not text:
            return ()
        items = [piece.strip() for piece in text.split(",")]
        kind = type(example[0]) if example else float
        return tuple(kind(piece) for piece in items)
    return text


def config_from_mapping(raw: dict, overrides: dict | None = None) -> PipelineConfig:
    """Build a PipelineConfig from string values, applying typed overrides last."""
    defaults = PipelineConfig()
    known = {f.name: getattr(defaults, f.name) for f in fields(PipelineConfig)}
    parsed = {}
    for key, text in raw.items():
        if key not in known:
            raise ParameterError(f"unknown config key {key!r}")
        parsed[key] = _coerce(key, text, known[key])
    config = PipelineConfig(**parsed)
    if overrides:
        config = replace(config, **overrides)
    return config


def load_config(path: str | None, overrides: dict | None = None) -> PipelineConfig:
    """Read a config file (optional) and apply CLI overrides on top."""
    raw = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as handle:
            raw = parse_config_text(handle.read())
    return config_from_mapping(raw, overrides)


# ---------------------------------------------------------------------------
# artifacts and dependencies

_ARTIFACTS = {
    "scatter": "coeffs.sgnc",
    "fit-pca": "pca.sgnc",
    "whiten": "whitened.sgnc",
    "train-decoder": "decoder.sgnc",
    "train-vae": "vae.sgnc",
    "train-gan": "gan.sgnc",
    "vizmatrix": "vizmatrix.pgm",
    "test-normality": "normality.tsv",
    "report": "report.txt",
}


def artifact_path(config: PipelineConfig, stage: str) -> str:
    if stage == "sample":
        return os.path.join(config.out_dir, f"samples_{config.sample_source}.pgm")
    if stage not in _ARTIFACTS:
        raise ParameterError(f"unknown stage {stage!r}; choose from {STAGES}")
    return os.path.join(config.out_dir, _ARTIFACTS[stage])


def _require_artifact(config: PipelineConfig, upstream: str) -> str:
    path = artifact_path(config, upstream)
    if not os.path.exists(path):
        raise DependencyError(
            f"missing artifact {os.path.basename(path)} from stage '{upstream}'; "
            f"run '{upstream}' first"
        )
    return path


def _require_dataset(config: PipelineConfig) -> str:
    if not os.path.exists(config.dataset):
        raise ParameterError(f"dataset path does not exist: {config.dataset}")
    return config.dataset


def stage_seed(base_seed: int, stage: str) -> int:
    """Stable per-stage substream of the pipeline seed."""
    sequence = np.random.SeedSequence([base_seed, STAGES.index(stage)])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# model persistence on top of the checkpoint container

def save_pca(path: str, model: PcaModel) -> None:
    save_checkpoint(path, "pca", {
        "mean": model.mean,
        "components": model.components,
        "eigenvalues": model.eigenvalues,
        "variance_floor": np.array([model.variance_floor]),
    })


def load_pca(path: str) -> PcaModel:
    kind, tensors = load_checkpoint(path)
    if kind != "pca":
        raise FormatError(f"expected a pca checkpoint, got kind {kind!r}")
    return PcaModel(
        mean=tensors["mean"],
        components=tensors["components"],
        eigenvalues=tensors["eigenvalues"],
        variance_floor=float(tensors["variance_floor"][0]),
    )


def _model_tensors(model) -> dict:
    entries = {}
    for name, param in model.named_parameters().items():
        entries[name] = param.data
    for name, buffer in model.named_buffers().items():
        entries[name] = buffer
    return entries


def save_model(path: str, model) -> None:
    """Persist a decoder, VAE, or GAN with enough metadata to rebuild it."""
    entries = {}
    if model.kind == "decoder":
        cfg = model.config
        entries["meta"] = np.array(
            [cfg.n_components, cfg.base_spatial, cfg.out_channels], dtype=np.float64
        )
        entries["schedule"] = np.asarray(cfg.channel_schedule, dtype=np.float64)
    elif model.kind == "vae":
        entries["meta"] = np.array(
            [model.n_features, model.latent_width, model.beta], dtype=np.float64
        )
    elif model.kind == "gan":
        relu_flag = 1.0 if model.final_activation == "relu" else 0.0
        entries["meta"] = np.array(
            [model.n_features, model.noise_width, relu_flag], dtype=np.float64
        )
    else:
        raise ParameterError(f"cannot checkpoint model kind {model.kind!r}")
    entries.update(_model_tensors(model))
    save_checkpoint(path, model.kind, entries)


def _restore_tensors(model, tensors: dict, path: str) -> None:
    for name, param in model.named_parameters().items():
        if name not in tensors:
            raise FormatError(f"checkpoint {path} is missing tensor {name!r}")
        value = tensors[name]
        if value.shape != param.data.shape:
            raise FormatError(
                f"checkpoint tensor {name!r} has shape {value.shape}, "
                f"model expects {param.data.shape}"
            )
        param.data[...] = value
    for name, buffer in model.named_buffers().items():
        if name not in tensors:
            raise FormatError(f"checkpoint {path} is missing buffer {name!r}")
        buffer[...] = tensors[name]


def load_model(path: str):
    """Rebuild a decoder, VAE, or GAN from its checkpoint."""
    kind, tensors = load_checkpoint(path)
    if "meta" not in tensors:
        raise FormatError(f"checkpoint {path} has no meta entry")
    meta = tensors["meta"]
    if kind == "decoder":
        schedule = tuple(int(c) for c in tensors["schedule"])
        config = DecoderConfig(
            n_components=int(meta[0]),
            base_spatial=int(meta[1]),
            channel_schedule=schedule,
            out_channels=int(meta[2]),
        )
        model = Decoder(config, seed=0)
    elif kind == "vae":
        model = Vae(int(meta[0]), latent_width=int(meta[1]), beta=float(meta[2]), seed=0)
    elif kind == "gan":
        activation = "relu" if meta[2] > 0.5 else "linear"
        model = Gan(int(meta[0]), noise_width=int(meta[1]),
                    final_activation=activation, seed=0)
    else:
        raise FormatError(f"unknown model kind {kind!r} in checkpoint {path}")
    _restore_tensors(model, tensors, path)
    return model


# ---------------------------------------------------------------------------
# sampling and visualization

_SOURCE_STAGES = {"decoder": "train-decoder", "vae": "train-vae", "gan": "train-gan"}


def _load_from_checkpoints(checkpoints, key: str):
    stage = _SOURCE_STAGES[key]
    path = checkpoints.get(key) if hasattr(checkpoints, "get") else None
    if path is None or not os.path.exists(path):
        raise DependencyError(
            f"missing {key} checkpoint; run '{stage}' first"
        )
    return load_model(path)


def _grid_extents(count: int):
    cols = math.isqrt(count)
    if cols * cols < count:
        cols += 1
    rows = -(-count // cols)
    if rows * cols != count:
        raise ParameterError(
            f"count {count} does not fill a rows-by-cols grid; "
            f"use a count like 16 that factors into near-square extents"
        )
    return rows, cols


def sample_images(source: str, count: int, seed: int, checkpoints) -> ImageGrid:
    """Decode ``count`` coefficient vectors drawn from one latent source.

    gaussian draws w ~ N(0, I) directly in coefficient space; vae decodes
    z ~ N(0, I_H) through the VAE decoder; gan pushes the same kind of z
    through the generator.  Every w then goes through the image decoder,
    with tiles laid out row-major.
    """
    if source not in ("gaussian", "vae", "gan"):
        raise ParameterError(
            f"source must be one of gaussian, vae, gan; got {source!r}"
        )
    if count < 1:
        raise ParameterError(f"count must be positive, got {count}")
    rows, cols = _grid_extents(count)
    decoder = _load_from_checkpoints(checkpoints, "decoder")
    rng = np.random.default_rng(seed)
    if source == "gaussian":
        w = rng.standard_normal((count, decoder.config.n_components))
    elif source == "vae":
        vae = _load_from_checkpoints(checkpoints, "vae")
        z = rng.standard_normal((count, vae.latent_width))
        w = vae.decode(Tensor(z)).data
    else:
        gan = _load_from_checkpoints(checkpoints, "gan")
        z = rng.standard_normal((count, gan.noise_width))
        w = gan.generate(Tensor(z), training=False).data
    images = decoder(Tensor(w), training=False).data
    return grid_from_images(images, rows, cols)


def visualization_matrix(c1_index: int, c2_index: int, values,
                         decoder_checkpoint) -> ImageGrid:
    """Decode a grid scanning two coefficient components over ``values``.

    Tile (i, j) decodes the vector with component c1 = values[i] and
    component c2 = values[j], all other components zero, so moving down a
    column increases the first component.  Swapping the two indices
    transposes the grid exactly.
    """
    decoder = (decoder_checkpoint if isinstance(decoder_checkpoint, Decoder)
               else load_model(str(decoder_checkpoint)))
    if decoder.kind != "decoder":
        raise ParameterError(f"expected a decoder checkpoint, got {decoder.kind!r}")
    values = tuple(float(v) for v in values)
    if not values:
        raise ParameterError("values list must be nonempty")
    n_components = decoder.config.n_components
    for index in (c1_index, c2_index):
        if not 0 <= index < n_components:
            raise ParameterError(
                f"component index {index} out of range [0, {n_components})"
            )
    if c1_index == c2_index:
        raise ParameterError("the two component indices must differ")
    side = len(values)
    w = np.zeros((side * side, n_components), dtype=np.float64)
    for i, first in enumerate(values):
        for j, second in enumerate(values):
            w[i * side + j, c1_index] = first
            w[i * side + j, c2_index] = second
    images = decoder(Tensor(w), training=False).data
    return grid_from_images(images, side, side)


def report_table1(report: NormalityReport, dataset: str = "mnist") -> str:
    """Plain-text rejection-count table: one row per test, one column per α."""
    if not report.alpha_levels:
        raise ParameterError("report has no alpha levels to tabulate")
    header = ["dataset", "test"] + [f"alpha={a:g}" for a in report.alpha_levels]
    rows = [header]
    for test, label in (("k2", "K2"), ("jb", "J-B")):
        counts = [str(report.rejections(test, a)) for a in report.alpha_levels]
        rows.append([dataset, label] + counts)
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip()
             for row in rows]
    lines.append("")
    lines.append(f"components tested: {report.n_tested}")
    if report.untestable:
        lines.append(
            "untestable (zero variance): " + ", ".join(map(str, report.untestable))
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# stages

def _write_text_atomic(path: str, text: str) -> None:
    import tempfile

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def _load_images(config: PipelineConfig) -> np.ndarray:
    images = load_idx_images(_require_dataset(config))
    return images[: config.n_train]


def _stage_scatter(config: PipelineConfig) -> str:
    images = _load_images(config)
    _, _, height, width = images.shape
    scat_config = ScatteringConfig(
        J=config.scattering_j, L=config.scattering_l,
        image_height=height, image_width=width,
    )
    bank = build_filter_bank(scat_config)
    out = scatter(images, bank)
    flat = flatten_coefficients(out).data.astype(np.float32)
    path = artifact_path(config, "scatter")
    save_checkpoint(path, "scattering", {"values": flat})
    return path


def _load_flat(config: PipelineConfig) -> np.ndarray:
    kind, tensors = load_checkpoint(_require_artifact(config, "scatter"))
    if kind != "scattering":
        raise FormatError(f"expected scattering checkpoint, got kind {kind!r}")
    return tensors["values"].astype(np.float64)


def _stage_fit_pca(config: PipelineConfig) -> str:
    flat = _load_flat(config)
    model = fit_pca(flat, config.n_components)
    path = artifact_path(config, "fit-pca")
    save_pca(path, model)
    return path


def _stage_whiten(config: PipelineConfig) -> str:
    flat = _load_flat(config)
    model = load_pca(_require_artifact(config, "fit-pca"))
    w = whiten(model, flat)
    path = artifact_path(config, "whiten")
    save_checkpoint(path, "whitened", {"values": w.values.data})
    return path


def _load_whitened(config: PipelineConfig) -> np.ndarray:
    kind, tensors = load_checkpoint(_require_artifact(config, "whiten"))
    if kind != "whitened":
        raise FormatError(f"expected whitened checkpoint, got kind {kind!r}")
    return tensors["values"]


def _stage_train_decoder(config: PipelineConfig) -> str:
    w = _load_whitened(config)
    images = _load_images(config)[: w.shape[0]]
    schedule = config.channel_schedule
    upsamplings = len(schedule) - 1
    side = images.shape[2]
    base, remainder = divmod(side, 2 ** upsamplings)
    if remainder:
        raise ParameterError(
            f"image side {side} is not divisible by 2^{upsamplings}; "
            f"adjust channel_schedule"
        )
    decoder = Decoder(
        DecoderConfig(
            n_components=config.n_components,
            base_spatial=base,
            channel_schedule=schedule,
            out_channels=images.shape[1],
        ),
        seed=stage_seed(config.seed, "train-decoder"),
    )
    settings = TrainSettings(
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        epochs=config.decoder_epochs,
        seed=stage_seed(config.seed, "train-decoder"),
    )
    train(decoder, (w, images), settings)
    path = artifact_path(config, "train-decoder")
    save_model(path, decoder)
    return path


def _stage_train_vae(config: PipelineConfig) -> str:
    w = _load_whitened(config)
    vae = Vae(
        n_features=w.shape[1],
        latent_width=config.latent_width,
        beta=config.beta,
        seed=stage_seed(config.seed, "train-vae"),
    )
    settings = TrainSettings(
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        epochs=config.vae_epochs,
        seed=stage_seed(config.seed, "train-vae"),
        kl_warmup_epochs=config.kl_warmup_epochs,
    )
    train(vae, w, settings)
    path = artifact_path(config, "train-vae")
    save_model(path, vae)
    return path


def _stage_train_gan(config: PipelineConfig) -> str:
    w = _load_whitened(config)
    gan = Gan(
        n_features=w.shape[1],
        noise_width=config.latent_width,
        final_activation=config.gan_final_activation,
        seed=stage_seed(config.seed, "train-gan"),
    )
    settings = TrainSettings(
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        gan_learning_rate=config.gan_learning_rate,
        gan_beta1=config.gan_beta1,
        epochs=config.gan_epochs,
        seed=stage_seed(config.seed, "train-gan"),
    )
    train(gan, w, settings)
    path = artifact_path(config, "train-gan")
    save_model(path, gan)
    return path


def _checkpoints_mapping(config: PipelineConfig) -> dict:
    mapping = {}
    for key, stage in _SOURCE_STAGES.items():
        path = artifact_path(config, stage)
        if os.path.exists(path):
            mapping[key] = path
    return mapping


def _stage_sample(config: PipelineConfig) -> str:
    _require_artifact(config, "train-decoder")
    if config.sample_source in ("vae", "gan"):
        _require_artifact(config, _SOURCE_STAGES[config.sample_source])
    grid = sample_images(
        config.sample_source,
        config.sample_count,
        stage_seed(config.seed, "sample"),
        _checkpoints_mapping(config),
    )
    path = artifact_path(config, "sample")
    export_grid(grid, path)
    return path


def _stage_vizmatrix(config: PipelineConfig) -> str:
    decoder_path = _require_artifact(config, "train-decoder")
    grid = visualization_matrix(
        config.viz_component_1,
        config.viz_component_2,
        config.viz_values,
        decoder_path,
    )
    path = artifact_path(config, "vizmatrix")
    export_grid(grid, path)
    return path


def _stage_test_normality(config: PipelineConfig) -> str:
    w = _load_whitened(config)
    if config.normality_samples:
        w = w[: config.normality_samples]
    report = test_all_components(w, alpha_levels=config.alpha_levels)
    lines = ["# alpha_levels: " + ", ".join(f"{a:g}" for a in report.alpha_levels)]
    if report.untestable:
        lines.append("# untestable: " + ", ".join(map(str, report.untestable)))
    text = "\n".join(lines) + "\n" + report.to_table()
    path = artifact_path(config, "test-normality")
    _write_text_atomic(path, text)
    return path


def _parse_normality_table(text: str) -> NormalityReport:
    alpha_levels: tuple = (0.05, 0.01)
    untestable: list = []
    results = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("# alpha_levels:"):
            alpha_levels = tuple(
                float(piece) for piece in line.split(":", 1)[1].split(",")
            )
            continue
        if line.startswith("# untestable:"):
            untestable = [int(piece) for piece in line.split(":", 1)[1].split(",")]
            continue
        if line.startswith("#") or line.startswith("component_index"):
            continue
        cells = line.split("\t")
        if len(cells) != 5:
            raise FormatError(f"malformed normality table row: {line!r}")
        results.append(ComponentResult(
            component=int(cells[0]),
            k2_stat=float(cells[1]),
            k2_pvalue=float(cells[2]),
            jb_stat=float(cells[3]),
            jb_pvalue=float(cells[4]),
        ))
    return NormalityReport(results=results, alpha_levels=alpha_levels,
                           untestable=untestable)


def _stage_report(config: PipelineConfig) -> str:
    table_path = _require_artifact(config, "test-normality")
    with open(table_path, "r", encoding="utf-8") as handle:
        report = _parse_normality_table(handle.read())
    text = report_table1(report, dataset=config.dataset_name)
    path = artifact_path(config, "report")
    _write_text_atomic(path, text)
    return path


_STAGE_FUNCTIONS = {
    "scatter": _stage_scatter,
    "fit-pca": _stage_fit_pca,
    "whiten": _stage_whiten,
    "train-decoder": _stage_train_decoder,
    "train-vae": _stage_train_vae,
    "train-gan": _stage_train_gan,
    "sample": _stage_sample,
    "vizmatrix": _stage_vizmatrix,
    "test-normality": _stage_test_normality,
    "report": _stage_report,
}


def run_stage(stage: str, config: PipelineConfig) -> str:
    """Run one pipeline stage; returns the path of the artifact it wrote."""
    if stage not in _STAGE_FUNCTIONS:
        raise ParameterError(f"unknown stage {stage!r}; choose from {STAGES}")
    os.makedirs(config.out_dir, exist_ok=True)
    return _STAGE_FUNCTIONS[stage](config)


def run_pipeline(config: PipelineConfig, stages=STAGES) -> dict:
    """Run stages in order, returning {stage: artifact path}."""
    written = {}
    for stage in stages:
        written[stage] = run_stage(stage, config)
    return written
