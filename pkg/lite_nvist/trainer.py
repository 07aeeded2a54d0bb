"""
Run configuration, checkpoint container, training/pretraining loops and evaluation.
"""
from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .autodiff import no_grad
from .camera import CameraPose, bound_rays, encode_conditioning, generate_rays, pixel_grid, relativize_pose
from .common import (METRICS_NAME, RESOLVED_CONFIG_NAME, CheckpointShapeError, CheckpointVersionError, ConfigError,
                     CorruptCheckpointError, DatasetIOError, DimensionError, EvaluationError, MetricError,
                     NormalizationError, apply_overrides, checkpoint_path, dataclass_items, format_ini, log_debug,
                     log_info, log_warn, parse_ini, read_ini, resolve_config_path, write_ini)
from .losses import LossWeights, mse_to_psnr, psnr, ssim, total_loss
from .model import (DecoderConfig, EncoderConfig, MaskedAutoencoder, NViST, RendererConfig, init_decoder_from_mae,
                    mae_pretrain_step)
from .optim import Adam, lr_schedule
from .renderer import RenderOptions, render_image, render_rays
from .scenes import DataConfig, Dataset, SceneRecord

METRIC_COLUMNS = ["step", "lr", "loss", "l2", "dist", "psnr"]
MAE_METRICS_NAME = "mae_metrics.csv"
MAE_METRIC_COLUMNS = ["step", "lr", "loss"]


# =========================
# Run configuration
# =========================

@dataclass(frozen=True)
class TrainConfig:
    lr_encoder: float = 6e-5
    lr_decoder_renderer: float = 4e-4
    total_steps: int = 20000
    pixels_per_image: int = 512
    images_per_step: int = 1
    seed: int = 0
    eval_every: int = 1000
    log_every: int = 50
    stratified: bool = True
    freeze_encoder: bool = False
    init_decoder_from_mae: bool = False
    mae_steps: int = 2000
    mae_lr: float = 1.5e-4

    def validate(self) -> "TrainConfig":
        if not (self.lr_encoder > 0 and self.lr_decoder_renderer > 0 and self.mae_lr > 0):
            raise ConfigError("learning rates must be positive")
        if self.total_steps <= 0 or self.mae_steps <= 0:
            raise ConfigError("total_steps and mae_steps must be positive")
        if self.pixels_per_image <= 0 or self.images_per_step <= 0:
            raise ConfigError("pixels_per_image and images_per_step must be positive")
        if self.eval_every <= 0 or self.log_every <= 0:
            raise ConfigError("eval_every and log_every must be positive")
        return self


SECTIONS = ("encoder", "decoder", "renderer", "loss", "train", "data")


@dataclass(frozen=True)
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    renderer: RendererConfig = field(default_factory=RendererConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> "RunConfig":
        self.encoder.validate()
        self.decoder.validate()
        self.loss.validate()
        self.train.validate()
        if self.encoder.embed_dim != self.decoder.embed_dim:
            raise DimensionError(f"encoder width {self.encoder.embed_dim} != decoder width {self.decoder.embed_dim}")
        return self

    def sections(self) -> Dict[str, Dict[str, Any]]:
        return {name: dataclass_items(getattr(self, name)) for name in SECTIONS}

    def to_ini(self) -> str:
        return format_ini(self.sections())

    def with_overrides(self, overrides: Mapping[str, Mapping[str, Any]]) -> "RunConfig":
        updates = {}
        for section, values in overrides.items():
            if section not in SECTIONS:
                raise ConfigError(f"Unknown config section [{section}]. Known: {list(SECTIONS)}")
            if values:
                updates[section] = apply_overrides(getattr(self, section), values, section)
        return replace(self, **updates)


def run_config_from_sections(sections: Mapping[str, Mapping[str, str]]) -> RunConfig:
    return RunConfig().with_overrides(sections).validate()


def load_run_config(source: Optional[str] = "toy",
                    overrides: Optional[Mapping[str, Mapping[str, Any]]] = None) -> RunConfig:
    """Preset name or .ini path, then flag overrides on top. Unknown sections/keys are errors."""
    cfg = RunConfig()
    if source:
        cfg = cfg.with_overrides(read_ini(resolve_config_path(source)))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg.validate()


def run_config_from_text(text: str) -> RunConfig:
    return run_config_from_sections(parse_ini(text, "<checkpoint>"))


def render_options(cfg: RendererConfig, stratified: bool = False) -> RenderOptions:
    return RenderOptions(n_samples=cfg.n_samples, stratified=stratified, background=tuple(cfg.background))


# =========================
# Checkpoint container
# =========================
# "NVST" | u32 version | u32 count | entries | payload | u32 crc32(payload)
# entry: u32 name length, name (utf-8), u8 dtype code, u8 rank, u64 dims[rank], u64 payload offset

CHECKPOINT_MAGIC = b"NVST"
CHECKPOINT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}


def _code_for(arr: np.ndarray) -> int:
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    for code, known in _DTYPES.items():
        if dt == known:
            return code
    raise CheckpointShapeError(f"unsupported checkpoint dtype {arr.dtype}")


def encode_checkpoint(arrays: Mapping[str, np.ndarray]) -> bytes:
    header = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(arrays))]
    payload = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        code = _code_for(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        key = name.encode("utf-8")
        header.append(struct.pack("<I", len(key)) + key)
        header.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        header.append(struct.pack("<Q", offset))
        payload.append(raw)
        offset += len(raw)
    body = b"".join(payload)
    return b"".join(header) + body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode_checkpoint(blob: bytes) -> Dict[str, np.ndarray]:
    if len(blob) < 16 or blob[:4] != CHECKPOINT_MAGIC:
        raise CorruptCheckpointError("not an NVST checkpoint (bad magic or truncated header)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})")
    pos = 12
    entries = []
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos: pos + n].decode("utf-8")
            if len(name.encode("utf-8")) != n:
                raise CorruptCheckpointError("truncated entry name")
            pos += n
            code, rank = struct.unpack_from("<BB", blob, pos)
            pos += 2
            dims = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            (offset,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
            if code not in _DTYPES:
                raise CorruptCheckpointError(f"unknown dtype code {code} for '{name}'")
            entries.append((name, _DTYPES[code], tuple(dims), offset))
    except (struct.error, UnicodeDecodeError) as e:
        raise CorruptCheckpointError(f"truncated or malformed checkpoint header: {e}") from e
    if len(blob) < pos + 4:
        raise CorruptCheckpointError("checkpoint is truncated")
    body = blob[pos:-4]
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptCheckpointError("checkpoint payload CRC mismatch")
    out: Dict[str, np.ndarray] = {}
    for name, dt, dims, offset in entries:
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        if offset + nbytes > len(body):
            raise CorruptCheckpointError(f"entry '{name}' runs past the payload")
        chunk = body[offset: offset + nbytes]
        out[name] = np.frombuffer(chunk, dtype=dt).reshape(dims).copy() if nbytes else np.zeros(dims, dtype=dt)
    return out


def write_checkpoint(path: Path, arrays: Mapping[str, np.ndarray]) -> None:
    blob = encode_checkpoint(arrays)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(blob)
        os.replace(tmp, path)
    except OSError as e:
        raise DatasetIOError(f"Cannot write checkpoint {path}: {e}") from e


def read_checkpoint(path: Path) -> Dict[str, np.ndarray]:
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError as e:
        raise CorruptCheckpointError(f"checkpoint not found: {path}") from e
    except OSError as e:
        raise CorruptCheckpointError(f"cannot read checkpoint {path}: {e}") from e
    arrays = decode_checkpoint(blob)
    log_debug(f"Read {len(arrays)} arrays ({len(blob):,} bytes) from {path}")
    return arrays


def checkpoint_arrays(model, optimizer: Optional[Adam] = None, step: int = 0,
                      config_text: str = "") -> Dict[str, np.ndarray]:
    arrays = {f"model/{name}": p.data for name, p in model.named_parameters()}
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    arrays["meta/step"] = np.asarray(step, dtype=np.int64)
    arrays["meta/config"] = np.array(bytearray(config_text.encode("utf-8")), dtype=np.uint8)
    return arrays


def save_checkpoint(path: Path, model, optimizer: Optional[Adam] = None, step: int = 0,
                    config_text: str = "") -> Path:
    write_checkpoint(Path(path), checkpoint_arrays(model, optimizer, step, config_text))
    return Path(path)


@dataclass
class CheckpointInfo:
    step: int
    config_text: str
    arrays: Dict[str, np.ndarray]


def load_checkpoint(path: Path, model=None, optimizer: Optional[Adam] = None,
                    prefix: str = "model/") -> CheckpointInfo:
    """Restore parameters (and moments) only after every shape has been checked."""
    arrays = read_checkpoint(path)
    try:
        if model is not None:
            model.check_state_dict(arrays, prefix=prefix)
        if optimizer is not None:
            optimizer.check_state_arrays(arrays)
    except DimensionError as e:
        raise CheckpointShapeError(f"{path}: {e}") from e
    if model is not None:
        model.load_state_dict(arrays, prefix=prefix)
    if optimizer is not None:
        optimizer.load_state_arrays(arrays)
    step = int(arrays.get("meta/step", np.asarray(0)))
    config_text = arrays["meta/config"].tobytes().decode("utf-8") if "meta/config" in arrays else ""
    return CheckpointInfo(step=step, config_text=config_text, arrays=arrays)


def latest_checkpoint(run_dir: Path) -> Optional[Path]:
    found = sorted(Path(run_dir).glob("ckpt_*.nvst"))
    return found[-1] if found else None


# =========================
# Model construction
# =========================

def build_model(cfg: RunConfig) -> NViST:
    model = NViST(cfg.encoder, cfg.decoder, cfg.renderer, np.random.default_rng(cfg.train.seed))
    if cfg.train.freeze_encoder:
        model.encoder.set_trainable(False)
    return model


def build_optimizer(model: NViST, cfg: TrainConfig) -> Adam:
    groups = model.param_groups()
    return Adam({"encoder": (cfg.lr_encoder, groups["encoder"]),
                 "decoder_renderer": (cfg.lr_decoder_renderer, groups["decoder_renderer"])})


def load_model(path: Path) -> Tuple[NViST, RunConfig, int]:
    """Rebuild a model from the configuration stored inside its checkpoint."""
    info = load_checkpoint(path)
    if not info.config_text:
        raise CorruptCheckpointError(f"{path} carries no configuration")
    cfg = run_config_from_text(info.config_text)
    model = build_model(cfg)
    try:
        model.load_state_dict(info.arrays, prefix="model/")
    except DimensionError as e:
        raise CheckpointShapeError(f"{path}: {e}") from e
    return model, cfg, info.step


def load_encoder_from_mae(model: NViST, path: Path) -> None:
    info = load_checkpoint(path)
    try:
        model.encoder.load_state_dict(info.arrays, prefix="model/encoder.")
    except DimensionError as e:
        raise CheckpointShapeError(f"{path}: {e}") from e


# =========================
# Training pairs
# =========================

@dataclass
class TrainingPair:
    image: np.ndarray          # input view (H, W, 3)
    cond: np.ndarray           # (18,)
    pose: CameraPose           # target pose relative to the input camera
    target: np.ndarray         # target view (H, W, 3)


def input_distance(pose: CameraPose) -> float:
    """Distance from the input camera to the scene center (the origin after normalization)."""
    z = float(np.linalg.norm(pose.center))
    if not z > 0:
        raise NormalizationError("input camera sits at the scene center")
    return z


def make_pair(dataset: Dataset, scene: SceneRecord, input_view: int, target_view: int) -> TrainingPair:
    pin = scene.views[input_view].pose
    z = input_distance(pin)
    rel = relativize_pose(pin, scene.views[target_view].pose, z)
    return TrainingPair(image=dataset.image(scene, input_view), cond=encode_conditioning(pin.focal, z),
                        pose=rel, target=dataset.image(scene, target_view))


def check_dataset(dataset: Dataset, cfg: RunConfig) -> None:
    w, h = dataset.image_size
    if (h, w) != tuple(cfg.encoder.image_size):
        raise ConfigError(f"dataset images are {h}x{w} but the encoder expects "
                          f"{cfg.encoder.image_size[0]}x{cfg.encoder.image_size[1]}")


# =========================
# Training
# =========================

@dataclass
class TrainResult:
    metrics: pd.DataFrame
    checkpoint: Optional[Path]
    step: int


def _write_metrics(path: Path, rows: List[Dict[str, float]], columns: List[str]) -> pd.DataFrame:
    df = pd.DataFrame(rows, columns=columns)
    try:
        df.to_csv(path, index=False, float_format="%.10g")
    except OSError as e:
        raise DatasetIOError(f"Cannot write {path}: {e}") from e
    return df


def _read_metrics(path: Path, upto: int) -> List[Dict[str, float]]:
    if not path.exists():
        return []
    df = pd.read_csv(path)
    return df[df["step"] <= upto].to_dict("records")


def train_step(model: NViST, dataset: Dataset, scenes: List[SceneRecord], cfg: RunConfig,
               rng: np.random.Generator) -> Dict[str, float]:
    """Forward + backward over `images_per_step` (input, target) pairs; gradients accumulate."""
    tc = cfg.train
    options = render_options(cfg.renderer, stratified=tc.stratified)
    scale = 1.0 / tc.images_per_step
    totals = {"loss": 0.0, "l2": 0.0, "dist": 0.0}
    for _ in range(tc.images_per_step):
        scene = scenes[int(rng.integers(len(scenes)))]
        i, j = (int(x) for x in rng.choice(len(scene.views), size=2, replace=False))
        pair = make_pair(dataset, scene, i, j)
        vm = model(pair.image, pair.cond)
        w, h = pair.pose.width, pair.pose.height
        n_pix = min(tc.pixels_per_image, w * h)
        sel = rng.choice(w * h, size=n_pix, replace=False)
        rays = bound_rays(generate_rays(pair.pose, pixel_grid(w, h)[sel]), vm.lo, vm.hi)
        out = render_rays(vm, model.renderer, rays, options, rng)
        target = pair.target.reshape(-1, 3)[sel]
        loss, parts = total_loss(out.rgb, target, out.weights, out.edges, cfg.loss)
        (loss * scale).backward()
        for key in totals:
            totals[key] += parts[key] * scale
    return totals


def train(dataset: Dataset, model: NViST, cfg: RunConfig, run_dir: Path,
          resume: Optional[Path] = None, progress: bool = False) -> TrainResult:
    """
    Seeded, resumable training. Step s draws its randomness from default_rng([seed, s]),
    so a resumed run continues exactly where an uninterrupted one would be.
    """
    tc = cfg.train
    check_dataset(dataset, cfg)
    scenes = dataset.split("train")
    if not scenes:
        raise DatasetIOError(f"dataset {dataset.root} has no training scenes")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_ini(run_dir / RESOLVED_CONFIG_NAME, cfg.sections())
    config_text = cfg.to_ini()
    optimizer = build_optimizer(model, tc)
    start = 0
    if resume is not None:
        start = load_checkpoint(resume, model, optimizer).step
        log_info(f"Resumed from {resume} at step {start}")
    rows = _read_metrics(run_dir / METRICS_NAME, start) if resume is not None else []
    last: Optional[Path] = None

    for step in tqdm(range(start, tc.total_steps), desc="train", disable=not progress,
                     initial=start, total=tc.total_steps):
        rng = np.random.default_rng([tc.seed, step])
        lr_scale = lr_schedule(step, tc.total_steps, 1.0)
        model.zero_grad()
        parts = train_step(model, dataset, scenes, cfg, rng)
        optimizer.step(lr_scale)
        done = step + 1
        row = {"step": done, "lr": tc.lr_decoder_renderer * lr_scale, "loss": parts["loss"],
               "l2": parts["l2"], "dist": parts["dist"], "psnr": mse_to_psnr(parts["l2"])}
        rows.append(row)
        if done % tc.log_every == 0 or done == 1:
            log_info(f"step {done}/{tc.total_steps} lr {row['lr']:.3e} loss {row['loss']:.5f} psnr {row['psnr']:.2f}")
        if done % tc.eval_every == 0 or done == tc.total_steps:
            last = save_checkpoint(checkpoint_path(run_dir, done), model, optimizer, done, config_text)
            _write_metrics(run_dir / METRICS_NAME, rows, METRIC_COLUMNS)
    df = _write_metrics(run_dir / METRICS_NAME, rows, METRIC_COLUMNS)
    return TrainResult(metrics=df, checkpoint=last, step=max(start, tc.total_steps))


def pretrain_mae(dataset: Dataset, mae: MaskedAutoencoder, cfg: RunConfig, run_dir: Path,
                 resume: Optional[Path] = None, progress: bool = False) -> TrainResult:
    """Masked-inpainting pretraining of the encoder on every training view."""
    tc = cfg.train
    check_dataset(dataset, cfg)
    scenes = dataset.split("train")
    if not scenes:
        raise DatasetIOError(f"dataset {dataset.root} has no training scenes")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_ini(run_dir / RESOLVED_CONFIG_NAME, cfg.sections())
    config_text = cfg.to_ini()
    optimizer = Adam({"mae": (tc.mae_lr, list(mae.named_parameters()))})
    start = 0
    if resume is not None:
        start = load_checkpoint(resume, mae, optimizer).step
        log_info(f"Resumed MAE pretraining from {resume} at step {start}")
    rows = _read_metrics(run_dir / MAE_METRICS_NAME, start) if resume is not None else []
    last: Optional[Path] = None
    for step in tqdm(range(start, tc.mae_steps), desc="mae", disable=not progress,
                     initial=start, total=tc.mae_steps):
        rng = np.random.default_rng([tc.seed, step])
        scene = scenes[int(rng.integers(len(scenes)))]
        image = dataset.image(scene, int(rng.integers(len(scene.views))))
        lr_scale = lr_schedule(step, tc.mae_steps, 1.0)
        loss = mae_pretrain_step(mae, image, cfg.encoder.mask_ratio, optimizer, rng, lr_scale)
        done = step + 1
        rows.append({"step": done, "lr": tc.mae_lr * lr_scale, "loss": loss})
        if done % tc.log_every == 0 or done == 1:
            log_info(f"mae step {done}/{tc.mae_steps} loss {loss:.5f}")
        if done % tc.eval_every == 0 or done == tc.mae_steps:
            last = save_checkpoint(checkpoint_path(run_dir, done), mae, optimizer, done, config_text)
            _write_metrics(run_dir / MAE_METRICS_NAME, rows, MAE_METRIC_COLUMNS)
    df = _write_metrics(run_dir / MAE_METRICS_NAME, rows, MAE_METRIC_COLUMNS)
    return TrainResult(metrics=df, checkpoint=last, step=max(start, tc.mae_steps))


def prepare_model(cfg: RunConfig, mae_checkpoint: Optional[Path] = None) -> NViST:
    """Fresh model, optionally seeded from MAE-pretrained encoder weights (and decoder blocks)."""
    model = build_model(cfg)
    if mae_checkpoint is not None:
        load_encoder_from_mae(model, mae_checkpoint)
        log_info(f"Loaded encoder weights from {mae_checkpoint}")
    if cfg.train.init_decoder_from_mae:
        copied = init_decoder_from_mae(model)
        log_info(f"Initialized {copied} decoder tensors from encoder blocks")
    return model


# =========================
# Evaluation
# =========================

@dataclass
class EvalReport:
    split: str
    psnr: float
    ssim: float
    baseline_psnr: float
    baseline_ssim: float
    per_view: pd.DataFrame

    def per_scene(self) -> pd.DataFrame:
        cols = ["psnr", "ssim", "baseline_psnr", "baseline_ssim"]
        return self.per_view.groupby("scene", sort=True)[cols].mean().reset_index()


def _safe_ssim(a: np.ndarray, b: np.ndarray, warned: List[bool]) -> float:
    try:
        return ssim(a, b)
    except MetricError as e:
        if not warned:
            log_warn(f"SSIM skipped: {e}")
            warned.append(True)
        return float("nan")


def score_images(pred: np.ndarray, target: np.ndarray, background: Tuple[float, float, float],
                 warned: Optional[List[bool]] = None) -> Dict[str, float]:
    warned = warned if warned is not None else []
    pred = np.clip(pred, 0.0, 1.0)
    base = np.broadcast_to(np.asarray(background, dtype=np.float64), target.shape)
    return {"psnr": psnr(pred, target), "ssim": _safe_ssim(pred, target, warned),
            "baseline_psnr": psnr(base, target), "baseline_ssim": _safe_ssim(base, target, warned)}


def evaluate(dataset: Dataset, model: NViST, cfg: RunConfig, split: str = "test",
             progress: bool = False) -> EvalReport:
    """First view of every scene is the input; every other view is rendered and scored."""
    scenes = dataset.split(split)
    if not scenes:
        raise EvaluationError(f"split '{split}' of {dataset.root} is empty")
    check_dataset(dataset, cfg)
    options = render_options(cfg.renderer)
    rows = []
    warned: List[bool] = []
    for scene in tqdm(scenes, desc=f"eval {split}", disable=not progress):
        with no_grad():
            pair = make_pair(dataset, scene, 0, 1)
            vm = model(pair.image, pair.cond)
        for j in range(1, len(scene.views)):
            pair = make_pair(dataset, scene, 0, j)
            rgb = render_image(vm, model.renderer, pair.pose, options).rgb
            rows.append({"scene": scene.id, "view": j,
                         **score_images(rgb, pair.target, cfg.renderer.background, warned)})
    return summarize(split, rows)


def summarize(split: str, rows: List[Dict[str, Any]]) -> EvalReport:
    if not rows:
        raise EvaluationError(f"no views to evaluate in split '{split}'")
    df = pd.DataFrame(rows)
    return EvalReport(split=split, psnr=float(df["psnr"].mean()), ssim=float(df["ssim"].mean()),
                      baseline_psnr=float(df["baseline_psnr"].mean()),
                      baseline_ssim=float(df["baseline_ssim"].mean()), per_view=df)


def evaluate_ground_truth(dataset: Dataset, split: str = "test") -> EvalReport:
    """Scores every target view against itself; a pipeline identity check."""
    scenes = dataset.split(split)
    if not scenes:
        raise EvaluationError(f"split '{split}' of {dataset.root} is empty")
    rows = []
    for scene in scenes:
        for j in range(1, len(scene.views)):
            img = dataset.image(scene, j)
            rows.append({"scene": scene.id, "view": j, **score_images(img, img, dataset.background)})
    return summarize(split, rows)
