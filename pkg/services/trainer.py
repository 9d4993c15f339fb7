"""
Двухэтапное обучение LE-GAN.

1) pretrain: D учится отличать HR от bicubic-апсемпла LR, L_E учится сам
   через вспомогательную линейную голову (восстановление 4x4-усреднённого патча).
2) joint_train: critic_steps_per_gen шагов критика, затем шаг G+L_E по SSRP.

Кривые пишутся каждую итерацию, IS/FID раз в eval_period по тестовым патчам.
Весь случайный выбор батчей идёт через один torch.Generator, его состояние в чекпоинте.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from torch import nn
from tqdm import tqdm

from config import IS_CLUSTERS
from services.hsi_data import (
    CubeValidationError,
    HSICube,
    PatchPairDataset,
    SynthSpec,
    build_dataset,
    load_cube,
    normalize_radiance,
    synth_cube,
)
from services.legan_losses import (
    LossBreakdown,
    LossComponents,
    content_mse_loss,
    critic_loss,
    generator_adversarial_loss,
    gradient_penalty,
    js_gan_losses,
    latent_reg_loss,
    spatial_texture_loss,
    spectral_contextual_loss,
    ssrp_loss,
)
from services.legan_models import (
    NetworkWeights,
    bicubic_upsample_tensor,
    cubes_to_tensor,
    init_weights,
)
from services.sr_metrics import (
    DiversityReport,
    MetricInputError,
    SurrogateClassifier,
    fid_details,
    inception_score_from_probs,
)
from services.tensor_archive import (
    CheckpointError,
    config_from_header,
    config_to_header,
    load_archive,
    save_archive,
)
from services.train_config import (
    ConfigError,
    LossWeights,
    TrainConfig,
    ablation_preset,
    dump_config,
    read_config_text,
    with_switches,
)

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ("iter", "spectral", "spatial", "adversarial", "latent", "total", "is", "fid", "content", "critic")
MAX_EVAL_SAMPLES = 64


class TrainingDivergedError(RuntimeError):
    """Потеря стала нечисловой: обучение остановлено (CLI -> код 3)"""

    def __init__(self, iteration: int, what: str, value: float) -> None:
        super().__init__(f"{what} is not finite ({value}) at iteration {iteration}")
        self.iteration = iteration


# ---------- data ----------

@dataclass(frozen=True)
class TrainData:
    train_lr: torch.Tensor
    train_hr: torch.Tensor
    train_lr_up: torch.Tensor
    test_lr: torch.Tensor
    test_hr: torch.Tensor
    test_lr_up: torch.Tensor
    wavelengths: tuple[float, ...]

    @property
    def n_train(self) -> int:
        return int(self.train_hr.shape[0])

    @property
    def n_test(self) -> int:
        return int(self.test_hr.shape[0])


def load_scenes(config: TrainConfig) -> list[HSICube]:
    d = config.data
    if d.source == "cubes":
        scenes = [load_cube(p) for p in d.cube_paths]
        if d.normalize:
            scenes = [normalize_radiance(c) for c in scenes]
        bad = [c.bands for c in scenes if c.bands != d.bands]
        if bad:
            raise ConfigError(f"cube band counts {bad} differ from configured bands {d.bands}")
        return scenes
    return [
        synth_cube(SynthSpec(
            height=d.scene_size, width=d.scene_size, bands=d.bands,
            n_endmembers=d.n_endmembers, smoothness=d.smoothness, seed=config.seed * 1000 + i,
        ))
        for i in range(d.n_scenes)
    ]


def build_training_set(config: TrainConfig) -> PatchPairDataset:
    d = config.data
    return build_dataset(
        load_scenes(config), config.scale, d.hr_patch, d.stride, d.train_ratio, d.snr_db, config.seed,
    )


def prepare_data(ds: PatchPairDataset, scale: int) -> TrainData:
    train = ds.train_pairs()
    if not train:
        raise CubeValidationError("dataset has no training pairs")
    test = ds.test_pairs() or train

    def stack(pairs: Sequence[Any]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        lr = cubes_to_tensor([p.lr for p in pairs])
        hr = cubes_to_tensor([p.hr for p in pairs])
        return lr, hr, bicubic_upsample_tensor(lr, scale)

    tr = stack(train)
    te = stack(test)
    return TrainData(*tr, *te, wavelengths=train[0].hr.wavelengths)


# ---------- state ----------

@dataclass
class CurveRow:
    iter: int
    spectral: float
    spatial: float
    adversarial: float
    latent: float
    total: float
    is_score: float = math.nan
    fid: float = math.nan
    content: float = 0.0
    critic: float = math.nan


@dataclass
class TrainState:
    config: TrainConfig
    generator: NetworkWeights
    critic: NetworkWeights
    encoder: NetworkWeights | None
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    rng: torch.Generator
    iter: int = 0
    pretrained_iters: int = 0
    curves: list[CurveRow] = field(default_factory=list)

    def curves_frame(self) -> pd.DataFrame:
        return curves_to_frame(self.curves)


def _adam(params: Iterable[nn.Parameter], config: TrainConfig) -> torch.optim.Adam:
    a = config.adam
    return torch.optim.Adam(list(params), lr=a.lr, betas=(a.beta1, a.beta2), eps=a.eps)


def init_state(config: TrainConfig) -> TrainState:
    generator = init_weights(config.generator, config.seed)
    critic = init_weights(config.discriminator, config.seed + 1)
    encoder = init_weights(config.encoder, config.seed + 2) if config.use_encoder else None

    g_params = list(generator.module.parameters())
    if encoder is not None:
        g_params += list(encoder.module.parameters())

    return TrainState(
        config=config,
        generator=generator,
        critic=critic,
        encoder=encoder,
        opt_g=_adam(g_params, config),
        opt_d=_adam(critic.module.parameters(), config),
        rng=torch.Generator().manual_seed(config.seed + 4),
    )


# ---------- loss plumbing ----------

def uses_js(config: TrainConfig) -> bool:
    return config.loss_variant == "js" or config.discriminator.sigmoid


def effective_weights(config: TrainConfig) -> LossWeights:
    """Веса SSRP с учётом варианта потерь и режима ablation."""
    w = config.loss_weights
    update: dict[str, float] = {}
    if config.loss_variant in ("wasserstein_plain", "js") or not config.use_encoder:
        update["mu_latent"] = 0.0
    if config.loss_mode == "mse_adversarial":
        update.update(lambda_spectral=0.0, eta_spatial=0.0, nu_content=max(w.nu_content, 1.0))
    return w.model_copy(update=update)


def _sample(state: TrainState, n: int) -> torch.Tensor:
    return torch.randint(0, n, (state.config.batch_size,), generator=state.rng)


def _check_finite(value: float, iteration: int, what: str) -> None:
    if not math.isfinite(value):
        raise TrainingDivergedError(iteration, what, value)


def critic_step(state: TrainState, lr: torch.Tensor, hr: torch.Tensor, iteration: int) -> float:
    """Один шаг критика; G и L_E не меняются."""
    cfg = state.config
    d = state.critic.module
    g = state.generator.module
    d.train()
    with torch.no_grad():
        sr = g(lr)

    real = d.taps(hr)
    fake = d.taps(sr)
    if uses_js(cfg):
        loss, _ = js_gan_losses(real.raw_score, fake.raw_score)
    else:
        loss = critic_loss(real.score, fake.score)
        if cfg.gradient_penalty:
            loss = loss + cfg.gp_weight * gradient_penalty(d, hr, sr, generator=state.rng)

    state.opt_d.zero_grad(set_to_none=True)
    loss.backward()
    state.opt_d.step()

    value = float(loss.detach())
    weights = effective_weights(cfg)
    if state.encoder is not None and weights.mu_latent > 0:
        # латентный член от D не зависит: только логируется
        with torch.no_grad():
            e = state.encoder.module
            value += weights.mu_latent * float(latent_reg_loss(e(hr), e(sr)))
    _check_finite(value, iteration, "critic loss")
    return value


def generator_components(
    state: TrainState,
    lr: torch.Tensor,
    hr: torch.Tensor,
    lr_up: torch.Tensor,
) -> LossComponents:
    cfg = state.config
    d = state.critic.module
    sr = state.generator.module(lr)
    taps_sr = d.taps(sr)
    with torch.no_grad():
        taps_hr = d.taps(hr)

    spectral = spectral_contextual_loss(
        taps_sr.feat_mu, taps_hr.feat_mu,
        mode=cfg.spectral_mode, lr_up=lr_up, hr=hr,
        n_bands=cfg.data.bands, max_positions=cfg.context_max_positions,
    )
    spatial = spatial_texture_loss(taps_sr.feat_phi, taps_hr.feat_phi)
    if uses_js(cfg):
        _, adversarial = js_gan_losses(taps_hr.raw_score, taps_sr.raw_score)
    else:
        adversarial = generator_adversarial_loss(taps_sr.score)

    if state.encoder is not None:
        e = state.encoder.module
        latent = latent_reg_loss(e(hr), e(sr))
    else:
        latent = torch.zeros((), dtype=sr.dtype)

    content = content_mse_loss(sr, hr) if cfg.loss_mode == "mse_adversarial" else None
    return LossComponents(spectral=spectral, spatial=spatial, adversarial=adversarial, latent=latent, content=content)


def generator_step(state: TrainState, lr: torch.Tensor, hr: torch.Tensor, lr_up: torch.Tensor, iteration: int) -> LossBreakdown:
    """Один шаг G (+L_E); D в режиме eval и не обновляется."""
    state.generator.module.train()
    state.critic.module.eval()
    if state.encoder is not None:
        state.encoder.module.train()

    breakdown = ssrp_loss(generator_components(state, lr, hr, lr_up), effective_weights(state.config))
    _check_finite(breakdown.total, iteration, "SSRP total")

    state.opt_g.zero_grad(set_to_none=True)
    state.opt_d.zero_grad(set_to_none=True)
    breakdown.objective.backward()
    state.opt_g.step()
    # градиенты, дошедшие до D через taps, не применяются
    state.opt_d.zero_grad(set_to_none=True)
    return breakdown


def train_iteration(state: TrainState, data: TrainData, iteration: int, do_generator: bool = True) -> CurveRow:
    cfg = state.config
    critic_value = math.nan
    for _ in range(cfg.critic_steps_per_gen):
        idx = _sample(state, data.n_train)
        critic_value = critic_step(state, data.train_lr[idx], data.train_hr[idx], iteration)

    if not do_generator:
        return CurveRow(iter=iteration, spectral=math.nan, spatial=math.nan, adversarial=math.nan,
                        latent=math.nan, total=math.nan, critic=critic_value)

    idx = _sample(state, data.n_train)
    b = generator_step(state, data.train_lr[idx], data.train_hr[idx], data.train_lr_up[idx], iteration)
    return CurveRow(
        iter=iteration, spectral=b.spectral, spatial=b.spatial, adversarial=b.adversarial,
        latent=b.latent, total=b.total, content=b.content, critic=critic_value,
    )


# ---------- pretraining ----------

def pretrain(state: TrainState, data: TrainData, progress: bool = False) -> TrainState:
    """
    D: HR против bicubic-апсемпла LR. L_E: латент -> линейная голова ->
    4x4-усреднённый HR-патч (голова потом выбрасывается).
    """
    cfg = state.config
    if data.n_train == 0:
        raise CubeValidationError("pretraining needs at least one training pair")
    if cfg.pretrain_iters == 0:
        return state

    d = state.critic.module
    aux: nn.Linear | None = None
    opt_e: torch.optim.Adam | None = None
    if state.encoder is not None:
        gen = torch.Generator().manual_seed(cfg.seed + 3)
        aux = nn.Linear(cfg.encoder.latent_dim, cfg.data.bands * 16)
        with torch.no_grad():
            aux.weight.copy_(torch.randn(aux.weight.shape, generator=gen) / math.sqrt(cfg.encoder.latent_dim))
            aux.bias.zero_()
        opt_e = _adam(list(state.encoder.module.parameters()) + list(aux.parameters()), cfg)

    bar = tqdm(range(cfg.pretrain_iters), desc="pretrain", disable=not progress)
    for it in bar:
        idx = _sample(state, data.n_train)
        hr = data.train_hr[idx]
        fake = data.train_lr_up[idx]

        d.train()
        real_t, fake_t = d.taps(hr), d.taps(fake)
        if uses_js(cfg):
            loss_d, _ = js_gan_losses(real_t.raw_score, fake_t.raw_score)
        else:
            loss_d = critic_loss(real_t.score, fake_t.score)
        state.opt_d.zero_grad(set_to_none=True)
        loss_d.backward()
        state.opt_d.step()
        _check_finite(float(loss_d.detach()), it, "pretrain critic loss")

        if state.encoder is not None and aux is not None and opt_e is not None:
            e = state.encoder.module
            e.train()
            target = F.adaptive_avg_pool2d(hr, 4).flatten(1)
            loss_e = F.mse_loss(aux(e(hr)), target)
            opt_e.zero_grad(set_to_none=True)
            loss_e.backward()
            opt_e.step()
            _check_finite(float(loss_e.detach()), it, "pretrain encoder loss")

    d.eval()
    if state.encoder is not None:
        state.encoder.module.eval()
    state.pretrained_iters = cfg.pretrain_iters
    logger.info("pretrain done: %s iterations", cfg.pretrain_iters)
    return state


# ---------- evaluation during training ----------

def critic_features(state: TrainState, x: torch.Tensor) -> np.ndarray:
    """Выход последнего Maxpool-блока, усреднённый по пространству: (N, C)."""
    d = state.critic.module
    was_training = d.training
    d.eval()
    try:
        with torch.no_grad():
            taps = d.taps(x)
    finally:
        d.train(was_training)
    return F.relu(taps.feat_phi).mean(dim=(2, 3)).double().numpy()


def generate(state: TrainState, lr: torch.Tensor, batch_size: int = 8) -> torch.Tensor:
    g = state.generator.module
    was_training = g.training
    g.eval()
    try:
        with torch.no_grad():
            return torch.cat([g(lr[i:i + batch_size]) for i in range(0, lr.shape[0], batch_size)])
    finally:
        g.train(was_training)


def diversity_scores(state: TrainState, data: TrainData) -> DiversityReport:
    n = min(data.n_test, MAX_EVAL_SAMPLES)
    if n < 2:
        return DiversityReport(is_score=math.nan, fid=math.nan, n_samples=n)
    hr = data.test_hr[:n]
    sr = generate(state, data.test_lr[:n])
    real = critic_features(state, hr)
    gen = critic_features(state, sr)
    try:
        clf = SurrogateClassifier(n_classes=IS_CLUSTERS, seed=state.config.seed).fit(real)
        is_value = inception_score_from_probs(clf.predict_proba(gen))
        fid_result = fid_details(real, gen)
    except (MetricInputError, ValueError) as e:
        logger.warning("IS/FID skipped at iter %s: %s", state.iter, e)
        return DiversityReport(is_score=math.nan, fid=math.nan, n_samples=n)
    return DiversityReport(
        is_score=is_value, fid=fid_result.value, n_samples=n, fid_regularized=fid_result.regularized,
    )


# ---------- joint training ----------

def joint_train(
    state: TrainState,
    data: TrainData,
    until: int | None = None,
    run_dir: str | Path | None = None,
    progress: bool = False,
    on_row: Callable[[CurveRow], None] | None = None,
) -> TrainState:
    cfg = state.config
    target = cfg.joint_iters if until is None else min(until, cfg.joint_iters)

    bar = tqdm(range(state.iter + 1, target + 1), desc="joint", disable=not progress)
    for it in bar:
        row = train_iteration(state, data, it)
        if it % cfg.eval_period == 0:
            div = diversity_scores(state, data)
            row.is_score, row.fid = div.is_score, div.fid
            logger.info("iter %s: total=%.5f IS=%.4f FID=%.4f", it, row.total, row.is_score, row.fid)
        state.curves.append(row)
        state.iter = it
        if on_row is not None:
            on_row(row)
        if run_dir is not None and cfg.checkpoint_period and it % cfg.checkpoint_period == 0:
            save_checkpoint(state, Path(run_dir) / f"ckpt-{it}")
        if progress:
            bar.set_postfix(total=f"{row.total:.4f}")
    return state


def train(config: TrainConfig, data: TrainData, run_dir: str | Path | None = None, progress: bool = False) -> TrainState:
    state = init_state(config)
    pretrain(state, data, progress=progress)
    joint_train(state, data, run_dir=run_dir, progress=progress)
    if run_dir is not None:
        root = Path(run_dir)
        save_checkpoint(state, root / f"ckpt-{state.iter}")
        write_curves(state.curves, root / "curves.csv")
    return state


# ---------- ablation ----------

def apply_ablation(config: TrainConfig) -> dict[str, Any]:
    return ablation_preset(config.ablation_model)


def configure_for_ablation(config: TrainConfig, model: int | None = None) -> TrainConfig:
    if model is not None:
        config = config.model_copy(update={"ablation_model": model})
    return with_switches(config, apply_ablation(config))


def grid_search(
    base: TrainConfig,
    grid: dict[str, Sequence[float]],
    data: TrainData,
    score: Callable[[TrainState, TrainData], dict[str, float]],
) -> pd.DataFrame:
    """
    Перебор весов (lambda_spectral, eta_spatial, sigma_adversarial, mu_latent) по сетке:
    на каждую точку: полный короткий прогон и строка метрик из `score`.
    """
    unknown = set(grid) - {f for f in LossWeights.model_fields}
    if unknown:
        raise ConfigError(f"unknown loss weights in grid: {sorted(unknown)}")
    keys = list(grid)
    rows = []
    for values in itertools.product(*(grid[k] for k in keys)):
        point = dict(zip(keys, values))
        try:
            weights = LossWeights.model_validate({**base.loss_weights.model_dump(), **point})
        except ValueError as e:
            logger.warning("grid point %s skipped: %s", point, e)
            continue
        state = train(base.model_copy(update={"loss_weights": weights}), data)
        rows.append({**point, **score(state, data)})
        logger.info("grid point %s done", point)
    return pd.DataFrame(rows)


# ---------- curves ----------

def curves_to_frame(rows: Sequence[CurveRow]) -> pd.DataFrame:
    frame = pd.DataFrame([{f.name: getattr(r, f.name) for f in fields(CurveRow)} for r in rows],
                         columns=[f.name for f in fields(CurveRow)])
    return frame.rename(columns={"is_score": "is"})[list(CURVE_COLUMNS)]


def write_curves(rows: Sequence[CurveRow], path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    curves_to_frame(rows).to_csv(path, index=False)


def read_curves(path: str | Path) -> list[CurveRow]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"curves not found: {p}")
    frame = pd.read_csv(p, float_precision="round_trip").rename(columns={"is": "is_score"})
    rows = []
    for rec in frame.to_dict(orient="records"):
        rec["iter"] = int(rec["iter"])
        rows.append(CurveRow(**{f.name: rec.get(f.name, math.nan) for f in fields(CurveRow)}))
    return rows


# ---------- checkpoints ----------

def save_network(weights: NetworkWeights, path: str | Path) -> None:
    header = {"kind": weights.kind, "init_seed": weights.init_seed, **config_to_header(weights.config)}
    save_archive(path, weights.tensors, header)


def restore_network(path: str | Path, expected: NetworkWeights) -> None:
    """Загружает тензоры в `expected`, проверяя совпадение архитектуры."""
    header, tensors = load_archive(path)
    if header.get("kind") != expected.kind:
        raise CheckpointError(f"{path}: archive holds a {header.get('kind')}, expected {expected.kind}")
    stored = config_from_header(type(expected.config), header)
    if stored != expected.config:
        raise CheckpointError(
            f"{path}: architecture mismatch, archive has {stored!r}, expected {expected.config!r}"
        )
    try:
        expected.module.load_state_dict(tensors, strict=True)
    except RuntimeError as e:
        raise CheckpointError(f"{path}: tensors do not fit the architecture: {e}") from e
    expected.init_seed = int(header.get("init_seed", expected.init_seed))


def _optimizer_tensors(opt: torch.optim.Optimizer) -> dict[str, torch.Tensor]:
    out: dict[str, torch.Tensor] = {}
    for idx, slots in opt.state_dict()["state"].items():
        for key, value in slots.items():
            t = value if isinstance(value, torch.Tensor) else torch.tensor(value, dtype=torch.float64)
            out[f"state.{idx}.{key}"] = t
    return out


def _load_optimizer(opt: torch.optim.Optimizer, tensors: dict[str, torch.Tensor]) -> None:
    state: dict[int, dict[str, torch.Tensor]] = {}
    for name, t in tensors.items():
        _, idx, key = name.split(".", 2)
        state.setdefault(int(idx), {})[key] = t
    sd = opt.state_dict()
    sd["state"] = state
    try:
        opt.load_state_dict(sd)
    except (ValueError, KeyError) as e:
        raise CheckpointError(f"optimizer state does not fit: {e}") from e


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.cfg").write_text(dump_config(state.config), encoding="utf-8")
    save_network(state.generator, root / "generator")
    save_network(state.critic, root / "critic")
    if state.encoder is not None:
        save_network(state.encoder, root / "encoder")
    save_archive(root / "optim_g", _optimizer_tensors(state.opt_g), {"kind": "adam"})
    save_archive(root / "optim_d", _optimizer_tensors(state.opt_d), {"kind": "adam"})
    save_archive(
        root / "state",
        {"rng": state.rng.get_state()},
        {"iter": state.iter, "pretrained_iters": state.pretrained_iters,
         "generator": state.generator.descriptor, "critic": state.critic.descriptor},
    )
    write_curves(state.curves, root / "curves.csv")
    logger.info("checkpoint saved: %s (iter %s)", root, state.iter)


def restore_checkpoint(path: str | Path, config: TrainConfig | None = None) -> TrainState:
    root = Path(path)
    cfg_path = root / "config.cfg"
    if not cfg_path.exists():
        raise CheckpointError(f"checkpoint {root} has no config.cfg")
    stored = read_config_text(cfg_path.read_text(encoding="utf-8"))
    if config is not None and config != stored:
        raise CheckpointError(f"checkpoint {root} was written for a different config")
    config = config or stored

    state = init_state(config)
    restore_network(root / "generator", state.generator)
    restore_network(root / "critic", state.critic)
    if state.encoder is not None:
        restore_network(root / "encoder", state.encoder)

    _, g_tensors = load_archive(root / "optim_g")
    _, d_tensors = load_archive(root / "optim_d")
    _load_optimizer(state.opt_g, g_tensors)
    _load_optimizer(state.opt_d, d_tensors)

    header, tensors = load_archive(root / "state")
    try:
        state.iter = int(header["iter"])
        state.pretrained_iters = int(header["pretrained_iters"])
        state.rng.set_state(tensors["rng"])
    except (KeyError, ValueError, RuntimeError) as e:
        raise CheckpointError(f"corrupt state archive in {root}: {e}") from e

    state.curves = read_curves(root / "curves.csv")
    state.critic.module.eval()
    logger.info("checkpoint restored: %s (iter %s)", root, state.iter)
    return state


def latest_checkpoint(run_dir: str | Path) -> Path:
    ckpts = sorted(Path(run_dir).glob("ckpt-*"), key=lambda p: int(p.name.split("-", 1)[1]))
    if not ckpts:
        raise CheckpointError(f"no checkpoints in {run_dir}")
    return ckpts[-1]
