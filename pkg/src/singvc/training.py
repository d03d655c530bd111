"""Two-phase training.

Phase I alternates, per batch, a confusion-classifier update (it learns to
name the singer from the latent) with an autoencoder update (encoder,
decoder and embeddings minimize teacher-forced reconstruction minus
lambda times the classifier's success).  Phase II keeps doing that and
adds backtranslation: crops are converted to a mixup identity - a random
convex combination of two singers' embeddings - with the current network,
and the network is trained to convert them back to their source singer.
The synthetic set is refreshed every few epochs; the confusion classifier
never trains on synthetic items.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import audio, inference, model as modeling
from .dataset import AudioCache, DatasetManifest, SingerRegistry, sample_batch
from .model import project_embeddings, shifted_inputs

log = logging.getLogger(__name__)


class ConfigError(Exception):
    """Bad or missing training-configuration value, reported by key."""


class BacktranslationError(Exception):
    """Backtranslation set cannot be generated (too few singers or short files)."""


@dataclass
class TrainConfig:
    """Training settings; config files use these exact names (`lambda` for the
    adversarial weight) as flat `key = value` lines."""

    lambda_weight: float = 0.01
    batch_size: int = 8
    crop_len: int = 16000
    phase1_epochs: int = 5
    phase2_epochs: int = 5
    mixup_refresh_epochs: int = 3
    backtranslation_weight: float = 1.0
    rng_seed: int = 0
    learning_rate: float = 1e-3
    lr_decay: float = 0.98
    use_mixup: bool = True
    steps_per_epoch: int = 0
    sample_rate: int = 16000
    generation_temperature: float = 1.0
    # architecture
    encoder_blocks: int = 3
    encoder_layers: int = 10
    encoder_channels: int = 128
    encoder_kernel: int = 3
    latent_dim: int = 64
    pool: int = 800
    decoder_blocks: int = 4
    decoder_layers: int = 10
    decoder_kernel: int = 2
    residual_channels: int = 128
    skip_channels: int = 128
    confusion_channels: int = 128
    confusion_kernel: int = 3

    def validate(self):
        if self.lambda_weight < 0:
            raise ConfigError("lambda must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.crop_len <= 0 or self.crop_len % self.pool != 0:
            raise ConfigError(f"crop_len must be a positive multiple of pool ({self.pool})")
        if self.phase1_epochs < 0 or self.phase2_epochs < 0:
            raise ConfigError("phase1_epochs and phase2_epochs must be >= 0")
        if self.mixup_refresh_epochs < 1:
            raise ConfigError("mixup_refresh_epochs must be >= 1")
        if self.backtranslation_weight < 0:
            raise ConfigError("backtranslation_weight must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must be in (0, 1]")
        if self.generation_temperature < 0:
            raise ConfigError("generation_temperature must be >= 0")
        return self

    def encoder_spec(self) -> modeling.EncoderSpec:
        return modeling.EncoderSpec(
            blocks=self.encoder_blocks,
            layers_per_block=self.encoder_layers,
            channels=self.encoder_channels,
            latent_dim=self.latent_dim,
            pool_kernel=self.pool,
            pool_stride=self.pool,
            kernel_size=self.encoder_kernel,
        )

    def decoder_spec(self) -> modeling.DecoderSpec:
        return modeling.DecoderSpec(
            blocks=self.decoder_blocks,
            layers_per_block=self.decoder_layers,
            kernel_size=self.decoder_kernel,
            residual_channels=self.residual_channels,
            skip_channels=self.skip_channels,
            conditioning_dim=2 * self.latent_dim,
        )

    def confusion_spec(self) -> modeling.ConfusionSpec:
        return modeling.ConfusionSpec(
            channels=(self.confusion_channels,) * 3, kernel_size=self.confusion_kernel
        )


_CONFIG_KEYS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_KEY_ALIASES = {"lambda": "lambda_weight"}
_DEFAULTS = TrainConfig()


def _parse_value(key: str, raw: str, pytype):
    raw = raw.strip()
    try:
        if pytype is bool:
            lowered = raw.lower()
            if lowered in ("true", "yes", "1"):
                return True
            if lowered in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        return pytype(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {pytype.__name__}") from None


def parse_config(path) -> TrainConfig:
    """Read a flat `key = value` config file into a validated TrainConfig."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        field_name = _KEY_ALIASES.get(key, key)
        if field_name not in _CONFIG_KEYS or field_name in values:
            problem = "duplicate" if field_name in values else "unknown"
            raise ConfigError(f"{path}:{lineno}: {problem} config key {key!r}")
        values[field_name] = _parse_value(key, raw, type(getattr(_DEFAULTS, field_name)))
    try:
        return TrainConfig(**values).validate()
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


@dataclass(frozen=True, eq=False)
class BacktranslationItem:
    """A synthetic clip (source converted to a mixup identity) paired with its source."""

    synthetic: audio.MuLawClip
    source: audio.MuLawClip
    source_singer: int

    def __post_init__(self):
        if len(self.synthetic) != len(self.source):
            raise ValueError(
                f"synthetic length {len(self.synthetic)} != source length {len(self.source)}"
            )


def mixup_embedding(table: modeling.EmbeddingTable, j: int, j_prime: int, alpha: float) -> torch.Tensor:
    """Virtual-singer embedding u = alpha * v_j + (1 - alpha) * v_j'."""
    if j == j_prime:
        raise ValueError(f"mixup requires two distinct singers, got j = j' = {j}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    with torch.no_grad():
        return (alpha * table.vector(j) + (1.0 - alpha) * table.vector(j_prime)).clone()


def _derive_seed(base_seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2**63))


class Trainer:
    """Holds the model, the two optimizers, and the per-step update rules.

    The confusion classifier and the autoencoder are adversaries: each step
    updates exactly one side while the other's parameters stay bit-identical.
    """

    def __init__(self, config: TrainConfig, manifest: DatasetManifest, registry: SingerRegistry):
        if registry.k < 2:
            raise ValueError(f"training requires at least 2 singers, manifest has k={registry.k}")
        config.validate()
        self.config = config
        self.manifest = manifest
        self.registry = registry
        self.cache = AudioCache(sample_rate=config.sample_rate)
        self.model = modeling.build_model(
            config.encoder_spec(),
            config.decoder_spec(),
            config.confusion_spec(),
            registry.ids,
            config.sample_rate,
            seed=_derive_seed(config.rng_seed, 0),
        )
        self.epochs_completed = 0
        self._build_optimizers()

    def _build_optimizers(self):
        lr = self.config.learning_rate * self.config.lr_decay**self.epochs_completed
        ed_params = (
            list(self.model.encoder.parameters())
            + list(self.model.decoder.parameters())
            + list(self.model.table.parameters())
        )
        self.opt_ed = torch.optim.Adam(ed_params, lr=lr)
        self.opt_c = torch.optim.Adam(self.model.confusion.parameters(), lr=lr)

    def decay_lr(self):
        self.epochs_completed += 1
        for opt in (self.opt_ed, self.opt_c):
            for group in opt.param_groups:
                group["lr"] = self.config.learning_rate * self.config.lr_decay**self.epochs_completed

    @property
    def lr(self) -> float:
        return self.opt_ed.param_groups[0]["lr"]

    # --- batch plumbing -------------------------------------------------

    def _batch_tensors(self, batch):
        comp = torch.from_numpy(np.stack([item.companded for item in batch])).to(torch.float32)
        targets = torch.from_numpy(np.stack([item.mulaw.indices for item in batch]))
        singers = torch.tensor([item.singer_index for item in batch], dtype=torch.long)
        return comp.unsqueeze(1), targets, singers

    def _conditioning(self, latent: torch.Tensor, singers: torch.Tensor) -> torch.Tensor:
        v = self.model.table.vectors[singers]
        n = latent.shape[-1]
        cond = torch.cat([latent, v.unsqueeze(-1).expand(-1, -1, n)], dim=1)
        return torch.repeat_interleave(cond, self.config.pool, dim=-1)

    def sample_training_batch(self, seed: int):
        return sample_batch(
            self.manifest,
            self.registry,
            self.config.crop_len,
            self.config.batch_size,
            seed,
            cache=self.cache,
            grid=self.config.pool,
        )

    # --- the three update rules ------------------------------------------

    def confusion_step(self, batch) -> tuple[float, float]:
        """Train only the confusion classifier on true (latent, singer) pairs."""
        comp, _, singers = self._batch_tensors(batch)
        with torch.no_grad():
            latent = self.model.encoder(comp)
        logits = self.model.confusion(latent)
        loss = F.cross_entropy(logits, singers)
        self.opt_c.zero_grad()
        loss.backward()
        self.opt_c.step()
        accuracy = (logits.argmax(dim=1) == singers).float().mean().item()
        return loss.item(), accuracy

    def autoencoder_step(self, batch) -> tuple[float, float]:
        """Train encoder, decoder and embeddings: reconstruction minus the
        adversarial term; the confusion network is frozen but back-propagated
        through.  Embeddings are projected to the unit ball afterwards."""
        comp, targets, singers = self._batch_tensors(batch)
        latent = self.model.encoder(comp)
        cond = self._conditioning(latent, singers)
        logits = self.model.decoder(shifted_inputs(targets), cond)
        recon = F.cross_entropy(logits.transpose(1, 2).reshape(-1, logits.shape[1]), targets.reshape(-1))

        for p in self.model.confusion.parameters():
            p.requires_grad_(False)
        adv = F.cross_entropy(self.model.confusion(latent), singers)
        total = recon - self.config.lambda_weight * adv
        self.opt_ed.zero_grad()
        total.backward()
        self.opt_ed.step()
        for p in self.model.confusion.parameters():
            p.requires_grad_(True)
        project_embeddings(self.model.table)
        return recon.item(), adv.item()

    def backtranslation_step(self, items: list[BacktranslationItem]) -> float:
        """Train encoder, decoder and embeddings to recover each source from its
        synthetic mixup conversion; the confusion network is not involved."""
        comp = torch.from_numpy(
            np.stack([audio.decode_samples(it.synthetic.indices) for it in items])
        ).to(torch.float32).unsqueeze(1)
        targets = torch.from_numpy(np.stack([it.source.indices for it in items]))
        singers = torch.tensor([it.source_singer for it in items], dtype=torch.long)

        latent = self.model.encoder(comp)
        cond = self._conditioning(latent, singers)
        logits = self.model.decoder(shifted_inputs(targets), cond)
        loss = F.cross_entropy(logits.transpose(1, 2).reshape(-1, logits.shape[1]), targets.reshape(-1))
        self.opt_ed.zero_grad()
        (self.config.backtranslation_weight * loss).backward()
        self.opt_ed.step()
        project_embeddings(self.model.table)
        return loss.item()

    # --- phase II sample synthesis ----------------------------------------

    def generate_backtranslation_set(self, n_items: int, rng_seed: int) -> list[BacktranslationItem]:
        return generate_backtranslation_set(
            self.manifest,
            self.registry,
            self.model,
            n_items,
            rng_seed,
            crop_len=self.config.crop_len,
            cache=self.cache,
            temperature=self.config.generation_temperature,
            use_mixup=self.config.use_mixup,
        )

    # --- diagnostics ------------------------------------------------------

    def phase2_objective(self, batch, items: list[BacktranslationItem]) -> dict[str, float]:
        """Both sides of the phase-II loss identity on fixed data, without updates."""
        comp, targets, singers = self._batch_tensors(batch)
        with torch.no_grad():
            latent = self.model.encoder(comp)
            cond = self._conditioning(latent, singers)
            logits = self.model.decoder(shifted_inputs(targets), cond)
            recon = F.cross_entropy(
                logits.transpose(1, 2).reshape(-1, logits.shape[1]), targets.reshape(-1)
            ).item()
            adv = F.cross_entropy(self.model.confusion(latent), singers).item()

            comp_s = torch.from_numpy(
                np.stack([audio.decode_samples(it.synthetic.indices) for it in items])
            ).to(torch.float32).unsqueeze(1)
            targets_s = torch.from_numpy(np.stack([it.source.indices for it in items]))
            singers_s = torch.tensor([it.source_singer for it in items], dtype=torch.long)
            latent_s = self.model.encoder(comp_s)
            cond_s = self._conditioning(latent_s, singers_s)
            logits_s = self.model.decoder(shifted_inputs(targets_s), cond_s)
            bt = F.cross_entropy(
                logits_s.transpose(1, 2).reshape(-1, logits_s.shape[1]), targets_s.reshape(-1)
            ).item()
        phase1 = recon - self.config.lambda_weight * adv
        return {
            "phase1_objective": phase1,
            "backtranslation": bt,
            "total": phase1 + self.config.backtranslation_weight * bt,
        }

    def validation_confusion_accuracy(self, crops_per_file: int = 2) -> float:
        """How well the (current) classifier names singers from held-out latents."""
        correct = total = 0
        crop = self.config.crop_len
        with torch.no_grad():
            for s_idx, singer in enumerate(self.manifest.singers):
                for f in singer.validation_files():
                    clip = self.cache.get(f.path)
                    if len(clip) < crop:
                        continue
                    starts = np.linspace(0, len(clip) - crop, crops_per_file).astype(int)
                    for start in starts:
                        companded = audio.quantized(clip.samples[start : start + crop])
                        comp = torch.from_numpy(companded).to(torch.float32).reshape(1, 1, -1)
                        logits = self.model.confusion(self.model.encoder(comp))
                        correct += int(logits.argmax(dim=1).item() == s_idx)
                        total += 1
        return correct / total if total else float("nan")


def generate_backtranslation_set(
    manifest: DatasetManifest,
    registry: SingerRegistry,
    model: modeling.SvcModel,
    n_items: int,
    rng_seed: int,
    crop_len: int,
    cache: AudioCache | None = None,
    temperature: float = 1.0,
    use_mixup: bool = True,
) -> list[BacktranslationItem]:
    """Synthesize backtranslation items with the current network.

    Each item crops a train file of singer j, draws a partner j' != j and
    alpha ~ U[0,1] (alpha fixed to 0 when mixup is disabled, i.e. plain
    conversion to the partner singer), converts the crop to the mixed
    identity by autoregressive sampling, and keeps the (synthetic, source)
    pair.  Deterministic for a given seed.
    """
    if model.k < 2:
        raise BacktranslationError(f"backtranslation requires k >= 2 singers, got {model.k}")
    if cache is None:
        cache = AudioCache(sample_rate=model.sample_rate)
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    files = [
        (s_idx, f.path)
        for s_idx, singer in enumerate(manifest.singers)
        for f in singer.train_files()
    ]
    period = model.encoder_spec.pool_kernel
    weights = inference.DecoderKernelWeights(model.decoder)
    from .augment import VARIANT_TAGS, apply_variant

    items = []
    for i in range(n_items):
        j, path = files[i % len(files)]
        clip = cache.get(path)
        if len(clip) < crop_len:
            raise BacktranslationError(f"file {path} shorter than crop_len {crop_len}")
        start = int(rng.integers(len(clip) - crop_len + 1))
        variant = VARIANT_TAGS[int(rng.integers(4))]
        crop = apply_variant(audio.AudioClip(clip.samples[start : start + crop_len], clip.sample_rate), variant)
        source_idx = audio.encode_indices(crop.samples)
        companded = audio.decode_samples(source_idx)

        others = [s for s in range(model.k) if s != j]
        j_prime = others[int(rng.integers(len(others)))]
        alpha = float(rng.uniform()) if use_mixup else 0.0
        u = mixup_embedding(model.table, j, j_prime, alpha)

        latent = modeling.encode(companded, model.encoder)
        cond = modeling.build_conditioning(latent, u, period)
        gen_seed = int(rng.integers(2**62))
        synthetic = inference.generate_incremental(
            cond, model.decoder, rng_seed=gen_seed, temperature=temperature, weights=weights
        )
        items.append(
            BacktranslationItem(
                synthetic=audio.MuLawClip(synthetic, model.sample_rate),
                source=audio.MuLawClip(source_idx, model.sample_rate),
                source_singer=j,
            )
        )
    return items


# --- the full protocol ---------------------------------------------------


METRICS_HEADER = "epoch,phase,recon_loss,adv_term,confusion_loss,confusion_val_acc,backtrans_loss,lr"


def _checkpoint_stem(out_dir: Path, phase: int, epoch: int) -> Path:
    return out_dir / "checkpoints" / f"phase{phase}_epoch{epoch:04d}"


def find_checkpoints(out_dir) -> list[Path]:
    """Checkpoint stems under an output directory, oldest first."""
    ckpt_dir = Path(out_dir) / "checkpoints"
    if not ckpt_dir.exists():
        return []
    stems = [p.with_suffix("") for p in ckpt_dir.glob("phase*_epoch*.svc1")]

    def order(stem: Path):
        phase_part, epoch_part = stem.name.split("_epoch")
        return (int(phase_part.removeprefix("phase")), int(epoch_part))

    return sorted(stems, key=order)


def train(config: TrainConfig, manifest: DatasetManifest, registry: SingerRegistry, out_dir, resume: bool = False):
    """Run the two-phase protocol, writing a checkpoint and a metrics row per epoch.

    Returns the list of checkpoint stems written.  With `resume`, continues
    from the newest checkpoint in `out_dir` (optimizer moments restart).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(config, manifest, registry)

    total_train_samples = sum(
        len(trainer.cache.get(f.path)) for s in manifest.singers for f in s.train_files()
    )
    steps = config.steps_per_epoch or max(
        1, math.ceil(total_train_samples / (config.batch_size * config.crop_len))
    )
    n_bt_items = manifest.total_train_files()

    start_phase, start_epoch = 1, 0
    if resume:
        stems = find_checkpoints(out_dir)
        if not stems:
            raise FileNotFoundError(f"--resume requested but no checkpoint found under {out_dir}")
        model, info = modeling.load_checkpoint(stems[-1])
        trainer.model.load_state_dict(model.state_dict())
        start_phase, start_epoch = info["phase"], info["epoch"]
        trainer.epochs_completed = start_epoch if start_phase == 1 else config.phase1_epochs + start_epoch
        trainer._build_optimizers()
        log.info("resumed from %s (phase %d epoch %d)", stems[-1], start_phase, start_epoch)

    metrics_path = out_dir / "metrics.csv"
    if not metrics_path.exists():
        metrics_path.write_text(METRICS_HEADER + "\n")

    def write_metrics(epoch, phase, recon, adv, conf, val_acc, bt):
        with metrics_path.open("a") as fh:
            fh.write(
                f"{epoch},{phase},{recon:.6f},{adv:.6f},{conf:.6f},{val_acc:.6f},{bt:.6f},{trainer.lr:.8g}\n"
            )

    written = []

    def checkpoint(phase, epoch):
        stem = _checkpoint_stem(out_dir, phase, epoch)
        modeling.save_checkpoint(trainer.model, stem, phase, epoch)
        written.append(stem)
        return stem

    if not resume:
        checkpoint(1, 0)

    seed = config.rng_seed

    # phase I: reconstruction + domain confusion
    first = start_epoch + 1 if start_phase == 1 else config.phase1_epochs + 1
    for epoch in range(first, config.phase1_epochs + 1):
        recon_sum = adv_sum = conf_sum = 0.0
        for step in range(steps):
            batch = trainer.sample_training_batch(_derive_seed(seed, 1, epoch, step))
            conf_loss, _ = trainer.confusion_step(batch)
            recon, adv = trainer.autoencoder_step(batch)
            recon_sum, adv_sum, conf_sum = recon_sum + recon, adv_sum + adv, conf_sum + conf_loss
        val_acc = trainer.validation_confusion_accuracy()
        write_metrics(epoch, 1, recon_sum / steps, adv_sum / steps, conf_sum / steps, val_acc, float("nan"))
        log.info(
            "phase 1 epoch %d: recon %.4f adv %.4f conf %.4f val_acc %.3f",
            epoch, recon_sum / steps, adv_sum / steps, conf_sum / steps, val_acc,
        )
        trainer.decay_lr()
        checkpoint(1, epoch)

    # phase II: same losses plus backtranslation through mixup identities
    bt_items: list[BacktranslationItem] = []
    first2 = start_epoch + 1 if start_phase == 2 else 1
    for epoch in range(first2, config.phase2_epochs + 1):
        if (epoch - 1) % config.mixup_refresh_epochs == 0 or not bt_items:
            log.info("phase 2 epoch %d: regenerating %d backtranslation items", epoch, n_bt_items)
            bt_items = trainer.generate_backtranslation_set(n_bt_items, _derive_seed(seed, 2, epoch))
        bt_rng = np.random.Generator(np.random.PCG64(_derive_seed(seed, 4, epoch)))
        recon_sum = adv_sum = conf_sum = bt_sum = 0.0
        for step in range(steps):
            batch = trainer.sample_training_batch(_derive_seed(seed, 3, epoch, step))
            conf_loss, _ = trainer.confusion_step(batch)
            recon, adv = trainer.autoencoder_step(batch)
            picks = bt_rng.integers(len(bt_items), size=config.batch_size)
            bt_loss = trainer.backtranslation_step([bt_items[p] for p in picks])
            recon_sum, adv_sum = recon_sum + recon, adv_sum + adv
            conf_sum, bt_sum = conf_sum + conf_loss, bt_sum + bt_loss
        val_acc = trainer.validation_confusion_accuracy()
        write_metrics(epoch, 2, recon_sum / steps, adv_sum / steps, conf_sum / steps, val_acc, bt_sum / steps)
        log.info(
            "phase 2 epoch %d: recon %.4f adv %.4f conf %.4f bt %.4f val_acc %.3f",
            epoch, recon_sum / steps, adv_sum / steps, conf_sum / steps, bt_sum / steps, val_acc,
        )
        trainer.decay_lr()
        checkpoint(2, epoch)

    return written
