"""Model assembly, the training step, checkpointing and the ablation runner."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import losses
from . import tensor as T
from .config import RunConfig, parse_config_text
from .data import PairedData, generate_synthetic
from .encoders import TextEncoder, VideoEncoder
from .errors import BadMagicError, ConfigError, FormatError, TruncatedPayloadError, UnsupportedVersionError
from .heads import ModalityTower
from .mcc import MemoryBank, MomentumMirror
from .optim import AdamW
from .retrieval import EvalResult, evaluate
from .tensor import no_grad

log = logging.getLogger(__name__)

CKPT_MAGIC = b"HITC"
CKPT_VERSION = 1


class HiTModel:
    """Query and key towers for both modalities.

    Parameters are named ``video_q.*``, ``video_k.*``, ``text_q.*`` and
    ``text_k.*``; the momentum mirror pairs ``video_q.x`` with ``video_k.x``.
    """

    ROLES = ("video_q", "text_q", "video_k", "text_k")

    def __init__(self, config: RunConfig, input_dim: int, rng: np.random.Generator):
        vcfg = config.video_encoder_config(input_dim)
        tcfg = config.text_encoder_config()
        taps = config.level_taps
        text_taps = [t for t, _ in taps]
        video_taps = [v for _, v in taps]

        def tower(kind, r):
            if kind == "video":
                return ModalityTower(VideoEncoder(vcfg, r), video_taps, config.proj_hidden, config.out_dim, config.aggregation, r)
            return ModalityTower(TextEncoder(tcfg, r), text_taps, config.proj_hidden, config.out_dim, config.aggregation, r)

        self.video_q = tower("video", rng)
        self.text_q = tower("text", rng)
        # key towers are overwritten by init_key_from_query
        self.video_k = tower("video", None)
        self.text_k = tower("text", None)
        self.video_k.freeze()
        self.text_k.freeze()
        self.mirror = MomentumMirror(self._mirror_side("q"), self._mirror_side("k"), config.momentum)
        self.mirror.init_key_from_query()

    def _mirror_side(self, role: str) -> dict:
        out = {}
        for kind in ("video", "text"):
            for name, p in getattr(self, f"{kind}_{role}").named_parameters(f"{kind}."):
                out[name] = p
        return out

    def towers(self):
        return [(role, getattr(self, role)) for role in self.ROLES]

    def named_parameters(self):
        for role, tower in self.towers():
            yield from tower.named_parameters(f"{role}.")

    def query_parameters(self) -> dict:
        return {n: p for n, p in self.named_parameters() if n.split(".", 1)[0] in ("video_q", "text_q")}

    def key_parameters(self) -> dict:
        return {n: p for n, p in self.named_parameters() if n.split(".", 1)[0] in ("video_k", "text_k")}

    def named_buffers(self):
        for role, tower in self.towers():
            yield from tower.named_buffers(f"{role}.")


@dataclass
class StepRecord:
    step: int
    level_losses: list[float]
    loss: float
    embeddings: dict = field(default_factory=dict)
    snapshots: dict = field(default_factory=dict)

    def line(self) -> str:
        parts = [f"step={self.step}"]
        parts += [f"L{i + 1}={v:.17g}" for i, v in enumerate(self.level_losses)]
        parts.append(f"L={self.loss:.17g}")
        return " ".join(parts)


def load_data(config: RunConfig, seed_seq: np.random.SeedSequence) -> PairedData:
    if config.data_source == "files":
        return PairedData.from_files(config.video_file, config.text_file)
    return generate_synthetic(config.synthetic_spec(), int(seed_seq.generate_state(1)[0]))


class Trainer:
    def __init__(self, config: RunConfig, data: PairedData | None = None):
        self.config = config
        data_ss, model_ss, bank_ss, shuffle_ss = np.random.SeedSequence(config.seed).spawn(4)
        self.data = load_data(config, data_ss) if data is None else data
        self.train_data, self.test_data = self.data.split(config.holdout_fraction)
        if len(self.train_data) < config.batch_size:
            raise ConfigError(f"training split has {len(self.train_data)} pairs, fewer than batch_size {config.batch_size}")

        input_dim = self.data.video.shape[-1]
        self.model = HiTModel(config, input_dim, np.random.default_rng(model_ss))
        vcfg = self.model.video_q.encoder.config
        tcfg = self.model.text_q.encoder.config
        self.inputs = {
            "train": (self.train_data.video_inputs(vcfg), self.train_data.text_inputs(tcfg, config.max_words)),
            "test": (self.test_data.video_inputs(vcfg), self.test_data.text_inputs(tcfg, config.max_words)),
        }

        bank_rng = np.random.default_rng(bank_ss)
        n_levels = len(config.level_taps)
        self.video_banks = [MemoryBank(config.bank_size_video, config.out_dim, bank_rng) for _ in range(n_levels)]
        self.text_banks = [MemoryBank(config.bank_size_text, config.out_dim, bank_rng) for _ in range(n_levels)]
        for bank in self.video_banks + self.text_banks:
            bank.check_batch_size(config.batch_size)
        if config.loss == "infonce" and 0 in (config.bank_size_video, config.bank_size_text):
            log.info("bank size 0: InfoNCE falls back to in-batch negatives")

        self.optimizer = AdamW(
            self.model.query_parameters().items(), lr=config.lr, weight_decay=config.weight_decay
        )
        self.shuffle_rng = np.random.default_rng(shuffle_ss)
        self.step = 0
        self.epoch = 0
        self.perm: np.ndarray | None = None
        self.pos = 0
        self.epoch_loss_sum = 0.0
        self.epoch_steps = 0
        self.epoch_losses: list[float] = []
        self.history: list[str] = []
        self.history_path: Path | None = None

    # -- one iteration -------------------------------------------------------

    def objective(self, vq, tq, vk, tk, vsnap, tsnap):
        """Per-level losses and their weighted total for query outputs ``vq``/``tq``.

        ``vk``/``tk`` are constant key embeddings and ``vsnap``/``tsnap`` the bank
        snapshots, one entry per level. An empty snapshot means in-batch negatives.
        """
        cfg = self.config
        level_losses = []
        for lv in range(len(vq)):
            if cfg.loss == "triplet":
                sims = T.matmul(vq[lv], T.transpose(tq[lv]))
                level_losses.append(losses.triplet_ranking_loss(sims, cfg.margin))
                continue
            if len(tsnap[lv]):
                vt = losses.infonce(losses.similarity_rows(vq[lv], tk[lv], tsnap[lv]), cfg.temperature)
            else:
                vt = losses.infonce_in_batch(vq[lv], tk[lv], cfg.temperature)
            if len(vsnap[lv]):
                tv = losses.infonce(losses.similarity_rows(tq[lv], vk[lv], vsnap[lv]), cfg.temperature)
            else:
                tv = losses.infonce_in_batch(tq[lv], vk[lv], cfg.temperature)
            level_losses.append(losses.level_loss(vt, tv))
        return level_losses, losses.total_loss(level_losses, cfg.level_weights)

    def train_step(self, video_batch, text_batch, record: bool = False) -> StepRecord:
        cfg = self.config
        m = self.model
        m.video_q.train()
        m.text_q.train()
        vq = m.video_q(video_batch)
        tq = m.text_q(text_batch)

        if cfg.key_encoder_source == "momentum":
            with no_grad():
                vk = [x.data for x in m.video_k(video_batch)]
                tk = [x.data for x in m.text_k(text_batch)]
        else:
            vk = [x.data.copy() for x in vq]
            tk = [x.data.copy() for x in tq]

        vsnap = [b.snapshot() for b in self.video_banks]
        tsnap = [b.snapshot() for b in self.text_banks]
        level_losses, total = self.objective(vq, tq, vk, tk, vsnap, tsnap)

        self.optimizer.zero_grad()
        T.backward(total)
        self.optimizer.step()
        if cfg.key_encoder_source == "momentum":
            m.mirror.momentum_update()
        for lv in range(len(vq)):
            self.video_banks[lv].enqueue(vk[lv])
            self.text_banks[lv].enqueue(tk[lv])

        self.step += 1
        rec = StepRecord(self.step, [x.item() for x in level_losses], total.item())
        if record:
            rec.embeddings = {
                "video_q": [x.data.copy() for x in vq],
                "text_q": [x.data.copy() for x in tq],
                "video_k": vk,
                "text_k": tk,
            }
            rec.snapshots = {"video": vsnap, "text": tsnap}
        return rec

    # -- epochs ----------------------------------------------------------------

    def _log(self, line: str) -> None:
        self.history.append(line)
        if self.history_path is not None:
            with open(self.history_path, "a") as fh:
                fh.write(line + "\n")

    def evaluate(self, split: str = "test") -> EvalResult:
        videos, texts = self.inputs[split]
        return evaluate(self.model.video_q, self.model.text_q, videos, texts, self.config.fusion)

    def run(self, until_step: int | None = None, record: bool = False) -> list[StepRecord]:
        """Train to the configured epoch count, or stop before step ``until_step + 1``."""
        cfg = self.config
        videos, texts = self.inputs["train"]
        n = len(videos)
        records = []
        while self.epoch < cfg.epochs:
            if self.perm is None:
                self.perm = self.shuffle_rng.permutation(n)
                self.pos = 0
            while self.pos + cfg.batch_size <= n:
                if until_step is not None and self.step >= until_step:
                    return records
                idx = self.perm[self.pos : self.pos + cfg.batch_size]
                rec = self.train_step(videos.take(idx), texts.take(idx), record=record)
                self.pos += cfg.batch_size
                self.epoch_loss_sum += rec.loss
                self.epoch_steps += 1
                self._log(rec.line())
                if record:
                    records.append(rec)
            self.epoch_losses.append(self.epoch_loss_sum / self.epoch_steps)
            self.epoch_loss_sum = 0.0
            self.epoch_steps = 0
            for line in self.evaluate("test").lines():
                self._log(line)
            self.epoch += 1
            self.perm = None
        return records

    # -- checkpoints -------------------------------------------------------

    def _arrays(self) -> dict[str, np.ndarray]:
        arrays = {f"param/{n}": p.data for n, p in self.model.named_parameters()}
        for name, owner, attr in self.model.named_buffers():
            arrays[f"buffer/{name}"] = getattr(owner, attr)
        st = self.optimizer.state
        for name in self.optimizer.params:
            arrays[f"adam_m/{name}"] = st.exp_avg[name]
            arrays[f"adam_v/{name}"] = st.exp_avg_sq[name]
        for i, bank in enumerate(self.video_banks):
            arrays[f"bank/video/{i}"] = bank.storage
        for i, bank in enumerate(self.text_banks):
            arrays[f"bank/text/{i}"] = bank.storage
        if self.perm is not None:
            arrays["perm"] = self.perm.astype(np.float64)
        return arrays

    def save(self, path) -> None:
        arrays = self._arrays()
        meta = {
            "config": self.config.to_text(),
            "config_digest": self.config.digest(),
            "step": self.step,
            "epoch": self.epoch,
            "pos": self.pos,
            "epoch_loss_sum": self.epoch_loss_sum.hex(),
            "epoch_steps": self.epoch_steps,
            "epoch_losses": [x.hex() for x in self.epoch_losses],
            "adam_step": self.optimizer.state.step,
            "cursors": {
                "video": [b.cursor for b in self.video_banks],
                "text": [b.cursor for b in self.text_banks],
            },
            "rng": self.shuffle_rng.bit_generator.state,
            "history": self.history,
            "arrays": [[name, list(a.shape)] for name, a in arrays.items()],
        }
        blob = json.dumps(meta).encode()
        with open(path, "wb") as fh:
            fh.write(CKPT_MAGIC + struct.pack("<BI", CKPT_VERSION, len(blob)) + blob)
            for a in arrays.values():
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path, data: PairedData | None = None) -> "Trainer":
        buf = Path(path).read_bytes()
        if buf[:4] != CKPT_MAGIC:
            raise BadMagicError(f"bad checkpoint magic {buf[:4]!r}", 0)
        if len(buf) < 9:
            raise TruncatedPayloadError("checkpoint header truncated", len(buf))
        version, size = struct.unpack_from("<BI", buf, 4)
        if version != CKPT_VERSION:
            raise UnsupportedVersionError(f"unsupported checkpoint version {version}", 4)
        if len(buf) < 9 + size:
            raise TruncatedPayloadError(f"expected {size} metadata bytes", len(buf))
        meta = json.loads(buf[9 : 9 + size])
        config = RunConfig(**parse_config_text(meta["config"]))
        if config.digest() != meta["config_digest"]:
            raise FormatError("checkpoint config digest mismatch", 9)

        trainer = cls(config, data)
        offset = 9 + size
        arrays = {}
        for name, shape in meta["arrays"]:
            count = int(np.prod(shape))
            if offset + 8 * count > len(buf):
                raise TruncatedPayloadError(f"array {name!r} truncated", len(buf))
            arrays[name] = np.frombuffer(buf, "<f8", count, offset).reshape(shape).astype(np.float64)
            offset += 8 * count

        for name, p in trainer.model.named_parameters():
            p.data = arrays[f"param/{name}"].copy()
        for name, owner, attr in trainer.model.named_buffers():
            setattr(owner, attr, arrays[f"buffer/{name}"].copy())
        st = trainer.optimizer.state
        for name in trainer.optimizer.params:
            st.exp_avg[name] = arrays[f"adam_m/{name}"].copy()
            st.exp_avg_sq[name] = arrays[f"adam_v/{name}"].copy()
        st.step = meta["adam_step"]
        for i, bank in enumerate(trainer.video_banks):
            bank.storage = arrays[f"bank/video/{i}"].copy()
            bank.cursor = meta["cursors"]["video"][i]
        for i, bank in enumerate(trainer.text_banks):
            bank.storage = arrays[f"bank/text/{i}"].copy()
            bank.cursor = meta["cursors"]["text"][i]
        trainer.perm = arrays["perm"].astype(np.int64) if "perm" in arrays else None
        trainer.step = meta["step"]
        trainer.epoch = meta["epoch"]
        trainer.pos = meta["pos"]
        trainer.epoch_loss_sum = float.fromhex(meta["epoch_loss_sum"])
        trainer.epoch_steps = meta["epoch_steps"]
        trainer.epoch_losses = [float.fromhex(x) for x in meta["epoch_losses"]]
        trainer.shuffle_rng.bit_generator.state = meta["rng"]
        trainer.history = list(meta["history"])
        return trainer


@dataclass
class TrainResult:
    history: list[str]
    epoch_losses: list[float]
    test: EvalResult
    train: EvalResult
    trainer: Trainer


def run_training(config: RunConfig, out_dir=None, data: PairedData | None = None) -> TrainResult:
    """Train for ``config.epochs`` epochs, evaluating the held-out split after each."""
    trainer = Trainer(config, data)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        trainer.history_path = out / "history.txt"
        trainer.history_path.write_text("")
    trainer.run()
    result = TrainResult(
        trainer.history, trainer.epoch_losses, trainer.evaluate("test"), trainer.evaluate("train"), trainer
    )
    if out_dir is not None:
        trainer.save(out / "checkpoint.hitc")
        (out / "metrics.json").write_text(
            json.dumps({"test": result.test.to_dict(), "train": result.train.to_dict(), "epoch_losses": result.epoch_losses}, indent=2)
        )
    return result


# -- ablations ---------------------------------------------------------------

ABLATION_AXES = {
    "bank_size": ([0, 32, 64, 128, 256, 512], int),
    "temperature": ([0.0007, 0.007, 0.07, 0.7, 7.0], float),
    "levels": (["1:1", "-1:-1", "1:1,-1:-1"], str),
    "aggregation": (["mean", "max", "cls"], str),
    "loss": (["infonce", "triplet"], str),
    "key_encoder_source": (["momentum", "query"], str),
}


@dataclass
class AblationRow:
    axis: str
    value: object
    result: EvalResult

    def line(self) -> str:
        v, t = self.result.v2t, self.result.t2v
        return (
            f"{self.axis}={self.value} | v2t {v.r1:6.2f} {v.r5:6.2f} {v.r10:6.2f} {v.medr:5.1f} "
            f"| t2v {t.r1:6.2f} {t.r5:6.2f} {t.r10:6.2f} {t.medr:5.1f} | rsum {self.result.rsum:7.2f}"
        )


def axis_overrides(axis: str, value) -> dict:
    if axis == "bank_size":
        return {"bank_size_video": int(value), "bank_size_text": int(value)}
    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {sorted(ABLATION_AXES)}")
    return {axis: ABLATION_AXES[axis][1](value)}


def run_ablation(config: RunConfig, axis: str, values: Sequence | None = None, data: PairedData | None = None) -> list[AblationRow]:
    """One training run per axis value with the shared seed; held-out metrics per row."""
    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {sorted(ABLATION_AXES)}")
    defaults, kind = ABLATION_AXES[axis]
    values = defaults if values is None else [kind(v) for v in values]
    rows = []
    for value in values:
        run_cfg = config.replace(**axis_overrides(axis, value))
        result = run_training(run_cfg, data=data)
        rows.append(AblationRow(axis, value, result.test))
        log.info(rows[-1].line())
    return rows
