"""Adversarial training loop and checkpointing.

One iteration processes one (condition, target) pair: the critic takes a
step on -log D(real) - log(1 - D(fake)) with the prediction detached, then
the generator takes a step on

    lambda_rec * L1(pred, target) + lambda_adv(t) * (-log D(pred))

lambda_rec is constant; lambda_adv ramps with training progress t
(fraction of total iterations): zero for the first tenth, linear up to
its configured peak at the halfway point, flat thereafter. Both
optimizers are Adam with shared hyperparameters, batch size is one
image, and the critic always steps before the generator inside an
iteration.

Checkpoints are single files: magic "WNT1", a canonical-JSON header
(network config, seed, progress, parameter manifest, optimizer hypers),
a float64 little-endian body holding every parameter followed by both
optimizers' moment vectors, and a trailing 8-byte SHA-256 prefix of the
body. Round trips are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .fileio import atomic_write, load_png
from .grid import (AdamState, Grid, GradientNaNError, Tape, absolute, backward,
                   clamp, log, mean, optim_step, single_thread_mode, zero_grads)
from .seeds import TRAINING, stream_seed
from .wnet import (Discriminator, Generator, NetConfig, assemble_input,
                   build_discriminator, build_generator)

_SCORE_FLOOR = 1e-7


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient goes non-finite mid-run."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    lr: float = 0.0005
    beta1: float = 0.5    # low first-moment decay; momentum destabilizes batch-1 GANs
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_rec: float = 100.0
    lambda_adv: float = 1.0    # critic weight at full ramp; 0 trains on reconstruction alone
    ramp_start: float = 0.1    # fraction of iterations with the critic term off
    ramp_end: float = 0.5      # fraction at which the critic term reaches lambda_adv
    seed: int = 0
    checkpoint_path: str | None = None   # rolling per-epoch save when set


@dataclass
class TrainExample:
    topography: np.ndarray    # (R, R) binary
    day: int
    density: float
    target: np.ndarray        # (R, R) in [0, 1]


@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    gen_state: AdamState
    disc_state: AdamState
    history: list[dict] = field(default_factory=list)
    net: NetConfig | None = None
    config: TrainConfig | None = None


def lambda_adv(iteration: int, total: int, cfg: TrainConfig | None = None) -> float:
    """Adversarial weight for a 0-based global iteration index."""
    cfg = cfg or TrainConfig()
    t = iteration / total
    if t < cfg.ramp_start:
        return 0.0
    if t < cfg.ramp_end:
        return cfg.lambda_adv * (t - cfg.ramp_start) / (cfg.ramp_end - cfg.ramp_start)
    return cfg.lambda_adv


def recon_loss(pred: Grid, target: Grid) -> Grid:
    return mean(absolute(pred - target))


def adv_gen_loss(score: Grid) -> Grid:
    return -log(clamp(score, _SCORE_FLOOR, 1.0 - _SCORE_FLOOR))


def disc_loss(s_real: Grid, s_fake: Grid) -> Grid:
    real = log(clamp(s_real, _SCORE_FLOOR, 1.0 - _SCORE_FLOOR))
    fake = log(clamp(1.0 - s_fake, _SCORE_FLOOR, 1.0 - _SCORE_FLOOR))
    return -(real + fake)


def load_training_set(data_dir) -> list[TrainExample]:
    """Materialize a corpus written by build_dataset into RAM."""
    from .oracle import load_manifest

    out = []
    for rec in load_manifest(data_dir):
        topo = load_png(os.path.join(data_dir, rec["topography"]))
        target = load_png(os.path.join(data_dir, rec["target"]))
        out.append(TrainExample(topo, int(rec["day"]), float(rec["density"]), target))
    if not out:
        raise ValueError(f"no training records under {data_dir}")
    return out


def train(examples: list[TrainExample], cfg: TrainConfig | None = None, *,
          net: NetConfig | None = None, callback=None) -> TrainResult:
    """Run the full loop over `examples`; one epoch visits each image once."""
    cfg = cfg or TrainConfig()
    if not examples:
        raise ValueError("no training examples")
    r = examples[0].topography.shape[0]
    if net is None:
        # open the generator at the corpus's mean brightness so neither the
        # dark nor the bright examples start with a one-sided pull
        base = float(np.mean([ex.target.mean() for ex in examples]))
        net = NetConfig(resolution=r, out_prior=min(max(base, 0.01), 0.95))
    if net.resolution != r:
        raise ValueError(f"net resolution {net.resolution} != image size {r}")

    rng = np.random.default_rng(stream_seed(cfg.seed, TRAINING))
    gen = build_generator(net, seed=cfg.seed)
    disc = build_discriminator(net, seed=cfg.seed)
    gen_params, disc_params = gen.parameters(), disc.parameters()
    gen_state = AdamState(gen_params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    disc_state = AdamState(disc_params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    result = TrainResult(gen, disc, gen_state, disc_state, [], net, cfg)

    total = cfg.epochs * len(examples)
    it = 0
    dead_iters = 0
    with single_thread_mode():
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(examples))
            sums = {"rec": 0.0, "adv": 0.0, "disc": 0.0, "s_real": 0.0, "s_fake": 0.0}
            try:
                for k in order:
                    ex = examples[k]
                    lam = lambda_adv(it, total, cfg)
                    cond = assemble_input(ex.topography, ex.day, ex.density, rng=rng)
                    target = Grid(ex.target[None] if ex.target.ndim == 2 else ex.target)

                    tg = Tape()
                    with tg:
                        pred = gen(cond)

                    td = Tape()
                    with td:
                        s_real = disc(cond, target)
                        s_fake = disc(cond, pred.detach())
                        d_loss = disc_loss(s_real, s_fake)
                    backward(d_loss, td)
                    optim_step(disc_params, disc_state)
                    zero_grads(disc_params)

                    with tg:
                        rec = recon_loss(pred, target)
                        if lam > 0.0:
                            adv = adv_gen_loss(disc(cond, pred))
                            g_loss = rec * cfg.lambda_rec + adv * lam
                        else:
                            adv = None
                            g_loss = rec * cfg.lambda_rec
                    backward(g_loss, tg)
                    # zero projection grads mean the output sigmoid saturated
                    # everywhere; a full epoch of that is an unrecoverable net
                    proj = gen.layers[-1]
                    if proj.weight.grad.any() or proj.bias.grad.any():
                        dead_iters = 0
                    else:
                        dead_iters += 1
                        if dead_iters >= len(examples):
                            raise TrainingDiverged(
                                f"generator output saturated for a full epoch "
                                f"at iteration {it}")
                    optim_step(gen_params, gen_state)
                    zero_grads(gen_params)
                    zero_grads(disc_params)  # critic grads from the generator pass

                    sums["rec"] += rec.item()
                    sums["adv"] += adv.item() if adv is not None else 0.0
                    sums["disc"] += d_loss.item()
                    sums["s_real"] += s_real.item()
                    sums["s_fake"] += s_fake.item()
                    it += 1
            except (GradientNaNError, ValueError) as err:
                raise TrainingDiverged(
                    f"training diverged at epoch {epoch}, iteration {it}: {err}") from err

            n = len(examples)
            stats = {"epoch": epoch, "lambda_adv": lambda_adv(it - 1, total, cfg),
                     **{k: v / n for k, v in sums.items()}}
            result.history.append(stats)
            if callback is not None:
                callback(stats)
            if cfg.checkpoint_path is not None:
                save_checkpoint(cfg.checkpoint_path, result, epoch=epoch, iteration=it)
    return result


# ---------------------------------------------------------------------------
# checkpoint format


_MAGIC = b"WNT1"
_VERSION = 1


def _net_dict(net: NetConfig) -> dict:
    return {"resolution": net.resolution, "cond_channels": net.cond_channels,
            "base_channels": net.base_channels, "max_channels": net.max_channels,
            "disc_base": net.disc_base, "init_std": net.init_std,
            "out_prior": net.out_prior}


def _all_params(result: TrainResult) -> list[Grid]:
    return result.generator.parameters() + result.discriminator.parameters()


def save_checkpoint(path, result: TrainResult, *, epoch: int = -1,
                    iteration: int = -1) -> None:
    params = _all_params(result)
    header = {
        "version": _VERSION,
        "net": _net_dict(result.net),
        "seed": result.config.seed if result.config else 0,
        "epoch": epoch,
        "iteration": iteration,
        "history": result.history,
        "params": [[p.name, list(p.shape)] for p in params],
        "adam": {"lr": result.gen_state.lr, "beta1": result.gen_state.beta1,
                 "beta2": result.gen_state.beta2, "eps": result.gen_state.eps,
                 "gen_steps": result.gen_state.step_count,
                 "disc_steps": result.disc_state.step_count},
    }
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    chunks = [p.data.astype("<f8").tobytes() for p in params]
    for state in (result.gen_state, result.disc_state):
        chunks += [m.astype("<f8").tobytes() for m in state.m]
        chunks += [v.astype("<f8").tobytes() for v in state.v]
    body = b"".join(chunks)
    digest = hashlib.sha256(body).digest()[:8]
    with atomic_write(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(hdr)))
        fh.write(hdr)
        fh.write(body)
        fh.write(digest)


def load_checkpoint(path) -> tuple[TrainResult, dict]:
    """Rebuild nets and optimizer state; returns (result, header)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a WNT1 checkpoint")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    if len(raw) < 12 + hlen + 8:
        raise ValueError(f"{path}: truncated checkpoint")
    header = json.loads(raw[12:12 + hlen].decode())
    body, digest = raw[12 + hlen:-8], raw[-8:]
    if hashlib.sha256(body).digest()[:8] != digest:
        raise ValueError(f"{path}: corrupt checkpoint body")

    net = NetConfig(**header["net"])
    gen = build_generator(net, seed=header["seed"])
    disc = build_discriminator(net, seed=header["seed"])
    params = gen.parameters() + disc.parameters()
    manifest = [[p.name, list(p.shape)] for p in params]
    if manifest != header["params"]:
        raise ValueError(f"{path}: parameter manifest mismatch")

    adam = header["adam"]
    gen_state = AdamState(gen.parameters(), adam["lr"], adam["beta1"],
                          adam["beta2"], adam["eps"])
    disc_state = AdamState(disc.parameters(), adam["lr"], adam["beta1"],
                           adam["beta2"], adam["eps"])
    gen_state.step_count = adam["gen_steps"]
    disc_state.step_count = adam["disc_steps"]

    expected = sum(p.size for p in params) * 3 * 8
    if len(body) != expected:
        raise ValueError(f"{path}: body holds {len(body)} bytes, expected {expected}")

    off = 0

    def take(shape):
        nonlocal off
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=off).reshape(shape).copy()
        off += n * 8
        return arr

    for p in params:
        p.data = take(p.shape)
    for state, owner in ((gen_state, gen.parameters()), (disc_state, disc.parameters())):
        state.m = [take(p.shape) for p in owner]
        state.v = [take(p.shape) for p in owner]

    cfg = TrainConfig(seed=header["seed"], lr=adam["lr"], beta1=adam["beta1"],
                      beta2=adam["beta2"], eps=adam["eps"])
    result = TrainResult(gen, disc, gen_state, disc_state,
                         list(header.get("history", [])), net, cfg)
    return result, header
