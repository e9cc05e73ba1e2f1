"""Model assembly, the SGVB training loop, deterministic scoring and checkpoints."""

from __future__ import annotations

import contextlib
import io
import json
import logging
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .encoder import EncoderConfig, encoder_forward, init_encoder
from .expander import AttentionTopology, ExpanderConfig, build_expander, build_topology
from .graph import build_index, canonical_edges, sample_negatives_uniform
from .metrics import evaluate_scores
from .objective import (LossBreakdown, ObjectiveConfig, decode, elbo_loss, init_decoder,
                        pair_logits)
from .optim import ParamStore, adam_step, clip_global_norm
from .rng import SeededRng
from .variational import LatentNoise, LatentSample, PriorConfig, draw_latents, init_variational

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
HISTORY_COLUMNS = ("epoch", "total", "recon", "kl_sticks", "kl_memberships", "kl_strengths",
                   "feat_recon", "anneal_weight", "valid_mrr", "n_local", "n_expander", "n_self")


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int, detail: str = ""):
        super().__init__(f"non-finite loss at epoch {epoch}" + (f": {detail}" if detail else ""))
        self.epoch = epoch


@contextlib.contextmanager
def deterministic_mode(enabled: bool = True):
    """Pin BLAS to one thread so reductions happen in a fixed order."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


def encoder_config(cfg: TrainConfig, feature_dim: int = 0) -> EncoderConfig:
    return EncoderConfig(layers=cfg.layers, heads=cfg.heads, head_dim=cfg.head_dim,
                         feature_dim=feature_dim, dropout=cfg.dropout)


def prior_config(cfg: TrainConfig) -> PriorConfig:
    return PriorConfig(a=cfg.prior_a, b=cfg.prior_b, tau_prior=cfg.tau_prior, tau=cfg.tau)


def kl_scale_for(num_nodes: int) -> float:
    return 1.0 / max(num_nodes * (num_nodes - 1) / 2.0, 1.0)


def objective_config(cfg: TrainConfig, num_nodes: int) -> ObjectiveConfig:
    return ObjectiveConfig(prior=prior_config(cfg), anneal_end=cfg.anneal_end,
                           kl_scale=kl_scale_for(num_nodes),
                           taylor_terms=cfg.taylor_terms,
                           use_stick_prior=not cfg.no_stick_prior,
                           kl_memberships=not cfg.no_kl_memberships,
                           kl_strengths=not cfg.no_kl_strengths)


@dataclass
class Model:
    config: TrainConfig
    num_nodes: int
    feature_dim: int
    store: ParamStore
    buffers: dict[str, np.ndarray]
    topology: AttentionTopology

    @property
    def encoder(self) -> EncoderConfig:
        return encoder_config(self.config, self.feature_dim)

    @property
    def prior(self) -> PriorConfig:
        return prior_config(self.config)

    def copy(self) -> "Model":
        return Model(self.config, self.num_nodes, self.feature_dim, self.store.copy(),
                     {k: v.copy() for k, v in self.buffers.items()}, self.topology)


def build_attention(num_nodes: int, train_edges, cfg: TrainConfig, rng: SeededRng) -> AttentionTopology:
    exp = build_expander(num_nodes, ExpanderConfig(cfg.d_exp, cfg.seed), rng)
    return build_topology(num_nodes, train_edges, exp, ablation=cfg.ablation)


def init_model(num_nodes: int, train_edges, cfg: TrainConfig, feature_dim: int = 0,
               rng: SeededRng | None = None) -> Model:
    rng = rng if rng is not None else SeededRng(cfg.seed)
    topology = build_attention(num_nodes, train_edges, cfg, rng.child("topology"))
    enc = encoder_config(cfg, feature_dim)
    init = rng.child("init")
    params, buffers = init_encoder(enc, num_nodes, init.child("encoder"))
    params.update(init_variational(enc.width, cfg.k, prior_config(cfg), init.child("heads")))
    params.update(init_decoder(cfg.k, init.child("decoder"), feature_dim=feature_dim))
    store = ParamStore()
    for name, value in params.items():
        store.add(name, value)
    return Model(cfg, num_nodes, feature_dim, store, buffers, topology)


# ------------------------------------------------------------------ scoring


def readout(model: Model, features=None) -> LatentSample:
    """Expected-latent readout: mean sticks, sigmoid(lambda) memberships, mu strengths."""
    params = ad.leaves(model.store.params)
    h = encoder_forward(params, features, model.topology, model.encoder, "eval", model.buffers)
    return draw_latents(h, params, model.prior, None, use_stick_prior=not model.config.no_stick_prior)


def decoded_embeddings(model: Model, features=None, dims: int | None = None) -> np.ndarray:
    """z~ = f(z) for every node; with ``dims`` the columns of z from ``dims`` on are zeroed."""
    z = readout(model, features).z.data.copy()
    if dims is not None:
        z[:, dims:] = 0.0
    return decode(z, ad.leaves(model.store.params)).data


def score_pairs(model: Model, pairs, features=None, embeddings: np.ndarray | None = None) -> np.ndarray:
    """Deterministic edge logits <z~_u, z~_v>; repeated calls give identical values."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    zt = decoded_embeddings(model, features) if embeddings is None else embeddings
    return np.einsum("ij,ij->i", zt[pairs[:, 0]], zt[pairs[:, 1]])


def sample_scores(model: Model, pairs, n_samples: int, rng: SeededRng, features=None) -> np.ndarray:
    """Monte Carlo mean of edge logits over sampled latents (eval-mode encoder)."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    params = ad.leaves(model.store.params)
    h = encoder_forward(params, features, model.topology, model.encoder, "eval", model.buffers)
    total = np.zeros(len(pairs))
    for s in range(n_samples):
        noise = LatentNoise.draw(model.num_nodes, model.config.k, rng.child(f"s{s}"))
        sample = draw_latents(h, params, model.prior, noise,
                              use_stick_prior=not model.config.no_stick_prior)
        total += pair_logits(decode(sample.z, params), pairs).data
    return total / n_samples


# ----------------------------------------------------------------- training


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)

    def append(self, row: dict) -> None:
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def to_csv(self) -> str:
        lines = [",".join(HISTORY_COLUMNS)]
        for row in self.rows:
            lines.append(",".join(_fmt_cell(row[c]) for c in HISTORY_COLUMNS))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def _fmt_cell(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _loss_fn(model: Model, pairs, labels, features, noise, epoch, drop_rng, update_stats):
    obj = objective_config(model.config, model.num_nodes)

    def loss(params):
        h = encoder_forward(params, features, model.topology, model.encoder, "train",
                            model.buffers, drop_rng, update_stats)
        sample = draw_latents(h, params, model.prior, noise,
                              use_stick_prior=not model.config.no_stick_prior)
        return elbo_loss(sample, params, pairs, labels, features, obj, epoch)

    return loss


def _validation_mrr(model: Model, valid, known_index, rng: SeededRng, features) -> float:
    """MRR of validation positives against a shared pool of fresh uniform non-edges."""
    negs = sample_negatives_uniform(known_index, model.config.valid_negatives, rng)
    zt = decoded_embeddings(model, features)
    pos = score_pairs(model, valid, embeddings=zt)
    neg = score_pairs(model, negs, embeddings=zt)
    return evaluate_scores(pos, [neg] * len(pos), k_values=(1,)).mrr


def train(num_nodes: int, train_edges, config: TrainConfig, valid_edges=None, features=None,
          exclude_pairs=None, known_edges=None) -> tuple[Model, History]:
    """Fit the model; keep the parameters with the best validation MRR.

    ``exclude_pairs`` are never drawn as training negatives (held-out pairs
    whose label is unobserved). ``known_edges`` are excluded from validation
    negatives in addition to the training and validation edges.
    """
    train_edges = canonical_edges(train_edges)
    if len(train_edges) == 0:
        raise ValueError("training split has no edges")
    valid_edges = canonical_edges(valid_edges if valid_edges is not None else np.zeros((0, 2)))
    features = None if features is None else np.asarray(features, dtype=np.float64)
    feature_dim = 0 if features is None else features.shape[1]
    root = SeededRng(config.seed)
    model = init_model(num_nodes, train_edges, config, feature_dim, root)
    stats = model.topology.stats()
    train_index = build_index(train_edges, num_nodes)
    known = [train_edges, valid_edges]
    if known_edges is not None:
        known.append(canonical_edges(known_edges))
    known_index = build_index(np.concatenate(known), num_nodes)
    exclude = None if exclude_pairs is None or len(exclude_pairs) == 0 else canonical_edges(exclude_pairs)

    history = History()
    best, best_mrr = None, -np.inf
    n_pos = len(train_edges)
    batch = n_pos if config.batch_size <= 0 else min(config.batch_size, n_pos)
    for epoch in range(config.epochs):
        erng = root.child(f"epoch{epoch}")
        order = erng.child("shuffle").permutation(n_pos)
        sums = dict.fromkeys(("total", "recon", "kl_sticks", "kl_memberships", "kl_strengths",
                              "feat_recon"), 0.0)
        weight = 0.0
        steps = 0
        for start in range(0, n_pos, batch):
            srng = erng.child(f"step{steps}")
            pos = train_edges[order[start:start + batch]]
            neg = sample_negatives_uniform(train_index, len(pos) * config.neg_per_pos,
                                           srng.child("negatives"), exclude=exclude)
            pairs = np.concatenate([pos, neg])
            labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
            noise = LatentNoise.draw(num_nodes, config.k, srng.child("noise"))
            loss_fn = _loss_fn(model, pairs, labels, features, noise, epoch,
                               srng.child("dropout"), update_stats=True)
            params = ad.leaves(model.store.params)
            try:
                out: LossBreakdown = loss_fn(params)
            except FloatingPointError as exc:
                raise DivergenceError(epoch, str(exc)) from exc
            if not np.isfinite(out.total):
                raise DivergenceError(epoch, f"loss terms {out.row()}")
            grads = ad.backward(out.total_tensor, params)
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise DivergenceError(epoch, "non-finite gradient")
            grads = clip_global_norm(grads, config.clip_norm)
            adam_step(model.store, grads, config.lr, weight_decay=config.weight_decay)
            if not all(np.all(np.isfinite(v)) for v in model.store.params.values()):
                raise DivergenceError(epoch, "non-finite parameters after update")
            for key in sums:
                sums[key] += getattr(out, key) * len(pairs)
            weight += len(pairs)
            steps += 1
            last_w = out.anneal_weight
        row = {"epoch": epoch, **{k: v / weight for k, v in sums.items()}, "anneal_weight": last_w}
        if len(valid_edges):
            row["valid_mrr"] = _validation_mrr(model, valid_edges, known_index,
                                               erng.child("valid"), features)
            if row["valid_mrr"] > best_mrr:
                best_mrr, best = row["valid_mrr"], model.copy()
        else:
            row["valid_mrr"] = float("nan")
        row.update(stats)
        history.append(row)
        log.debug("epoch %d total %.4f valid_mrr %.4f", epoch, row["total"], row["valid_mrr"])
    return (best if best is not None else model), history


# --------------------------------------------------------------- checkpoints


def _config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def save_checkpoint(model: Model, path) -> None:
    """Zip of .npy arrays (param/, buffer/, topology/) plus meta.json.

    Entries carry a fixed timestamp so identical models give identical bytes.
    """
    meta = {"format": "osbmlink-checkpoint", "version": CHECKPOINT_VERSION,
            "num_nodes": model.num_nodes, "feature_dim": model.feature_dim,
            "adam_step": model.store.step, "config": _config_dict(model.config)}
    arrays = {f"param/{k}": v for k, v in model.store.params.items()}
    arrays.update({f"buffer/{k}": v for k, v in model.buffers.items()})
    arrays.update({"topology/src": model.topology.src, "topology/dst": model.topology.dst,
                   "topology/etype": model.topology.etype})
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo("meta.json", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(info, json.dumps(meta, sort_keys=True, indent=1))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)),
                        buf.getvalue(), compress_type=zipfile.ZIP_DEFLATED)


def load_checkpoint(path) -> Model:
    with zipfile.ZipFile(path) as zf:
        try:
            meta = json.loads(zf.read("meta.json"))
        except KeyError:
            raise ValueError(f"{path}: not a checkpoint (no meta.json)") from None
        if meta.get("format") != "osbmlink-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint format/version "
                             f"{meta.get('format')}/{meta.get('version')}")
        arrays = {}
        for name in zf.namelist():
            if name.endswith(".npy"):
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)),
                                                             allow_pickle=False)
    cfg = TrainConfig(**meta["config"])
    store = ParamStore()
    for name, value in arrays.items():
        if name.startswith("param/"):
            store.add(name[len("param/"):], value)
    store.step = int(meta.get("adam_step", 0))
    buffers = {n[len("buffer/"):]: v for n, v in arrays.items() if n.startswith("buffer/")}
    topo = AttentionTopology(int(meta["num_nodes"]), arrays["topology/src"], arrays["topology/dst"],
                             arrays["topology/etype"])
    return Model(cfg, int(meta["num_nodes"]), int(meta["feature_dim"]), store, buffers, topo)

