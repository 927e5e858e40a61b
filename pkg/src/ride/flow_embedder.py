"""Fold per-packet embeddings into a single fixed-width flow embedding.

A recursive autoencoder learns one composition cell (two embeddings in,
one out) plus a mirror reconstructor used only as the training signal and
for the greedy merge-order heuristic. Folding a flow applies the cell
repeatedly until one vector remains.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from . import nn_core, payload_autoencoder
from .nn_core import DenseNet, TrainConfig
from .packet_ingest import FlowRecord, extract_payload_vector
from .payload_autoencoder import AutoencoderBundle

logger = logging.getLogger(__name__)

DEFAULT_PAIR_CAP = 20_000


@dataclass
class EmbeddedFlow:
    """A flow as an ordered (n_packets, n_b) matrix of packet embeddings."""
    flow_id: str
    embeddings: np.ndarray
    label: str | None = None


@dataclass
class FlowEmbedding:
    """The folded joint embedding for one flow."""
    flow_id: str
    values: np.ndarray  # (n_b,)
    n_packets_folded: int
    label: str | None = None


@dataclass
class RaeBundle:
    composer: DenseNet       # 2*n_b -> n_b, tanh
    reconstructor: DenseNet  # n_b -> 2*n_b, tanh
    n_b: int
    final_recon_error: float
    seed: int = 0

    def __post_init__(self):
        if self.composer.input_dim != 2 * self.n_b or self.composer.output_dim != self.n_b:
            raise ValueError("composer must map 2*n_b -> n_b")
        if self.reconstructor.input_dim != self.n_b or self.reconstructor.output_dim != 2 * self.n_b:
            raise ValueError("reconstructor must map n_b -> 2*n_b")


def encode_flows(bundle: AutoencoderBundle, flows: list[FlowRecord],
                 n_p: int | None = None) -> list[EmbeddedFlow]:
    """Run the payload compressor over every packet of every flow."""
    n_p = n_p if n_p is not None else bundle.n_p
    out = []
    for flow in flows:
        mat = np.stack([
            np.asarray(extract_payload_vector(pkt, n_p).values, dtype=np.float64)
            for pkt in flow.packets
        ])
        z = payload_autoencoder.encode_matrix(bundle, mat)
        out.append(EmbeddedFlow(flow_id=flow.flow_id, embeddings=np.atleast_2d(z),
                                label=flow.label))
    return out


def combine_pair(rae: RaeBundle, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    if left.shape != (rae.n_b,) or right.shape != (rae.n_b,):
        raise ValueError("pair members must each have shape (n_b,)")
    return nn_core.forward(rae.composer, np.concatenate([left, right]))


def reconstruction_error_pair(rae: RaeBundle, left: np.ndarray, right: np.ndarray) -> float:
    """Squared L2 between the concatenated pair and its round trip."""
    stacked = np.concatenate([np.asarray(left, np.float64), np.asarray(right, np.float64)])
    folded = combine_pair(rae, left, right)
    rebuilt = nn_core.forward(rae.reconstructor, folded)
    return float(np.sum((rebuilt - stacked) ** 2))


def sample_training_pairs(flows: list[EmbeddedFlow], pair_cap: int = DEFAULT_PAIR_CAP,
                          seed: int = 0) -> np.ndarray:
    """Adjacent-packet pairs as a (k, 2*n_b) matrix, capped by seeded sampling.

    Raises ValueError when no flow contributes a pair (all single-packet).
    """
    rows = []
    for flow in flows:
        e = flow.embeddings
        for i in range(e.shape[0] - 1):
            rows.append(np.concatenate([e[i], e[i + 1]]))
    if not rows:
        raise ValueError("no flow has >= 2 packets; cannot form training pairs")
    pairs = np.stack(rows)
    if pairs.shape[0] > pair_cap:
        rng = np.random.Generator(np.random.PCG64(seed))
        pairs = pairs[np.sort(rng.choice(pairs.shape[0], size=pair_cap, replace=False))]
    return pairs


def train_rae(pairs: np.ndarray, n_b: int, cfg: TrainConfig | None = None) -> RaeBundle:
    """Joint composer+reconstructor training on concatenated pairs."""
    cfg = cfg or TrainConfig()
    pairs = np.atleast_2d(np.asarray(pairs, dtype=np.float64))
    if pairs.shape[1] != 2 * n_b:
        raise ValueError(f"pair rows must have width 2*n_b={2 * n_b}")
    net = nn_core.init_dense_net([2 * n_b, n_b, 2 * n_b], ["tanh", "tanh"],
                                 seed=cfg.seed, weight_init_scale=cfg.weight_init_scale)
    trained, _history = nn_core.train(net, pairs, pairs, "mse", cfg)
    final = nn_core.loss_mse(nn_core.forward(trained, pairs), pairs)
    return RaeBundle(
        composer=DenseNet([trained.layers[0]]),
        reconstructor=DenseNet([trained.layers[1]]),
        n_b=n_b,
        final_recon_error=final,
        seed=cfg.seed,
    )


def embed_flow(rae: RaeBundle, flow: EmbeddedFlow, order: str = "sequence") -> FlowEmbedding:
    """Fold a flow's packet embeddings into one vector.

    order="sequence" folds left to right in packet order; "greedy_min"
    repeatedly merges the adjacent pair with the lowest pair
    reconstruction error.
    """
    e = np.atleast_2d(flow.embeddings)
    n = e.shape[0]
    if n == 0:
        raise ValueError(f"flow {flow.flow_id} has no packets")
    if n == 1:
        return FlowEmbedding(flow_id=flow.flow_id, values=e[0].copy(),
                             n_packets_folded=1, label=flow.label)
    if order == "sequence":
        acc = e[0]
        for i in range(1, n):
            acc = combine_pair(rae, acc, e[i])
        return FlowEmbedding(flow_id=flow.flow_id, values=acc,
                             n_packets_folded=n, label=flow.label)
    if order == "greedy_min":
        work = [e[i] for i in range(n)]
        while len(work) > 1:
            errs = [reconstruction_error_pair(rae, work[i], work[i + 1])
                    for i in range(len(work) - 1)]
            i = int(np.argmin(errs))  # ties -> leftmost
            work[i:i + 2] = [combine_pair(rae, work[i], work[i + 1])]
        return FlowEmbedding(flow_id=flow.flow_id, values=work[0],
                             n_packets_folded=n, label=flow.label)
    raise ValueError(f"unknown fold order {order!r}")


def embed_flows(rae: RaeBundle, flows: list[EmbeddedFlow],
                order: str = "sequence") -> list[FlowEmbedding]:
    return [embed_flow(rae, f, order=order) for f in flows]


def prefix_embeddings(rae: RaeBundle, flow: EmbeddedFlow) -> list[FlowEmbedding]:
    """Every snapshot of the sequential fold: entry k holds the joint
    embedding after the first k+1 packets, so the last entry equals
    embed_flow(..., order="sequence"). Useful as extra in-manifold points
    when distilling a student from the flow classifier.
    """
    e = np.atleast_2d(flow.embeddings)
    n = e.shape[0]
    if n == 0:
        raise ValueError(f"flow {flow.flow_id} has no packets")
    out = [FlowEmbedding(flow_id=f"{flow.flow_id}#1", values=e[0].copy(),
                         n_packets_folded=1, label=flow.label)]
    acc = e[0]
    for i in range(1, n):
        acc = combine_pair(rae, acc, e[i])
        out.append(FlowEmbedding(flow_id=f"{flow.flow_id}#{i + 1}", values=acc,
                                 n_packets_folded=i + 1, label=flow.label))
    return out


def flow_embeddings_to_csv(embeddings: list[FlowEmbedding], path: str) -> None:
    """flow_id,label,v_1..v_n_b — one row per flow, input order preserved."""
    if not embeddings:
        raise ValueError("nothing to write")
    n_b = embeddings[0].values.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["flow_id", "label"] + [f"v_{i + 1}" for i in range(n_b)])
        for emb in embeddings:
            writer.writerow([emb.flow_id, emb.label if emb.label is not None else ""]
                            + [repr(float(v)) for v in emb.values])


def flow_embeddings_from_csv(path: str) -> list[FlowEmbedding]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_b = len(header) - 2
        for row in reader:
            values = np.array([float(v) for v in row[2:]], dtype=np.float64)
            if values.shape[0] != n_b:
                raise ValueError("ragged embedding row")
            out.append(FlowEmbedding(flow_id=row[0], values=values,
                                     n_packets_folded=0,
                                     label=row[1] or None))
    return out


def rae_to_dict(rae: RaeBundle) -> dict:
    return {
        "n_b": rae.n_b,
        "final_recon_error": rae.final_recon_error,
        "seed": rae.seed,
        "composer": nn_core.net_to_dict(rae.composer),
        "reconstructor": nn_core.net_to_dict(rae.reconstructor),
    }


def rae_from_dict(doc: dict) -> RaeBundle:
    return RaeBundle(
        composer=nn_core.net_from_dict(doc["composer"]),
        reconstructor=nn_core.net_from_dict(doc["reconstructor"]),
        n_b=doc["n_b"],
        final_recon_error=doc["final_recon_error"],
        seed=doc.get("seed", 0),
    )


def save_rae(rae: RaeBundle, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(rae_to_dict(rae), fh)


def load_rae(path: str) -> RaeBundle:
    with open(path) as fh:
        return rae_from_dict(json.load(fh))
