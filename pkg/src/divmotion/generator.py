"""Part-sequential graph-convolutional generator.

Body parts are generated in a fixed order. The generator for part ``i``
sees one graph node per coordinate of parts ``1..i``; each node carries its
replicate-padded past DCT coefficients, the predicted coefficients of the
earlier parts (zeros on part-``i`` nodes) and the tiled latent code. It
outputs residual DCT coefficients for the part-``i`` coordinates.

Root coordinates are identically zero after centering and are not nodes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import ConfigError
from .dct import DctBasis, build_basis, decode, encode, replicate_pad
from .skeleton import Skeleton

CHECKPOINT_VERSION = 1

PARTITIONS = {
    "whole": [("body", None)],
    "lower-upper": [
        ("lower", ("Hip", "RHip", "RKnee", "RFoot", "LHip", "LKnee", "LFoot")),
        ("upper", None),
    ],
    "five-part": [
        ("torso", ("Hip", "Spine", "Thorax", "Neck", "Head")),
        ("right_leg", ("RHip", "RKnee", "RFoot")),
        ("left_leg", ("LHip", "LKnee", "LFoot")),
        ("right_arm", ("RShoulder", "RElbow", "RWrist")),
        ("left_arm", None),
    ],
}


@dataclass(frozen=True)
class PartitionSpec:
    """Ordered, disjoint joint-index sets covering the skeleton."""
    parts: tuple
    names: tuple = ()

    def __post_init__(self):
        parts = tuple(tuple(int(j) for j in p) for p in self.parts)
        object.__setattr__(self, "parts", parts)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"part{i + 1}" for i in range(len(parts))))
        if len(parts) < 1:
            raise ConfigError("partition needs at least one part")
        flat = [j for p in parts for j in p]
        if len(flat) != len(set(flat)):
            raise ConfigError("partition parts overlap")

    @property
    def N(self) -> int:
        return len(self.parts)

    def validate(self, skeleton: Skeleton) -> None:
        flat = sorted(j for p in self.parts for j in p)
        if flat != list(range(skeleton.J)):
            raise ConfigError("partition must cover every joint of the skeleton exactly once")

    @classmethod
    def named(cls, name: str, skeleton: Skeleton) -> "PartitionSpec":
        if name not in PARTITIONS:
            raise ConfigError(f"unknown partition {name!r}; choose from {sorted(PARTITIONS)}")
        used, parts, names = set(), [], []
        for part_name, joints in PARTITIONS[name]:
            if joints is None:
                idx = [j for j in range(skeleton.J) if j not in used]
            else:
                try:
                    idx = [skeleton.index(n) for n in joints]
                except ValueError as e:
                    raise ConfigError(f"partition {name!r} does not fit this skeleton: {e}") from None
            used.update(idx)
            parts.append(sorted(idx))
            names.append(part_name)
        spec = cls(tuple(parts), tuple(names))
        spec.validate(skeleton)
        return spec


# ---------------------------------------------------------------- layers

@dataclass
class GcnLayer:
    A: ad.Parameter
    W: ad.Parameter
    activate: bool = True

    def parameters(self):
        return [self.A, self.W]

    def __call__(self, F):
        return gc_layer(F, self)


def gc_layer(F, layer: GcnLayer) -> ad.Tensor:
    """tanh(A F W) over nodes on the second-to-last axis; linear when ``activate`` is False."""
    F = ad.as_tensor(F)
    n = layer.A.shape[0]
    if F.shape[-2] != n or F.shape[-1] != layer.W.shape[0]:
        raise ad.DimensionError(
            f"gc_layer: features {F.shape} incompatible with A {layer.A.shape} and W {layer.W.shape}")
    out = ad.matmul(layer.A, ad.matmul(F, layer.W))
    return ad.tanh(out) if layer.activate else out


def _new_layer(rng, n, fin, fout, name, activate=True, zero=False) -> GcnLayer:
    A = np.eye(n) + rng.uniform(-0.1, 0.1, (n, n)) / np.sqrt(n)
    bound = 1.0 / np.sqrt(fin)
    W = np.zeros((fin, fout)) if zero else rng.uniform(-bound, bound, (fin, fout))
    return GcnLayer(ad.Parameter(A, f"{name}.A"), ad.Parameter(W, f"{name}.W"), activate)


@dataclass
class PartGenerator:
    input: GcnLayer
    blocks: list
    output: GcnLayer

    @classmethod
    def create(cls, rng, n_nodes, in_features, hidden, M, n_blocks=4, name="g") -> "PartGenerator":
        inp = _new_layer(rng, n_nodes, in_features, hidden, f"{name}.in")
        blocks = [(_new_layer(rng, n_nodes, hidden, hidden, f"{name}.b{k}.0"),
                   _new_layer(rng, n_nodes, hidden, hidden, f"{name}.b{k}.1")) for k in range(n_blocks)]
        out = _new_layer(rng, n_nodes, hidden, M, f"{name}.out", activate=False, zero=True)
        return cls(inp, blocks, out)

    def layers(self) -> list:
        return [self.input] + [l for b in self.blocks for l in b] + [self.output]

    def parameters(self) -> list:
        return [p for l in self.layers() for p in l.parameters()]

    def __call__(self, F):
        x = self.input(F)
        for l1, l2 in self.blocks:
            x = x + l2(l1(x))
        return self.output(x)


# ---------------------------------------------------------------- full model

@dataclass
class PredictionSet:
    """Sampled futures plus the latent codes and parent links that produced them.

    ``full`` is (B, S, H+T, 3J) decoded output (past reconstruction included),
    ``levels[i]`` the part-(i+1) trajectories (B, S_i, n_i, H+T) and
    ``parents[i]`` maps each level-i sample to its level-(i-1) sample.
    """
    full: np.ndarray
    latents: list
    parents: list
    levels: list = field(default_factory=list)
    H: int = 0

    @property
    def futures(self) -> np.ndarray:
        return self.full[..., self.H:, :]

    def __len__(self):
        return self.full.shape[1]


class MotionGenerator:
    def __init__(self, skeleton: Skeleton, partition: PartitionSpec, H: int, T: int, M: int,
                 hidden: int = 256, latent_dim: int = 64, n_blocks: int = 4, seed: int = 0):
        partition.validate(skeleton)
        self.skeleton = skeleton
        self.partition = partition
        self.H, self.T, self.M = H, T, M
        self.hidden, self.latent_dim, self.n_blocks = hidden, latent_dim, n_blocks
        self.basis: DctBasis = build_basis(H, T, M)
        root = skeleton.root
        self.part_coords = [np.array([3 * j + c for j in sorted(p) if j != root for c in range(3)], dtype=int)
                            for p in partition.parts]
        if any(len(c) == 0 for c in self.part_coords):
            raise ConfigError("every part needs at least one non-root joint")
        self.level_nodes = [np.concatenate(self.part_coords[:i + 1]) for i in range(partition.N)]
        order = self.level_nodes[-1]
        D = 3 * skeleton.J
        # position of each of the 3J coordinates in node order; root coords point at an extra zero row
        self.coord_source = np.full(D, len(order), dtype=int)
        self.coord_source[order] = np.arange(len(order))
        rng = np.random.default_rng(seed)
        fin = 2 * M + latent_dim
        self.parts = [PartGenerator.create(rng, len(self.level_nodes[i]), fin, hidden, M, n_blocks, f"g{i}")
                      for i in range(partition.N)]

    @property
    def N(self) -> int:
        return self.partition.N

    def parameters(self) -> list:
        return [p for g in self.parts for p in g.parameters()]

    # -- building blocks

    def padded_past(self, past: np.ndarray) -> np.ndarray:
        """(B, H, 3J) -> (B, H+T, 3J) replicate-padded sequences."""
        return np.stack([replicate_pad(p, self.T, self.H) for p in past])

    def past_coeffs(self, past: np.ndarray) -> np.ndarray:
        """(B, H, 3J) -> (B, 3J, M) DCT coefficients of the padded past."""
        return encode(np.swapaxes(self.padded_past(past), 1, 2), self.basis)

    def part_forward(self, i: int, past_c: np.ndarray, prev: list, z: np.ndarray) -> ad.Tensor:
        """Coefficients of part ``i`` (0-based) for a batch of samples.

        past_c: (B, 3J, M); prev: part coefficient tensors (B, S, n_j, M) for
        parts j < i already aligned with the S samples; z: (B, S, latent_dim).
        """
        B, S = z.shape[:2]
        nodes = self.level_nodes[i]
        n_i = len(self.part_coords[i])
        if len(prev) != i:
            raise ConfigError(f"part {i} needs coefficients of {i} previous parts, got {len(prev)}")
        pc = np.broadcast_to(past_c[:, None, nodes, :], (B, S, len(nodes), self.M))
        zf = np.broadcast_to(z[:, :, None, :], (B, S, len(nodes), z.shape[-1]))
        prev_f = ad.concat(list(prev) + [np.zeros((B, S, n_i, self.M))], axis=2) if prev else \
            ad.Tensor(np.zeros((B, S, n_i, self.M)))
        F = ad.concat([pc, prev_f, zf], axis=-1)
        out = self.parts[i](F)
        residual = out[..., len(nodes) - n_i:, :]
        return residual + pc[..., len(nodes) - n_i:, :]

    def run(self, past: np.ndarray, zs: list, parents: list):
        """Generate every level; returns (per-level coefficient tensors, ancestor index table).

        zs[i] is (B, S_i, latent_dim); parents[i] (S_i,) indexes level i-1 (ignored for i=0).
        """
        past_c = self.past_coeffs(past)
        coeffs, anc = [], []
        for i in range(self.N):
            S = zs[i].shape[1]
            a = [np.arange(S)]
            if i > 0:
                par = np.asarray(parents[i], dtype=int)
                a = [anc[i - 1][j][par] for j in range(i)] + a
            anc.append(a)
            prev = [ad.take(coeffs[j], a[j], axis=1) for j in range(i)]
            coeffs.append(self.part_forward(i, past_c, prev, zs[i]))
        return coeffs, anc

    def assemble(self, coeffs: list, anc: list) -> ad.Tensor:
        """Decode each part separately and gather into (B, S_N, H+T, 3J) leaf sequences."""
        last = anc[-1]
        trajs = [ad.take(decode(c, self.basis), last[j], axis=1) for j, c in enumerate(coeffs)]
        B, S = trajs[0].shape[:2]
        nodes = ad.concat(trajs + [np.zeros((B, S, 1, self.basis.length))], axis=2)
        full = ad.take(nodes, self.coord_source, axis=2)
        return ad.transpose(full, (0, 1, 3, 2))

    def part_trajectories(self, coeffs: list) -> list:
        return [decode(c, self.basis) for c in coeffs]

    # -- sampling front-ends

    def _generate(self, past, zs, parents) -> PredictionSet:
        past = np.asarray(past, dtype=np.float64)
        if past.ndim == 2:
            past = past[None]
        coeffs, anc = self.run(past, zs, parents)
        full = self.assemble(coeffs, anc)
        levels = [t.data for t in self.part_trajectories(coeffs)]
        return PredictionSet(full.data, [z for z in zs], [np.asarray(p) for p in parents], levels, self.H)

    def latent(self, seed: int, batch: int, level: int, sample: int) -> np.ndarray:
        # one stream per (batch item, level, branch) keeps sampling schedule-independent
        return np.random.default_rng([seed, batch, level, sample]).standard_normal(self.latent_dim)

    def _latents(self, seed, B, level, S, offset: int = 0) -> np.ndarray:
        return np.stack([np.stack([self.latent(seed, offset + b, level, s) for s in range(S)])
                         for b in range(B)])


def _past_batch(past) -> np.ndarray:
    past = np.asarray(past, dtype=np.float64)
    return past[None] if past.ndim == 2 else past


def sample_tree(gen: MotionGenerator, past, K: int, seed: int) -> PredictionSet:
    """Full K-ary tree: K part-1 samples, K children each for part 2, ... (K**N leaves)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    past = _past_batch(past)
    B = past.shape[0]
    zs = [gen._latents(seed, B, i, K ** (i + 1)) for i in range(gen.N)]
    parents = [np.arange(K ** (i + 1)) // K for i in range(gen.N)]
    return gen._generate(past, zs, parents)


def sample_paths(gen: MotionGenerator, past, n: int, seed: int, batch_offset: int = 0) -> PredictionSet:
    """``n`` independent root-to-leaf paths (fresh latent at every level).

    ``batch_offset`` shifts the latent stream index of each batch item, so a
    long window list can be processed in chunks with identical results.
    """
    past = _past_batch(past)
    B = past.shape[0]
    zs = [gen._latents(seed, B, i, n, batch_offset) for i in range(gen.N)]
    parents = [np.arange(n) for _ in range(gen.N)]
    return gen._generate(past, zs, parents)


def controllable_sample(gen: MotionGenerator, past, frozen, K: int, seed: int) -> PredictionSet:
    """K futures sharing the parts whose latent codes are given in ``frozen``.

    ``frozen`` is a list of latent vectors for parts 1..Jc (Jc < N). The
    frozen parts are generated once and shared by copy, so their
    coordinates are bit-identical across all K outputs.
    """
    frozen = [np.asarray(z, dtype=np.float64).reshape(-1) for z in frozen]
    Jc = len(frozen)
    if not 0 <= Jc < gen.N:
        raise ValueError(f"can freeze 0..{gen.N - 1} parts, got {Jc}")
    if Jc == 0:
        return sample_paths(gen, past, K, seed)
    past = _past_batch(past)
    B = past.shape[0]
    zs, parents = [], []
    for i in range(gen.N):
        if i < Jc:
            zs.append(np.broadcast_to(frozen[i], (B, 1, gen.latent_dim)).copy())
            parents.append(np.zeros(1, dtype=int))
        else:
            zs.append(gen._latents(seed, B, i, K))
            parents.append(np.zeros(K, dtype=int) if i == Jc else np.arange(K))
    return gen._generate(past, zs, parents)


# ---------------------------------------------------------------- checkpoint

def save_generator(path, gen: MotionGenerator, extra: dict | None = None) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "joints": list(gen.skeleton.joint_names), "parents": list(gen.skeleton.parents),
        "partition": [list(p) for p in gen.partition.parts], "part_names": list(gen.partition.names),
        "H": gen.H, "T": gen.T, "M": gen.M, "hidden": gen.hidden,
        "latent_dim": gen.latent_dim, "n_blocks": gen.n_blocks,
    }
    if extra:
        meta["extra"] = extra
    arrays = {"meta": np.array(json.dumps(meta))}
    for p in gen.parameters():
        arrays[p.name] = p.data
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_generator(path, skeleton: Skeleton | None = None, M: int | None = None) -> MotionGenerator:
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported generator checkpoint version {meta.get('version')}")
        skel = Skeleton(meta["joints"], meta["parents"])
        if skeleton is not None and skeleton.fingerprint() != skel.fingerprint():
            raise ValueError("generator checkpoint was trained on a different skeleton")
        if M is not None and M != meta["M"]:
            raise ValueError(f"generator checkpoint uses M={meta['M']}, expected M={M}")
        part = PartitionSpec(tuple(tuple(p) for p in meta["partition"]), tuple(meta["part_names"]))
        gen = MotionGenerator(skel, part, meta["H"], meta["T"], meta["M"], meta["hidden"],
                              meta["latent_dim"], meta["n_blocks"])
        for p in gen.parameters():
            p.data = np.array(z[p.name], dtype=np.float64)
            p.zero_grad()
    return gen


def checkpoint_meta(path) -> dict:
    with np.load(Path(path), allow_pickle=False) as z:
        return json.loads(str(z["meta"]))
