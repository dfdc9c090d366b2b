"""Zonotope tokenization and decoder-only transformer inference.

A zonotope with exactly K_g generators becomes 1 + K_g tokens in
R^{n_y + 1}: the center vector, then each generator vector, each carrying the
normalized time coordinate ``step / t_max`` in the last slot.  A context of
n_o zonotopes is a prompt of ``n_o (1 + K_g)`` tokens; a learned query block
of 1 + K_g tokens is appended and the hidden states at the query positions are
projected back to R^{n_y}, reconstructing the predicted center and generators.
Attention is causally masked, so perturbing a query token never changes the
outputs at earlier positions.

Inference is pure: the forward pass is a deterministic function of the weight
bundle and the prompt.  Weight bundles live on disk as ``manifest.json``
(architecture plus an ordered tensor table with byte offsets) and
``weights.bin`` (row-major little-endian float32) -- the binding contract with
the training component.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .setalg import Zonotope
from . import setalg

__all__ = [
    "TokenizerConfig",
    "TokenSequence",
    "WeightBundle",
    "TokenizationError",
    "ManifestError",
    "tokenize",
    "detokenize",
    "forward",
    "predict_next",
    "autoregress",
    "Rollout",
    "load_bundle",
    "save_bundle",
    "tensor_table",
]

LAYER_NORM_EPS = 1e-5


class TokenizationError(ValueError):
    pass


class ManifestError(ValueError):
    """Weight bundle manifest is inconsistent with its tensors or the prompt."""


@dataclass(frozen=True)
class TokenizerConfig:
    """Token geometry: output dimension, generators per set, time scale, context length."""

    n_y: int
    k_g: int
    t_max: float
    n_o: int

    def __post_init__(self):
        if self.k_g < 1 or self.k_g % self.n_y != 0:
            raise ValueError(f"k_g={self.k_g} must be a positive multiple of n_y={self.n_y}")
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")
        if self.n_o < 1:
            raise ValueError("context length must be >= 1")

    @property
    def block(self) -> int:
        return 1 + self.k_g

    @property
    def token_order(self) -> int:
        return self.k_g // self.n_y


@dataclass(frozen=True)
class TokenSequence:
    """Ordered tokens with role markers (0 = center, 1 = generator) and step indices."""

    tokens: np.ndarray  # (L, n_y + 1)
    roles: np.ndarray  # (L,)
    steps: np.ndarray  # (L,)

    def __post_init__(self):
        t = np.asarray(self.tokens, dtype=float)
        object.__setattr__(self, "tokens", t)
        object.__setattr__(self, "roles", np.asarray(self.roles, dtype=int))
        object.__setattr__(self, "steps", np.asarray(self.steps, dtype=int))

    def __len__(self) -> int:
        return self.tokens.shape[0]


def tokenize(zonos: Sequence[Zonotope], steps: Sequence[int], cfg: TokenizerConfig) -> TokenSequence:
    """Encode zonotopes as center/generator token blocks, padding to k_g generators."""
    if len(zonos) != len(steps):
        raise TokenizationError(f"{len(zonos)} zonotopes vs {len(steps)} step indices")
    toks, roles, stps = [], [], []
    for Z, k in zip(zonos, steps):
        if Z.dim != cfg.n_y:
            raise TokenizationError(f"zonotope of dimension {Z.dim}, tokenizer expects {cfg.n_y}")
        if Z.n_generators > cfg.k_g:
            raise TokenizationError(
                f"zonotope has {Z.n_generators} generators > k_g={cfg.k_g}; reduce it first"
            )
        t = float(k) / cfg.t_max
        toks.append(np.concatenate([Z.center, [t]]))
        roles.append(0)
        stps.append(k)
        G = np.zeros((cfg.n_y, cfg.k_g))
        G[:, : Z.n_generators] = Z.generators
        for j in range(cfg.k_g):
            toks.append(np.concatenate([G[:, j], [t]]))
            roles.append(1)
            stps.append(k)
    return TokenSequence(tokens=np.array(toks), roles=np.array(roles), steps=np.array(stps))


def detokenize(block: np.ndarray, cfg: TokenizerConfig) -> Zonotope:
    """Decode one 1 + K_g token block; any trailing time slot is discarded."""
    block = np.asarray(block, dtype=float)
    if block.ndim != 2 or block.shape[0] != cfg.block:
        raise TokenizationError(f"expected a block of {cfg.block} tokens, got shape {block.shape}")
    if block.shape[1] == cfg.n_y + 1:
        block = block[:, : cfg.n_y]
    elif block.shape[1] != cfg.n_y:
        raise TokenizationError(f"token width {block.shape[1]} vs n_y {cfg.n_y}")
    return Zonotope(block[0], block[1:].T)


def tensor_table(arch: Mapping) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical tensor names and shapes for an architecture manifest.

    Linear layers are stored as (in, out) and applied as ``x @ W + b``.
    """
    d, dff = arch["d_model"], arch["d_ff"]
    n_y, k_g, n_o = arch["n_y"], arch["k_g"], arch["n_o"]
    pos_len = (n_o + 1) * (1 + k_g)
    table = [
        ("embed.weight", (n_y + 1, d)),
        ("embed.bias", (d,)),
        ("pos.weight", (pos_len, d)),
        ("query.weight", (1 + k_g, d)),
    ]
    for i in range(arch["n_layers"]):
        pre = f"layers.{i}"
        table += [
            (f"{pre}.ln1.gain", (d,)),
            (f"{pre}.ln1.bias", (d,)),
            (f"{pre}.attn.wq", (d, d)),
            (f"{pre}.attn.bq", (d,)),
            (f"{pre}.attn.wk", (d, d)),
            (f"{pre}.attn.bk", (d,)),
            (f"{pre}.attn.wv", (d, d)),
            (f"{pre}.attn.bv", (d,)),
            (f"{pre}.attn.wo", (d, d)),
            (f"{pre}.attn.bo", (d,)),
            (f"{pre}.ln2.gain", (d,)),
            (f"{pre}.ln2.bias", (d,)),
            (f"{pre}.ff.w1", (d, dff)),
            (f"{pre}.ff.b1", (dff,)),
            (f"{pre}.ff.w2", (dff, d)),
            (f"{pre}.ff.b2", (d,)),
        ]
    table += [
        ("final_ln.gain", (d,)),
        ("final_ln.bias", (d,)),
        ("head.weight", (d, n_y)),
        ("head.bias", (n_y,)),
    ]
    return table


REQUIRED_ARCH_KEYS = (
    "d_model", "n_heads", "n_layers", "d_ff", "k_g", "n_y", "n_o",
    "pos_len", "norm_placement", "activation", "layer_norm_eps", "version",
)


@dataclass(frozen=True)
class WeightBundle:
    """Architecture manifest plus named parameter tensors (float32 storage)."""

    arch: dict
    tensors: dict

    def __post_init__(self):
        for key in REQUIRED_ARCH_KEYS:
            if key not in self.arch:
                raise ManifestError(f"manifest is missing field {key!r}")
        arch = self.arch
        if arch["norm_placement"] != "pre" or arch["activation"] != "gelu_tanh":
            raise ManifestError(
                f"unsupported architecture tags {arch['norm_placement']}/{arch['activation']}"
            )
        if arch["d_model"] % arch["n_heads"] != 0:
            raise ManifestError("d_model must be divisible by n_heads")
        if arch["pos_len"] != (arch["n_o"] + 1) * (1 + arch["k_g"]):
            raise ManifestError("pos_len inconsistent with n_o and k_g")
        expected = tensor_table(arch)
        names = [n for n, _ in expected]
        if set(names) != set(self.tensors.keys()):
            missing = set(names) - set(self.tensors.keys())
            extra = set(self.tensors.keys()) - set(names)
            raise ManifestError(f"tensor set mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, shape in expected:
            got = self.tensors[name].shape
            if tuple(got) != shape:
                raise ManifestError(f"tensor {name} has shape {got}, manifest requires {shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def _gelu_tanh(x: np.ndarray) -> np.ndarray:
    # tanh approximation, chosen for bit-parity across language runtimes
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


def _softmax(x: np.ndarray) -> np.ndarray:
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)


def forward(wb: WeightBundle, prompt: TokenSequence) -> np.ndarray:
    """Deterministic forward pass; returns the 1 + K_g predicted tokens in R^{n_y}.

    The prompt must cover exactly n_o token blocks; the learned query block is
    appended internally.  Computation runs in float64 over the float32-stored
    weights.
    """
    arch = wb.arch
    d, H, kg, n_o = arch["d_model"], arch["n_heads"], arch["k_g"], arch["n_o"]
    block = 1 + kg
    if len(prompt) != n_o * block:
        raise ManifestError(f"prompt of {len(prompt)} tokens, architecture expects {n_o * block}")
    if prompt.tokens.shape[1] != arch["n_y"] + 1:
        raise ManifestError(f"token width {prompt.tokens.shape[1]} vs n_y+1 = {arch['n_y'] + 1}")
    eps = float(arch["layer_norm_eps"])

    def t64(name):
        return wb[name].astype(np.float64)

    x = prompt.tokens @ t64("embed.weight") + t64("embed.bias")
    h = np.vstack([x, t64("query.weight")])
    L = h.shape[0]
    h = h + t64("pos.weight")[:L]
    dh = d // H
    mask = np.triu(np.full((L, L), -np.inf), k=1)  # causal: position i sees j <= i
    for i in range(arch["n_layers"]):
        pre = f"layers.{i}"
        u = _layer_norm(h, t64(f"{pre}.ln1.gain"), t64(f"{pre}.ln1.bias"), eps)
        q = (u @ t64(f"{pre}.attn.wq") + t64(f"{pre}.attn.bq")).reshape(L, H, dh)
        k = (u @ t64(f"{pre}.attn.wk") + t64(f"{pre}.attn.bk")).reshape(L, H, dh)
        v = (u @ t64(f"{pre}.attn.wv") + t64(f"{pre}.attn.bv")).reshape(L, H, dh)
        att = np.einsum("ihd,jhd->hij", q, k) / np.sqrt(dh)
        att = _softmax(att + mask[None, :, :])
        ctx = np.einsum("hij,jhd->ihd", att, v).reshape(L, d)
        h = h + ctx @ t64(f"{pre}.attn.wo") + t64(f"{pre}.attn.bo")
        u = _layer_norm(h, t64(f"{pre}.ln2.gain"), t64(f"{pre}.ln2.bias"), eps)
        u = _gelu_tanh(u @ t64(f"{pre}.ff.w1") + t64(f"{pre}.ff.b1"))
        h = h + u @ t64(f"{pre}.ff.w2") + t64(f"{pre}.ff.b2")
    h = _layer_norm(h, t64("final_ln.gain"), t64("final_ln.bias"), eps)
    return h[-block:] @ t64("head.weight") + t64("head.bias")


def predict_next(
    wb: WeightBundle,
    context: Sequence[Zonotope],
    steps: Sequence[int],
    cfg: TokenizerConfig,
) -> Zonotope:
    """Tokenize the context, run the model, decode the predicted zonotope."""
    return detokenize(forward(wb, tokenize(context, steps, cfg)), cfg)


@dataclass(frozen=True)
class Rollout:
    """Autoregressive predictions: raw network outputs and the sets fed back."""

    steps: tuple
    raw_sets: tuple
    fed_sets: tuple


def autoregress(
    wb: WeightBundle,
    init_context: Sequence[Zonotope],
    horizon: int,
    cfg: TokenizerConfig,
    feedback_mode: str = "raw",
    quantiles=None,
    init_steps: Optional[Sequence[int]] = None,
) -> Rollout:
    """Slide the context window forward, predicting steps n_o .. horizon.

    ``feedback_mode='raw'`` feeds predictions straight back;
    ``'inflated'`` inflates each prediction by its per-step quantile before it
    re-enters the context, which requires a quantile table covering every
    predicted step.
    """
    from .conformal import inflate

    if feedback_mode not in ("raw", "inflated"):
        raise ValueError(f"unknown feedback mode {feedback_mode!r}")
    if feedback_mode == "inflated" and quantiles is None:
        raise ValueError("inflated feedback requires a quantile table")
    if len(init_context) != cfg.n_o:
        raise ValueError(f"context of {len(init_context)} sets, expected n_o={cfg.n_o}")
    steps = list(init_steps) if init_steps is not None else list(range(cfg.n_o))
    ctx = list(init_context)
    out_steps, raw, fed = [], [], []
    for k in range(steps[-1] + 1, steps[-1] + 1 + (horizon - cfg.n_o + 1)):
        pred = predict_next(wb, ctx, steps, cfg)
        fb = pred
        if feedback_mode == "inflated":
            if k not in quantiles.per_step:
                raise ValueError(f"quantile table has no entry for step {k}")
            fb = setalg.reduce(inflate(pred, quantiles.per_step[k]), cfg.token_order)
        out_steps.append(k)
        raw.append(pred)
        fed.append(fb)
        ctx = ctx[1:] + [fb]
        steps = steps[1:] + [k]
    return Rollout(steps=tuple(out_steps), raw_sets=tuple(raw), fed_sets=tuple(fed))


def save_bundle(wb: WeightBundle, directory) -> None:
    """Write manifest.json and weights.bin (ordered float32, little endian)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    table = tensor_table(wb.arch)
    entries = []
    offset = 0
    blobs = []
    for name, shape in table:
        data = np.ascontiguousarray(wb.tensors[name], dtype="<f4")
        entries.append({"name": name, "shape": list(shape), "offset": offset})
        blobs.append(data.tobytes())
        offset += data.nbytes
    manifest = {"format_version": 1, "arch": dict(wb.arch), "tensors": entries}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (directory / "weights.bin").write_bytes(b"".join(blobs))


def load_bundle(directory) -> WeightBundle:
    """Read a manifest.json/weights.bin pair, validating offsets and shapes."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    weights_path = directory / "weights.bin"
    if not manifest_path.exists() or not weights_path.exists():
        raise FileNotFoundError(f"weight bundle incomplete under {directory}")
    manifest = json.loads(manifest_path.read_text())
    raw = weights_path.read_bytes()
    tensors = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(raw):
            raise ManifestError(f"tensor {entry['name']} overruns weights.bin")
        tensors[entry["name"]] = np.frombuffer(raw[start:end], dtype="<f4").reshape(shape)
    return WeightBundle(arch=dict(manifest["arch"]), tensors=tensors)
