"""Forward-pass reference for the idiosyncrasy/dependence attention heads and the joint losses.

Feature maps are Tensor3 values laid out (channels, height, width) in
float64. Everything here is a pure function of explicit weights; nothing
trains.

Idiosyncrasy (per disease): channel gate, then spatial gate on the gated map.
Dependence: G_dr = F_dr + sigmoid(MLP(fc(avgpool(F_dme)))) * F_dme, the
multiply binding before the add. The DME output swaps the two inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage
from scipy.special import expit

from fundus.errors import ContractError
from fundus.metrics import check_distribution

LOG_FLOOR = 1e-12
DEFAULT_REDUCTION = 16
DEFAULT_KERNEL = 7
DEFAULT_LAMBDA = 0.25


def _frozen(a: np.ndarray | Sequence[float] | float) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.flags.writeable = False
    return arr


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Tensor3:
    values: np.ndarray  # (C, H, W)

    def __post_init__(self) -> None:
        v = _frozen(self.values)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ContractError(f"Tensor3 needs shape (C, H, W) with every dim >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ContractError("Tensor3 values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    def __repr__(self) -> str:
        c, h, w = self.shape
        return f"Tensor3({c}x{h}x{w})"


@dataclass(frozen=True, eq=False)
class ChannelAttnWeights:
    """Shared two-layer MLP: w2 . relu(w1 . x + b1) + b2, hidden width C / r."""

    w1: np.ndarray  # (C/r, C)
    b1: np.ndarray  # (C/r,)
    w2: np.ndarray  # (C, C/r)
    b2: np.ndarray  # (C,)

    def __post_init__(self) -> None:
        for name in ("w1", "b1", "w2", "b2"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.w1.ndim != 2 or self.w2.ndim != 2:
            raise ContractError("w1 and w2 must be matrices")
        hidden, c = self.w1.shape
        if self.w2.shape != (c, hidden) or self.b1.shape != (hidden,) or self.b2.shape != (c,):
            raise ContractError(
                f"inconsistent MLP shapes w1{self.w1.shape} b1{self.b1.shape} "
                f"w2{self.w2.shape} b2{self.b2.shape}"
            )
        if c % hidden:
            raise ContractError(f"hidden width {hidden} does not divide {c} channels")

    @property
    def channels(self) -> int:
        return self.w1.shape[1]

    @property
    def reduction(self) -> int:
        return self.channels // self.w1.shape[0]

    @classmethod
    def zeros(cls, channels: int, reduction: int = DEFAULT_REDUCTION) -> ChannelAttnWeights:
        if reduction < 1 or channels % reduction:
            raise ContractError(f"reduction {reduction} must be >= 1 and divide {channels}")
        hidden = channels // reduction
        return cls(
            w1=np.zeros((hidden, channels)),
            b1=np.zeros(hidden),
            w2=np.zeros((channels, hidden)),
            b2=np.zeros(channels),
        )

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray], prefix: str) -> ChannelAttnWeights:
        return cls(**{k: _pick(tensors, f"{prefix}.{k}") for k in ("w1", "b1", "w2", "b2")})

    def to_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.{k}": getattr(self, k) for k in ("w1", "b1", "w2", "b2")}


@dataclass(frozen=True, eq=False)
class SpatialAttnWeights:
    """k x k kernel over the (avg, max) plane stack, stored (2, k, k)."""

    kernel: np.ndarray
    bias: float = 0.0

    def __post_init__(self) -> None:
        k = _frozen(self.kernel)
        if k.ndim != 3 or k.shape[0] != 2 or k.shape[1] != k.shape[2] or k.shape[1] % 2 == 0:
            raise ContractError(f"spatial kernel must be (2, k, k) with k odd, got {k.shape}")
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def size(self) -> int:
        return self.kernel.shape[1]

    @classmethod
    def zeros(cls, k: int = DEFAULT_KERNEL) -> SpatialAttnWeights:
        return cls(kernel=np.zeros((2, k, k)), bias=0.0)

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray], prefix: str) -> SpatialAttnWeights:
        bias = tensors.get(f"{prefix}.bias", 0.0)
        return cls(kernel=_pick(tensors, f"{prefix}.kernel"), bias=float(np.asarray(bias).reshape(-1)[0]))

    def to_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.kernel": self.kernel, f"{prefix}.bias": np.float64(self.bias)}


@dataclass(frozen=True, eq=False)
class DependenceWeights:
    fc: np.ndarray  # (C, C)
    fc_bias: np.ndarray  # (C,)
    mlp: ChannelAttnWeights

    def __post_init__(self) -> None:
        object.__setattr__(self, "fc", _frozen(self.fc))
        object.__setattr__(self, "fc_bias", _frozen(self.fc_bias))
        c = self.mlp.channels
        if self.fc.shape != (c, c) or self.fc_bias.shape != (c,):
            raise ContractError(f"fc must be ({c}, {c}) with a ({c},) bias, got {self.fc.shape}/{self.fc_bias.shape}")

    @property
    def channels(self) -> int:
        return self.mlp.channels

    @classmethod
    def zeros(cls, channels: int, reduction: int = DEFAULT_REDUCTION) -> DependenceWeights:
        return cls(
            fc=np.zeros((channels, channels)),
            fc_bias=np.zeros(channels),
            mlp=ChannelAttnWeights.zeros(channels, reduction),
        )

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray], prefix: str) -> DependenceWeights:
        return cls(
            fc=_pick(tensors, f"{prefix}.fc"),
            fc_bias=_pick(tensors, f"{prefix}.fc_bias"),
            mlp=ChannelAttnWeights.from_tensors(tensors, f"{prefix}.mlp"),
        )

    def to_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        return {
            f"{prefix}.fc": self.fc,
            f"{prefix}.fc_bias": self.fc_bias,
            **self.mlp.to_tensors(f"{prefix}.mlp"),
        }


def _pick(tensors: Mapping[str, np.ndarray], name: str) -> np.ndarray:
    try:
        return tensors[name]
    except KeyError:
        raise ContractError(f"tensor {name} missing from weight file") from None


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------

def mlp(x: np.ndarray, w: ChannelAttnWeights) -> np.ndarray:
    hidden = np.maximum(w.w1 @ x + w.b1, 0.0)
    return w.w2 @ hidden + w.b2


def _check_channels(F: Tensor3, c: int, what: str) -> None:
    if F.channels != c:
        raise ContractError(f"{what} expects {c} channels, feature map has {F.channels}")


def channel_attention(F: Tensor3, w: ChannelAttnWeights) -> np.ndarray:
    """Per-channel gate in (0, 1) from the shared MLP over avg- and max-pooled planes."""
    _check_channels(F, w.channels, "channel attention")
    avg = F.values.mean(axis=(1, 2))
    mx = F.values.max(axis=(1, 2))
    return expit(mlp(avg, w) + mlp(mx, w))


def apply_channel(F: Tensor3, gate: np.ndarray) -> Tensor3:
    gate = np.asarray(gate, dtype=np.float64)
    if gate.shape != (F.channels,):
        raise ContractError(f"channel gate has shape {gate.shape}, expected ({F.channels},)")
    return Tensor3(gate[:, None, None] * F.values)


def spatial_attention(F: Tensor3, w: SpatialAttnWeights) -> np.ndarray:
    """(H, W) gate: zero-padded k x k correlation of the (avg, max) stack, then sigmoid."""
    planes = (F.values.mean(axis=0), F.values.max(axis=0))
    acc = np.zeros(F.shape[1:], dtype=np.float64)
    for plane, kernel in zip(planes, w.kernel):
        acc += ndimage.correlate(plane, kernel, mode="constant", cval=0.0)
    return expit(acc + w.bias)


def apply_spatial(F: Tensor3, gate: np.ndarray) -> Tensor3:
    gate = np.asarray(gate, dtype=np.float64)
    if gate.shape != F.shape[1:]:
        raise ContractError(f"spatial gate has shape {gate.shape}, expected {F.shape[1:]}")
    return Tensor3(gate[None, :, :] * F.values)


def idiosyncrasy(F: Tensor3, cw: ChannelAttnWeights, sw: SpatialAttnWeights) -> Tensor3:
    gated = apply_channel(F, channel_attention(F, cw))
    return apply_spatial(gated, spatial_attention(gated, sw))


def dependence(F_self: Tensor3, F_other: Tensor3, w: DependenceWeights) -> Tensor3:
    """F_self + gate(F_other) * F_other, with the gate a per-channel vector."""
    if F_self.shape != F_other.shape:
        raise ContractError(f"dependence inputs differ in shape: {F_self.shape} vs {F_other.shape}")
    _check_channels(F_other, w.channels, "dependence")
    pooled = F_other.values.mean(axis=(1, 2))
    gate = expit(mlp(w.fc @ pooled + w.fc_bias, w.mlp))
    return Tensor3(F_self.values + gate[:, None, None] * F_other.values)


class HeadMode(str, Enum):
    NONE = "none"
    DEPENDENCE = "dependence"
    IDIOSYNCRASY = "idiosyncrasy"
    BOTH = "both"


@dataclass(frozen=True, eq=False)
class HeadWeights:
    """Separate parameters per disease branch."""

    dr_channel: ChannelAttnWeights
    dr_spatial: SpatialAttnWeights
    dme_channel: ChannelAttnWeights
    dme_spatial: SpatialAttnWeights
    dr_dependence: DependenceWeights
    dme_dependence: DependenceWeights

    @classmethod
    def zeros(cls, channels: int, reduction: int = DEFAULT_REDUCTION, k: int = DEFAULT_KERNEL) -> HeadWeights:
        return cls(
            dr_channel=ChannelAttnWeights.zeros(channels, reduction),
            dr_spatial=SpatialAttnWeights.zeros(k),
            dme_channel=ChannelAttnWeights.zeros(channels, reduction),
            dme_spatial=SpatialAttnWeights.zeros(k),
            dr_dependence=DependenceWeights.zeros(channels, reduction),
            dme_dependence=DependenceWeights.zeros(channels, reduction),
        )

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray]) -> HeadWeights:
        return cls(
            dr_channel=ChannelAttnWeights.from_tensors(tensors, "dr.channel"),
            dr_spatial=SpatialAttnWeights.from_tensors(tensors, "dr.spatial"),
            dme_channel=ChannelAttnWeights.from_tensors(tensors, "dme.channel"),
            dme_spatial=SpatialAttnWeights.from_tensors(tensors, "dme.spatial"),
            dr_dependence=DependenceWeights.from_tensors(tensors, "dr.dependence"),
            dme_dependence=DependenceWeights.from_tensors(tensors, "dme.dependence"),
        )

    def to_tensors(self) -> dict[str, np.ndarray]:
        return {
            **self.dr_channel.to_tensors("dr.channel"),
            **self.dr_spatial.to_tensors("dr.spatial"),
            **self.dme_channel.to_tensors("dme.channel"),
            **self.dme_spatial.to_tensors("dme.spatial"),
            **self.dr_dependence.to_tensors("dr.dependence"),
            **self.dme_dependence.to_tensors("dme.dependence"),
        }


def attention_head(
    F_dr: Tensor3,
    F_dme: Tensor3,
    weights: HeadWeights,
    mode: HeadMode | str = HeadMode.BOTH,
) -> tuple[Tensor3, Tensor3]:
    """(DR, DME) outputs for one head variant. `both` runs idiosyncrasy then dependence."""
    mode = HeadMode(mode)
    if F_dr.shape != F_dme.shape:
        raise ContractError(f"branch feature maps differ in shape: {F_dr.shape} vs {F_dme.shape}")
    if mode is HeadMode.NONE:
        return F_dr, F_dme
    if mode in (HeadMode.IDIOSYNCRASY, HeadMode.BOTH):
        F_dr = idiosyncrasy(F_dr, weights.dr_channel, weights.dr_spatial)
        F_dme = idiosyncrasy(F_dme, weights.dme_channel, weights.dme_spatial)
    if mode in (HeadMode.DEPENDENCE, HeadMode.BOTH):
        return (
            dependence(F_dr, F_dme, weights.dr_dependence),
            dependence(F_dme, F_dr, weights.dme_dependence),
        )
    return F_dr, F_dme


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def cross_entropy(prob: Sequence[float], true_label: int) -> float:
    """-log(max(prob[true_label], 1e-12))."""
    p = np.asarray(prob, dtype=np.float64)
    check_distribution(p)
    if not 0 <= true_label < p.size:
        raise ContractError(f"label {true_label} out of range 0..{p.size - 1}")
    return float(-np.log(max(p[true_label], LOG_FLOOR)))


def batch_cross_entropy(probs: Sequence[Sequence[float]], labels: Sequence[int]) -> float:
    """Mean cross-entropy over N records."""
    if len(probs) != len(labels) or len(labels) == 0:
        raise ContractError(f"need matching non-empty probs/labels, got {len(probs)}/{len(labels)}")
    return float(np.mean([cross_entropy(p, y) for p, y in zip(probs, labels)]))


def _non_negative(**losses: float) -> None:
    for name, value in losses.items():
        if value < 0:
            raise ContractError(f"{name} must be >= 0, got {value}")


def joint_loss(l_dr: float, l_dme: float) -> float:
    _non_negative(l_dr=l_dr, l_dme=l_dme)
    return l_dr + l_dme


def weighted_joint_loss(
    l_dr: float,
    l_dme: float,
    l_dr_aux: float,
    l_dme_aux: float,
    lam: float = DEFAULT_LAMBDA,
) -> float:
    """l_dr + l_dme + lam * (l_dr_aux + l_dme_aux); the aux terms come from the attention heads."""
    _non_negative(l_dr=l_dr, l_dme=l_dme, l_dr_aux=l_dr_aux, l_dme_aux=l_dme_aux, lam=lam)
    return l_dr + l_dme + lam * (l_dr_aux + l_dme_aux)
