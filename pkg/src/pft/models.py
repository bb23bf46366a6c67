"""The three networks: feature extractor, classifier head, residual translator.

All are plain affine/ReLU stacks over the taped tensor engine. The extractor
and classifier are frozen after source training; the translator is the only
thing adaptation ever touches, and it starts as an exact identity map thanks
to its zero-initialized final layer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .numerics import ShapeError, Tensor

__all__ = [
    "Affine",
    "FeatureExtractor",
    "Classifier",
    "Translator",
    "LayeredFeatures",
    "set_frozen",
    "count_cost",
    "lightweight_ratio",
    "assert_lightweight",
    "LIGHTWEIGHT_MAX_RATIO",
]

LIGHTWEIGHT_MAX_RATIO = 0.10


@dataclass
class LayeredFeatures:
    """Ordered per-layer activations plus the index set used for style statistics."""

    layers: list[Tensor]
    style_layers: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.style_layers:
            self.style_layers = tuple(range(len(self.layers)))
        for idx in self.style_layers:
            if not 0 <= idx < len(self.layers):
                raise IndexError(f"style layer index {idx} out of range for {len(self.layers)} layers")

    @property
    def final(self) -> Tensor:
        return self.layers[-1]


class Affine:
    """x @ W + b with W of shape (in_dim, out_dim)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None,
                 weight_scale: float | None = None, zero_init: bool = False):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        if zero_init:
            w = np.zeros((self.in_dim, self.out_dim))
        else:
            if rng is None:
                raise ValueError("Affine needs an rng unless zero_init is set")
            scale = weight_scale if weight_scale is not None else np.sqrt(2.0 / self.in_dim)
            w = rng.normal(0.0, scale, size=(self.in_dim, self.out_dim))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(self.out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return nm.add(nm.matmul(x, self.weight), self.bias)

    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]


class _Net:
    """Shared param bookkeeping: freezing, naming, cloning support."""

    frozen = False

    def _affines(self) -> list[tuple[str, Affine]]:
        raise NotImplementedError

    def params(self) -> list[Tensor]:
        out: list[Tensor] = []
        for _, aff in self._affines():
            out.extend(aff.params())
        return out

    def trainable_params(self) -> list[Tensor]:
        return [p for p in self.params() if p.requires_grad]

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, aff in self._affines():
            out[f"{name}.weight"] = aff.weight
            out[f"{name}.bias"] = aff.bias
        return out

    def set_frozen(self, frozen: bool) -> None:
        self.frozen = bool(frozen)
        for p in self.params():
            p.set_requires_grad(not frozen)

    def param_count(self) -> int:
        return int(np.sum([p.size for p in self.params()]))


class FeatureExtractor(_Net):
    """Stack of affine+ReLU blocks, widths input_dim -> hidden (x L-1) -> feat_dim.

    hidden_dim defaults to 4 * feat_dim, which keeps the default translator
    under the 10% lightweight budget at every supported feature width.
    Exposes every block's activation, not just the final feature.
    """

    def __init__(self, input_dim: int, feat_dim: int, hidden_dim: int | None = None,
                 n_blocks: int = 3, rng: np.random.Generator | None = None):
        if n_blocks < 1:
            raise ValueError("extractor needs at least one block")
        self.input_dim = int(input_dim)
        self.feat_dim = int(feat_dim)
        self.hidden_dim = int(hidden_dim) if hidden_dim is not None else 4 * self.feat_dim
        self.n_blocks = int(n_blocks)
        widths = [self.input_dim] + [self.hidden_dim] * (self.n_blocks - 1) + [self.feat_dim]
        self.blocks = [Affine(widths[i], widths[i + 1], rng=rng) for i in range(self.n_blocks)]

    def _affines(self):
        return [(f"block{i}", b) for i, b in enumerate(self.blocks)]

    def extract(self, x: Tensor) -> LayeredFeatures:
        if x.data.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"extract: expected (batch, {self.input_dim}), got {x.shape}")
        acts: list[Tensor] = []
        h = x
        for block in self.blocks:
            h = nm.relu(block(h))
            acts.append(h)
        return LayeredFeatures(acts)

    def __call__(self, x: Tensor) -> LayeredFeatures:
        return self.extract(x)

    def cost_entries(self) -> list[tuple[str, int, int]]:
        out = []
        for b in self.blocks:
            out.append(("affine", b.in_dim, b.out_dim))
            out.append(("relu", b.out_dim, b.out_dim))
        return out

    def clone(self) -> "FeatureExtractor":
        other = FeatureExtractor.__new__(FeatureExtractor)
        other.input_dim = self.input_dim
        other.feat_dim = self.feat_dim
        other.hidden_dim = self.hidden_dim
        other.n_blocks = self.n_blocks
        other.blocks = [_clone_affine(b) for b in self.blocks]
        other.frozen = self.frozen
        other.set_frozen(self.frozen)
        return other


class Classifier(_Net):
    """Single affine map feat_dim -> num_classes producing logits."""

    def __init__(self, feat_dim: int, num_classes: int, rng: np.random.Generator | None = None):
        self.feat_dim = int(feat_dim)
        self.num_classes = int(num_classes)
        self.head = Affine(self.feat_dim, self.num_classes, rng=rng,
                           weight_scale=np.sqrt(1.0 / self.feat_dim))

    def _affines(self):
        return [("head", self.head)]

    def classify(self, f: Tensor) -> Tensor:
        if f.data.ndim != 2 or f.shape[1] != self.feat_dim:
            raise ShapeError(f"classify: expected (batch, {self.feat_dim}), got {f.shape}")
        return self.head(f)

    def __call__(self, f: Tensor) -> Tensor:
        return self.classify(f)

    def cost_entries(self) -> list[tuple[str, int, int]]:
        return [("affine", self.head.in_dim, self.head.out_dim)]

    def clone(self) -> "Classifier":
        other = Classifier.__new__(Classifier)
        other.feat_dim = self.feat_dim
        other.num_classes = self.num_classes
        other.head = _clone_affine(self.head)
        other.frozen = self.frozen
        other.set_frozen(self.frozen)
        return other


TRANSLATOR_HIDDEN_BIAS = 1.0


class Translator(_Net):
    """Residual feature-space translator: output = input + delta(input).

    n_layers affine maps feat_dim -> feat_dim with ReLU between them; the
    final layer starts at zero so the whole map starts as the identity.
    Hidden biases start positive so the delta path begins in its linear
    regime (a near-affine correction is reachable without crossing kinks).
    translate() exposes the internal activations plus the output; style
    statistics default to the output alone, where the aligned feature lives.
    """

    def __init__(self, feat_dim: int, n_layers: int = 2, rng: np.random.Generator | None = None,
                 style_layers: tuple[int, ...] | None = None):
        if n_layers < 1:
            raise ValueError("translator needs at least one layer")
        self.feat_dim = int(feat_dim)
        self.n_layers = int(n_layers)
        self.layers = [Affine(self.feat_dim, self.feat_dim, rng=rng) for _ in range(self.n_layers - 1)]
        self.layers.append(Affine(self.feat_dim, self.feat_dim, zero_init=True))
        for layer in self.layers[:-1]:
            layer.bias.data[...] = TRANSLATOR_HIDDEN_BIAS
        # one activation per layer: hidden activations then the residual output
        self.style_layers = (tuple(style_layers) if style_layers is not None
                             else (self.n_layers - 1,))
        for idx in self.style_layers:
            if not 0 <= idx < self.n_layers:
                raise IndexError(f"style layer index {idx} out of range for {self.n_layers} activations")

    def _affines(self):
        return [(f"layer{i}", l) for i, l in enumerate(self.layers)]

    def translate(self, feats: LayeredFeatures | Tensor) -> LayeredFeatures:
        f = feats.final if isinstance(feats, LayeredFeatures) else feats
        if f.data.ndim != 2 or f.shape[1] != self.feat_dim:
            raise ShapeError(f"translate: expected (batch, {self.feat_dim}), got {f.shape}")
        acts: list[Tensor] = []
        h = f
        for layer in self.layers[:-1]:
            h = nm.relu(layer(h))
            acts.append(h)
        delta = self.layers[-1](h)
        acts.append(nm.add(f, delta))
        return LayeredFeatures(acts, style_layers=self.style_layers)

    def __call__(self, feats) -> LayeredFeatures:
        return self.translate(feats)

    def cost_entries(self) -> list[tuple[str, int, int]]:
        out = []
        for i, l in enumerate(self.layers):
            out.append(("affine", l.in_dim, l.out_dim))
            if i < len(self.layers) - 1:
                out.append(("relu", l.out_dim, l.out_dim))
        out.append(("add", self.feat_dim, self.feat_dim))  # residual join
        return out

    def clone(self) -> "Translator":
        other = Translator.__new__(Translator)
        other.feat_dim = self.feat_dim
        other.n_layers = self.n_layers
        other.layers = [_clone_affine(l) for l in self.layers]
        other.style_layers = self.style_layers
        other.frozen = self.frozen
        other.set_frozen(self.frozen)
        return other


def _clone_affine(aff: Affine) -> Affine:
    other = Affine.__new__(Affine)
    other.in_dim = aff.in_dim
    other.out_dim = aff.out_dim
    other.weight = Tensor(aff.weight.data.copy(), requires_grad=aff.weight.requires_grad)
    other.bias = Tensor(aff.bias.data.copy(), requires_grad=aff.bias.requires_grad)
    return other


def set_frozen(net: _Net, frozen: bool) -> None:
    """Exclude (or re-admit) a network's parameters from gradient tracking."""
    net.set_frozen(frozen)


_FLOPS = {
    # affine in->out: in*out multiplies plus in*out additions (bias fold included)
    "affine": lambda i, o: 2 * i * o,
    "relu": lambda i, o: o,
    "add": lambda i, o: o,
}


def count_cost(*nets: _Net) -> dict[str, int]:
    """Analytic parameter and per-sample FLOP counts for a set of networks."""
    total = 0
    trainable = 0
    flops = 0
    for net in nets:
        for p in net.params():
            total += p.size
            if p.requires_grad:
                trainable += p.size
        for kind, i, o in net.cost_entries():
            flops += _FLOPS[kind](i, o)
    return {
        "trainable_params": int(trainable),
        "total_params": int(total),
        "flops_per_sample": int(flops),
    }


def lightweight_ratio(extractor: FeatureExtractor, classifier: Classifier,
                      translator: Translator) -> float:
    """Adaptation parameters relative to the frozen backbone (extractor+classifier)."""
    backbone = extractor.param_count() + classifier.param_count()
    return translator.param_count() / backbone


def assert_lightweight(extractor: FeatureExtractor, classifier: Classifier,
                       translator: Translator, max_ratio: float = LIGHTWEIGHT_MAX_RATIO) -> None:
    ratio = lightweight_ratio(extractor, classifier, translator)
    if ratio > max_ratio:
        raise ValueError(
            f"translator is not lightweight: {translator.param_count()} params is "
            f"{ratio:.1%} of the backbone (limit {max_ratio:.0%})"
        )
