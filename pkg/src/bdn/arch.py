"""Network topologies: style pathways, the SCAE, the synthesis network and the
assembled model with its ablation variants."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .color import hsv_batch
from .engine import (Conv, ConvLayer, Deconv, Dropout, GlobalAvgPool, ReLU, Sequential,
                     ShapeError, Tensor, softmax, softmax_xent)

N_STYLES = 14
STYLE_NAMES = (
    "Complementary Colors", "Duotones", "High Dynamic Range", "Image Grain",
    "Light on White", "Long Exposure", "Macro", "Motion Blur", "Negative Image",
    "Rule of Thirds", "Shallow DOF", "Silhouettes", "Soft Focus", "Vanishing Point",
)
MIN_SIZE = 16
MULTIPLE = 4
DROPOUT = 0.5

# (kernel, stride, padding) of conv1..conv3; conv4 is 1x1
STAGES = ((5, 2, 2), (3, 2, 1), (3, 1, 1))


class Variant(str, enum.Enum):
    BDN = "bdn"
    BFCN = "bfcn"
    BDN_WP = "bdn-wp"
    BDN_SOFT_D = "bdn-soft-d"
    BDN_KL_D = "bdn-kl-d"


class Head(str, enum.Enum):
    BINARY = "binary"
    GAUSSIAN = "gaussian"
    DIST10 = "dist10"


HEAD_CHANNELS = {Head.BINARY: 2, Head.GAUSSIAN: 2, Head.DIST10: 10}


def default_head(variant: Variant) -> Head:
    return Head.DIST10 if Variant(variant) in (Variant.BDN_SOFT_D, Variant.BDN_KL_D) else Head.BINARY


def check_head(variant, head):
    variant, head = Variant(variant), Head(head)
    dist = variant in (Variant.BDN_SOFT_D, Variant.BDN_KL_D)
    if dist != (head is Head.DIST10):
        raise ValueError(f"variant {variant.value} cannot use the {head.value} head")


@dataclass(frozen=True)
class Profile:
    name: str
    pathway_channels: int
    synthesis_channels: int


PROFILES = {
    "full": Profile("full", 64, 128),
    "desk": Profile("desk", 16, 32),
}


def get_profile(p) -> Profile:
    if isinstance(p, Profile):
        return p
    try:
        return PROFILES[p]
    except KeyError:
        raise ValueError(f"unknown profile {p!r}; choose from {sorted(PROFILES)}") from None


def _he_conv(rng, cin, cout, k, s, p) -> ConvLayer:
    std = np.sqrt(2.0 / (cin * k * k))
    return ConvLayer(cin, cout, (k, k), (s, s), (p, p),
                     weight=Tensor(rng.normal(0.0, std, (cout, cin, k, k))))


def fcnn(rng, in_channels, width, out_channels, dropout=DROPOUT) -> Sequential:
    """conv1-conv3 with ReLU, dropout, 1x1 conv4 and global average pooling."""
    layers = []
    cin = in_channels
    for i, (k, s, p) in enumerate(STAGES, 1):
        layers += [(f"conv{i}", Conv(_he_conv(rng, cin, width, k, s, p))), (f"relu{i}", ReLU())]
        cin = width
    layers += [("drop3", Dropout(dropout)),
               ("conv4", Conv(_he_conv(rng, width, out_channels, 1, 1, 0))),
               ("gap", GlobalAvgPool())]
    return Sequential(layers)


def build_pathway(seed=None, profile="desk", n_classes=2, scae: Sequential | None = None) -> Sequential:
    """One style pathway with its conv4 + GAP classifier head attached.

    With ``scae`` given, conv1/conv2 start as copies of the SCAE encoder.
    """
    rng = np.random.default_rng(seed)
    net = fcnn(rng, 3, get_profile(profile).pathway_channels, n_classes)
    if scae is not None:
        copy_encoder(scae, net)
    return net


def build_scae(seed=None, profile="desk") -> Sequential:
    """conv1, conv2 (pathway topology) followed by mirrored deconv2, deconv1."""
    rng = np.random.default_rng(seed)
    w = get_profile(profile).pathway_channels
    (k1, s1, p1), (k2, s2, p2) = STAGES[:2]
    c1, c2 = _he_conv(rng, 3, w, k1, s1, p1), _he_conv(rng, w, w, k2, s2, p2)
    d2, d1 = c2.mirror(), c1.mirror()
    for d in (d2, d1):
        fan_in = d.in_channels * d.kernel[0] * d.kernel[1] / (d.stride[0] * d.stride[1])
        d.weight.data[...] = rng.normal(0.0, np.sqrt(1.0 / fan_in), d.weight.shape)
    return Sequential([("conv1", Conv(c1)), ("relu1", ReLU()),
                       ("conv2", Conv(c2)), ("relu2", ReLU()),
                       ("deconv2", Deconv(d2)), ("relu3", ReLU()),
                       ("deconv1", Deconv(d1))])


def copy_encoder(scae: Sequential, pathway: Sequential):
    for name in ("conv1", "conv2"):
        src, dst = scae[name].layer, pathway[name].layer
        dst.weight.data[...] = src.weight.data
        dst.bias.data[...] = src.bias.data


def headless(pathway: Sequential) -> Sequential:
    """conv1-conv3 (+ReLU) of a pathway; conv4 and the classifier are dropped."""
    return pathway.truncated("relu3") if "relu3" in pathway.names() else pathway


def synthesis_in_channels(n_pathways, profile="desk") -> int:
    return 3 + n_pathways * get_profile(profile).pathway_channels


def build_synthesis(head="binary", n_pathways=N_STYLES, seed=None, profile="desk") -> Sequential:
    rng = np.random.default_rng(seed)
    prof = get_profile(profile)
    return fcnn(rng, synthesis_in_channels(n_pathways, prof), prof.synthesis_channels,
                HEAD_CHANNELS[Head(head)])


def pad_to_multiple(images: np.ndarray, multiple=MULTIPLE) -> np.ndarray:
    """Reflect-pad (n, c, h, w) images on the bottom/right to a multiple of ``multiple``."""
    n, c, h, w = images.shape
    if h < MIN_SIZE or w < MIN_SIZE:
        raise ShapeError(f"image size {h}x{w} is below the minimum {MIN_SIZE}x{MIN_SIZE}")
    ph, pw = -h % multiple, -w % multiple
    if ph == 0 and pw == 0:
        return images
    return np.pad(images, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="reflect")


def to_input(images_rgb: np.ndarray) -> np.ndarray:
    """RGB batch in [0, 255] -> padded network input centered on zero, in [-0.5, 0.5]."""
    return pad_to_multiple(np.asarray(images_rgb, dtype=np.float64)) / 255.0 - 0.5


def pathway_predict_style(pathway: Sequential, images_rgb) -> np.ndarray:
    """(n, 2) class probabilities from a pathway that still has its head."""
    logits = pathway.forward(to_input(images_rgb), training=False)
    return softmax(logits.reshape(len(logits), -1))


def composite_label_loss(logits, labels):
    """14 (or k) independent 2-way softmax groups over 2k channels; mean of group losses."""
    labels = np.asarray(labels, dtype=int)
    n, c = logits.shape[:2]
    k = labels.shape[1]
    if c != 2 * k:
        raise ShapeError(f"composite head has {c} channels but {k} label groups need {2 * k}")
    grad = np.zeros_like(logits)
    total = 0.0
    for g in range(k):
        lg, gg = softmax_xent(logits[:, 2 * g : 2 * g + 2], labels[:, g])
        total += lg
        grad[:, 2 * g : 2 * g + 2] = gg / k
    return total / k, grad


@dataclass(eq=False)
class BdnModel:
    variant: Variant
    head: Head
    profile: Profile
    pathways: list[Sequential]
    synthesis: Sequential
    style_indices: tuple[int, ...] = tuple(range(N_STYLES))
    frozen_pathways: bool = False

    def __post_init__(self):
        self.variant, self.head = Variant(self.variant), Head(self.head)
        check_head(self.variant, self.head)
        self.profile = get_profile(self.profile)
        self.pathways = [headless(p) for p in self.pathways]
        self.style_indices = tuple(int(i) for i in self.style_indices)
        if len(self.style_indices) != len(self.pathways):
            raise ValueError(f"{len(self.pathways)} pathways but {len(self.style_indices)} style indices")
        expect = synthesis_in_channels(len(self.pathways), self.profile)
        got = self.synthesis["conv1"].layer.in_channels
        if got != expect:
            raise ShapeError(f"synthesis net takes {got} channels, attributes provide {expect}")
        heads = self.synthesis["conv4"].layer.out_channels
        if heads != HEAD_CHANNELS[self.head]:
            raise ShapeError(f"synthesis head has {heads} channels, {self.head.value} needs "
                             f"{HEAD_CHANNELS[self.head]}")

    def attributes(self, images_rgb, training=False):
        """HSV planes and every pathway's conv3 map, channel-concatenated."""
        rgb = pad_to_multiple(np.asarray(images_rgb, dtype=np.float64))
        x = rgb / 255.0 - 0.5
        blocks = [hsv_batch(rgb)] + [p.forward(x, training) for p in self.pathways]
        shapes = {b.shape[2:] for b in blocks}
        if len(shapes) != 1:
            raise ShapeError(f"attribute maps are misaligned: {[b.shape for b in blocks]}")
        return np.concatenate(blocks, axis=1)

    def forward(self, images_rgb, training=False, rng=None) -> np.ndarray:
        feats = self.attributes(images_rgb, training)
        return self.synthesis.forward(feats, training, rng)

    def backward(self, grad_out):
        g = self.synthesis.backward(grad_out)
        if self.frozen_pathways:
            return
        w = self.profile.pathway_channels
        for i, p in enumerate(self.pathways):
            p.backward(g[:, 3 + i * w : 3 + (i + 1) * w], need_input_grad=False)

    def pathway_params(self) -> list[Tensor]:
        return [t for p in self.pathways for t in p.params()]

    def synthesis_params(self) -> list[Tensor]:
        return self.synthesis.params()

    def named_params(self):
        for i, p in enumerate(self.pathways):
            for n, t in p.named_params():
                yield f"pathway{i}.{n}", t
        for n, t in self.synthesis.named_params():
            yield f"synthesis.{n}", t

    def zero_grad(self):
        for _, t in self.named_params():
            t.zero_grad()

    def param_count(self) -> int:
        return sum(t.size for _, t in self.named_params())

    def attribute_param_count(self) -> int:
        return sum(t.size for t in self.pathway_params())

    def predict(self, images_rgb) -> np.ndarray:
        return self.forward(images_rgb, training=False).reshape(len(images_rgb), -1)


def assemble(variant, pathways, head=None, profile="desk", seed=None, style_indices=None,
             frozen_pathways=False, synthesis=None) -> BdnModel:
    variant = Variant(variant)
    head = Head(head) if head is not None else default_head(variant)
    if style_indices is None:
        style_indices = tuple(range(len(pathways)))
    if synthesis is None:
        synthesis = build_synthesis(head, len(pathways), seed, profile)
    return BdnModel(variant, head, get_profile(profile), list(pathways), synthesis,
                    tuple(style_indices), frozen_pathways)


def build_bdn(variant="bdn", n_pathways=N_STYLES, head=None, profile="desk", seed=None) -> BdnModel:
    """Freshly initialized model with ``n_pathways`` untrained pathways."""
    rng = np.random.default_rng(seed)
    seeds = rng.integers(2**63, size=n_pathways + 1)
    pathways = [build_pathway(int(s), profile) for s in seeds[:-1]]
    return assemble(variant, pathways, head, profile, int(seeds[-1]))


def shape_report(net: Sequential, in_shape) -> list[tuple[str, tuple]]:
    """Per-layer output shapes for an (n, c, h, w) input (forward on zeros)."""
    x = np.zeros(in_shape)
    report = []
    for name, m in net.layers:
        x = m.forward(x)
        report.append((name, x.shape))
    return report
