"""The three pose-regression topologies at configurable (toy) scale.

All variants share a VGG-style backbone: five stages of 3x3 convolutions
followed by 2x2 max pooling, then two fully connected layers and a linear
head with no activation.

- plain: backbone on the full image, 7-node head.
- branched: a side branch taps the output of the second pooling stage,
  runs one extra 2x2 max pool and a fully connected layer, and is merged
  by concatenation with the flattened backbone features right before the
  first fully connected layer. This preserves feature-position information
  that later pooling stages discard. 7-node head.
- parallel: two independent streams; the plain backbone reads the full
  image and predicts translation (3 nodes), the branched backbone reads
  the bounded image and predicts the attitude quaternion (4 nodes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn

VARIANTS = ("plain", "branched", "parallel")


@dataclass(frozen=True)
class TopologyConfig:
    variant: str = "plain"
    image_size: int = 64
    in_channels: int = 3
    stage_channels: tuple = (8, 16, 32, 32, 32)
    convs_per_stage: int = 2
    branch_width: int = 64      # 1024 at the full VGG-19 scale
    head_widths: tuple = (64, 64)
    pool_mode: str = "max"      # "max", or "stride2" for stride-2 convolutions
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.pool_mode not in ("max", "stride2"):
            raise ValueError(f"pool_mode must be 'max' or 'stride2', got {self.pool_mode!r}")
        if len(self.stage_channels) < 3:
            raise ValueError("need at least 3 stages so the branch tap point exists")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "image_size": self.image_size,
            "in_channels": self.in_channels,
            "stage_channels": list(self.stage_channels),
            "convs_per_stage": self.convs_per_stage,
            "branch_width": self.branch_width,
            "head_widths": list(self.head_widths),
            "pool_mode": self.pool_mode,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TopologyConfig":
        d = dict(d)
        d["stage_channels"] = tuple(d["stage_channels"])
        d["head_widths"] = tuple(d["head_widths"])
        return cls(**d)


@dataclass
class PoseOutput:
    """Raw network outputs: 3 translation values and 4 unnormalized
    quaternion values per sample (normalization happens in the loss and at
    evaluation time)."""

    translation: np.ndarray     # (N, 3)
    quaternion_raw: np.ndarray  # (N, 4)

    def seven(self) -> np.ndarray:
        return np.concatenate([self.translation, self.quaternion_raw], axis=1)


def _add_backbone(g: nn.Graph, cfg: TopologyConfig, input_name: str, rng) -> tuple[str, str]:
    """Wire the convolutional stages; returns (flat features node, branch tap node)."""
    prev = input_name
    channels = cfg.in_channels
    tap = None
    for s, width in enumerate(cfg.stage_channels, start=1):
        for c in range(1, cfg.convs_per_stage + 1):
            last_conv = c == cfg.convs_per_stage
            stride = 2 if (cfg.pool_mode == "stride2" and last_conv) else 1
            g.add(f"s{s}c{c}", nn.Conv2d(channels, width, 3, stride=stride, padding=1, rng=rng), prev)
            g.add(f"s{s}a{c}", nn.ReLU(), f"s{s}c{c}")
            prev = f"s{s}a{c}"
            channels = width
        if cfg.pool_mode == "max":
            g.add(f"s{s}pool", nn.MaxPool2(), prev)
            prev = f"s{s}pool"
        if s == 2:
            tap = prev
    g.add("flat", nn.Flatten(), prev)
    return "flat", tap


def _feature_size(cfg: TopologyConfig, stages: int | None = None) -> int:
    size = cfg.image_size
    stages = len(cfg.stage_channels) if stages is None else stages
    for _ in range(stages):
        size = (size + 1) // 2
    return size


def _add_head(g: nn.Graph, cfg: TopologyConfig, features: str, in_width: int,
              out_nodes: int, rng) -> None:
    prev, width = features, in_width
    for i, hidden in enumerate(cfg.head_widths, start=1):
        g.add(f"fc{i}", nn.Dense(width, hidden, rng=rng), prev)
        g.add(f"fc{i}a", nn.ReLU(), f"fc{i}")
        prev, width = f"fc{i}a", hidden
    g.add("head", nn.Dense(width, out_nodes, rng=rng), prev)  # linear, no activation
    g.set_outputs("head")


def _rng_for(cfg: TopologyConfig, stream: int):
    return np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(stream,)))


def build_plain(cfg: TopologyConfig, out_nodes: int = 7, input_name: str = "image",
                rng=None) -> nn.Graph:
    """Backbone + two dense layers + linear head on a single image input."""
    rng = rng if rng is not None else _rng_for(cfg, 0)
    g = nn.Graph()
    g.add_input(input_name, (cfg.in_channels, cfg.image_size, cfg.image_size))
    flat, _ = _add_backbone(g, cfg, input_name, rng)
    final = _feature_size(cfg)
    _add_head(g, cfg, flat, cfg.stage_channels[-1] * final * final, out_nodes, rng)
    return g.build()


def build_branched(cfg: TopologyConfig, out_nodes: int = 7, input_name: str = "image",
                   rng=None) -> nn.Graph:
    """Plain backbone plus a branch from the second pooling stage.

    The branch applies one more 2x2 max pool and a fully connected layer,
    then joins the flattened backbone features by concatenation just before
    the first head dense layer (backbone features first).
    """
    rng = rng if rng is not None else _rng_for(cfg, 1)
    g = nn.Graph()
    g.add_input(input_name, (cfg.in_channels, cfg.image_size, cfg.image_size))
    flat, tap = _add_backbone(g, cfg, input_name, rng)
    g.add("branch_pool", nn.MaxPool2(), tap)
    g.add("branch_flat", nn.Flatten(), "branch_pool")
    tap_size = _feature_size(cfg, stages=3)  # two stage pools + the branch pool
    branch_in = cfg.stage_channels[1] * tap_size * tap_size
    g.add("branch_fc", nn.Dense(branch_in, cfg.branch_width, rng=rng), "branch_flat")
    g.add("branch_act", nn.ReLU(), "branch_fc")
    g.add("merge", nn.Concat(), [flat, "branch_act"])
    final = _feature_size(cfg)
    backbone_width = cfg.stage_channels[-1] * final * final
    _add_head(g, cfg, "merge", backbone_width + cfg.branch_width, out_nodes, rng)
    return g.build()


def build_parallel(cfg: TopologyConfig) -> tuple[nn.Graph, nn.Graph]:
    """Two independent streams sharing no parameters.

    Returns (translation graph, attitude graph): the translation stream is a
    plain backbone on the full image with a 3-node head; the attitude stream
    is a branched backbone on the bounded image with a 4-node head.
    """
    translation = build_plain(cfg, out_nodes=3, input_name="image", rng=_rng_for(cfg, 2))
    attitude = build_branched(cfg, out_nodes=4, input_name="bounded", rng=_rng_for(cfg, 3))
    return translation, attitude


class PoseModel:
    """Uniform forward/backward interface over the three variants."""

    def __init__(self, cfg: TopologyConfig):
        self.config = cfg
        if cfg.variant == "plain":
            self.graphs = {"pose": build_plain(cfg)}
        elif cfg.variant == "branched":
            self.graphs = {"pose": build_branched(cfg)}
        else:
            translation, attitude = build_parallel(cfg)
            self.graphs = {"translation": translation, "attitude": attitude}

    @property
    def variant(self) -> str:
        return self.config.variant

    def parameters(self):
        params = []
        for key in sorted(self.graphs):
            params.extend(self.graphs[key].parameters())
        return params

    def forward(self, images: np.ndarray, bounded: np.ndarray):
        """Run the variant on NCHW batches; returns (PoseOutput, head tensors)."""
        if self.variant == "parallel":
            t_out = self.graphs["translation"].forward({"image": images})["head"]
            a_out = self.graphs["attitude"].forward({"bounded": bounded})["head"]
            output = PoseOutput(t_out.data, a_out.data)
            return output, {"translation": t_out, "attitude": a_out}
        head = self.graphs["pose"].forward({"image": images})["head"]
        return PoseOutput(head.data[:, :3], head.data[:, 3:]), {"pose": head}

    def backward(self, head_tensors: dict, grad_translation: np.ndarray,
                 grad_quaternion: np.ndarray) -> None:
        if self.variant == "parallel":
            head_tensors["translation"].backward(grad_translation.astype(
                head_tensors["translation"].dtype))
            head_tensors["attitude"].backward(grad_quaternion.astype(
                head_tensors["attitude"].dtype))
        else:
            grad = np.concatenate([grad_translation, grad_quaternion], axis=1)
            head_tensors["pose"].backward(grad.astype(head_tensors["pose"].dtype))

    def predict(self, images: np.ndarray, bounded: np.ndarray) -> PoseOutput:
        output, _ = self.forward(images, bounded)
        return output

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {}
        for key in sorted(self.graphs):
            for name, value in self.graphs[key].state_dict().items():
                state[f"{key}/{name}"] = value
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for key in sorted(self.graphs):
            prefix = f"{key}/"
            sub = {
                name[len(prefix):]: value
                for name, value in state.items()
                if name.startswith(prefix)
            }
            self.graphs[key].load_state_dict(sub)


def parameter_count(model: PoseModel) -> int:
    return int(sum(p.data.size for p in model.parameters()))


def build_model(cfg: TopologyConfig) -> PoseModel:
    return PoseModel(cfg)
