"""BIFRNet: dual-pathway occlusion-robust classifier with feature completion.

All forward functions work on batches (N×C×H×W). Shapes below are for the
default config: input 3×64×64, features 64×4×4, attention 1×4×4.

Wiring::

    x_occ ─ VVP ─┬──────────── F_c ──┬─────────────── completion ── F_r ── classifier ── p
                 └─ DVP ── P ── F_v = F_c ⊙ P ─┤            ▲
    encoder(F̄_c at train / F_v at test) ── F_k ───────────┤
    knowledge matrix K ──────────────────────────────────────┘
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator

import numpy as np

from .numerics import (
    Tensor,
    btf,
    concat_channels,
    conv2d,
    dense,
    get_default_dtype,
    layer_norm,
    matmul,
    maxpool2d,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    split_channels,
    tanh,
    uniform_init,
)

VARIANTS = ("full", "no-knowledge", "no-completion")


@dataclass
class ModelConfig:
    in_channels: int = 3
    image_size: int = 64
    vvp_channels: tuple[int, ...] = (16, 32, 64, 64)
    dvp_channels: int = 32
    n_class: int = 6
    steps: int = 7
    code_channels: int = 1
    encoder_channels: int = 32
    hidden_units: int = 128
    variant: str = "full"

    def __post_init__(self):
        self.vvp_channels = tuple(self.vvp_channels)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.image_size % 2 ** len(self.vvp_channels):
            raise ValueError("image size must be divisible by 2**stages")

    @property
    def feature_channels(self) -> int:
        return self.vvp_channels[-1]

    @property
    def feature_size(self) -> int:
        return self.image_size // 2 ** len(self.vvp_channels)

    @property
    def state_channels(self) -> int:
        return self.feature_channels + self.code_channels + self.n_class

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class VvpFeatures:
    stage_inputs: list[Tensor]  # input of each stage: x, then each pooled output but the last
    F_c: Tensor


@dataclass
class AttentionMap:
    logits: Tensor
    P: Tensor


@dataclass
class ForwardResult:
    p: Tensor
    P_logits: Tensor
    P: Tensor
    F_c: Tensor
    F_v: Tensor
    F_r: Tensor
    F_k: Tensor | None
    K: Tensor | None
    extras: dict = field(default_factory=dict)


# --------------------------------------------------------------- builders


def _conv_params(rng, params: dict, name: str, c_out: int, c_in: int, k: int = 3) -> None:
    params[f"{name}.w"] = uniform_init(rng, (c_out, c_in, k, k), c_in * k * k)
    params[f"{name}.b"] = Tensor(np.zeros(c_out, dtype=get_default_dtype()), requires_grad=True)


def _dense_params(rng, params: dict, name: str, n_out: int, n_in: int) -> None:
    params[f"{name}.w"] = uniform_init(rng, (n_out, n_in), n_in)
    params[f"{name}.b"] = Tensor(np.zeros(n_out, dtype=get_default_dtype()), requires_grad=True)


def build_vvp(rng, params: dict, cfg: ModelConfig) -> None:
    c_prev = cfg.in_channels
    for s, c in enumerate(cfg.vvp_channels, start=1):
        _conv_params(rng, params, f"vvp.s{s}.conv1", c, c_prev)
        _conv_params(rng, params, f"vvp.s{s}.conv2", c, c)
        c_prev = c


def build_head(rng, params: dict, cfg: ModelConfig) -> None:
    flat = cfg.feature_channels * cfg.feature_size**2
    _dense_params(rng, params, "head.fc1", cfg.hidden_units, flat)
    _dense_params(rng, params, "head.fc2", cfg.n_class, cfg.hidden_units)


# ------------------------------------------------------------ sub-networks


def conv_same(x: Tensor, params: dict, name: str, dilation: int = 1) -> Tensor:
    w = params[f"{name}.w"]
    k = w.shape[-1]
    b = params.get(f"{name}.b")
    if b is None:
        b = Tensor(np.zeros(w.shape[0], dtype=w.dtype))
    return conv2d(x, w, b, padding=dilation * (k - 1) // 2, dilation=dilation)


def vvp_forward(params: dict, x: Tensor, cfg: ModelConfig) -> VvpFeatures:
    """Four stages of conv-relu-conv-relu-maxpool."""
    if x.shape[-3:] != (cfg.in_channels, cfg.image_size, cfg.image_size):
        raise ValueError(f"expected input {cfg.in_channels}×{cfg.image_size}×{cfg.image_size}, got {x.shape}")
    inputs = []
    h = x
    for s in range(1, len(cfg.vvp_channels) + 1):
        inputs.append(h)
        h = relu(conv_same(h, params, f"vvp.s{s}.conv1"))
        h = relu(conv_same(h, params, f"vvp.s{s}.conv2"))
        h = maxpool2d(h, 2)
    return VvpFeatures(stage_inputs=inputs, F_c=h)


def head_forward(params: dict, F: Tensor) -> Tensor:
    """Flatten, two dense layers, softmax over classes."""
    flat = reshape(F, (F.shape[0], -1))
    h = relu(dense(flat, params["head.fc1.w"], params["head.fc1.b"]))
    return softmax(dense(h, params["head.fc2.w"], params["head.fc2.b"]), axis=-1)


class Teacher:
    """Frozen VVP + classifier trained on clean images; supplies F̄_c."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.config = cfg
        rng = np.random.default_rng([seed, 0x7EAC])
        self.params: dict[str, Tensor] = {}
        build_vvp(rng, self.params, cfg)
        build_head(rng, self.params, cfg)

    def features(self, x: Tensor) -> Tensor:
        return vvp_forward(self.params, x, self.config).F_c

    def predict(self, x: Tensor) -> Tensor:
        return head_forward(self.params, self.features(x))

    def freeze(self) -> "Teacher":
        for p in self.params.values():
            p.requires_grad = False
            p.grad = None
        return self

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        save_params(path, self.params, {"kind": "teacher", "config": asdict(self.config), **(meta or {})})

    @classmethod
    def load(cls, path: str | Path) -> "Teacher":
        params, meta = load_params(path)
        t = cls.__new__(cls)
        t.config = ModelConfig.from_dict(meta["config"])
        t.params = params
        return t.freeze()


class BIFRNet:
    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0):
        self.config = cfg = cfg or ModelConfig()
        rng = np.random.default_rng([seed, 0xB1F])
        self.params: dict[str, Tensor] = {}
        build_vvp(rng, self.params, cfg)
        self._build_dvp(rng)
        if cfg.variant != "no-knowledge":
            _conv_params(rng, self.params, "encoder.conv1", cfg.encoder_channels, cfg.feature_channels)
            _conv_params(rng, self.params, "encoder.conv2", cfg.code_channels, cfg.encoder_channels)
            # "random number matrix": logits drawn from U[0, 1)
            z = rng.uniform(0.0, 1.0, size=(cfg.n_class, cfg.feature_size, cfg.feature_size))
            self.params["knowledge.Z"] = Tensor(z.astype(get_default_dtype()), requires_grad=True)
        if cfg.variant != "no-completion":
            ch = cfg.state_channels
            _conv_params(rng, self.params, "completion.gates", 4 * ch, cfg.feature_channels + ch)
        _conv_params(rng, self.params, "completion.out", cfg.feature_channels, cfg.feature_channels, k=1)
        build_head(rng, self.params, cfg)

    def _build_dvp(self, rng) -> None:
        cfg = self.config
        mid = cfg.dvp_channels
        stage_in = (cfg.in_channels,) + cfg.vvp_channels[:-1]
        for b, c_vvp in enumerate(stage_in, start=1):
            c_in = c_vvp + (mid if b > 1 else 0)
            _conv_params(rng, self.params, f"dvp.b{b}.dil", mid, c_in)
            _conv_params(rng, self.params, f"dvp.b{b}.conv", mid, mid)
        _conv_params(rng, self.params, "dvp.head.conv1", mid, mid)
        _conv_params(rng, self.params, "dvp.head.conv2", 1, mid)
        # layer norm over the single output plane cancels any bias here
        del self.params["dvp.head.conv2.b"]
        shape = (1, cfg.feature_size, cfg.feature_size)
        dt = get_default_dtype()
        self.params["dvp.head.ln.gain"] = Tensor(np.ones(shape, dtype=dt), requires_grad=True)
        self.params["dvp.head.ln.shift"] = Tensor(np.zeros(shape, dtype=dt), requires_grad=True)

    # ------------------------------------------------------------ pieces

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    def vvp_forward(self, x: Tensor) -> VvpFeatures:
        return vvp_forward(self.params, x, self.config)

    def dvp_forward(self, f: VvpFeatures) -> AttentionMap:
        """Attention logits and P = sigmoid(logits), 1×H_v×W_v per sample."""
        h = None
        for b, tap in enumerate(f.stage_inputs, start=1):
            z = tap if h is None else concat_channels([h, tap])
            if z.shape[-2:] != tap.shape[-2:]:
                raise AssertionError("DVP and VVP resolutions diverged")
            z = relu(conv_same(z, self.params, f"dvp.b{b}.dil", dilation=2))
            z = maxpool2d(z, 2)
            h = relu(conv_same(z, self.params, f"dvp.b{b}.conv"))
        h = relu(conv_same(h, self.params, "dvp.head.conv1"))
        h = conv_same(h, self.params, "dvp.head.conv2")
        logits = layer_norm(h, self.params["dvp.head.ln.gain"], self.params["dvp.head.ln.shift"])
        return AttentionMap(logits=logits, P=sigmoid(logits))

    @staticmethod
    def mask_features(F_c: Tensor, P: Tensor) -> Tensor:
        """F_v[i] = F_c[i] ⊙ P for every channel i."""
        if P.shape[-3] != 1 or P.shape[-2:] != F_c.shape[-2:]:
            raise ValueError(f"attention {P.shape} does not match features {F_c.shape}")
        return mul(F_c, P)

    def encode_knowledge(self, F: Tensor) -> Tensor:
        h = relu(conv_same(F, self.params, "encoder.conv1"))
        return relu(conv_same(h, self.params, "encoder.conv2"))

    def knowledge(self, noise: np.ndarray | None = None) -> Tensor:
        """Normalised knowledge matrix: spatial softmax of each class slice."""
        Z = self.params["knowledge.Z"]
        n, hv, wv = Z.shape
        flat = reshape(Z, (n, hv * wv))
        if noise is not None:
            flat = flat + noise.reshape(n, hv * wv).astype(Z.dtype)
        return reshape(softmax(flat, axis=-1), (n, hv, wv))

    def convlstm_step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        gates = conv_same(concat_channels([x, h]), self.params, "completion.gates")
        ch = self.config.state_channels
        gi, gf, go, gg = split_channels(gates, [ch] * 4)
        c_next = sigmoid(gf) * c + sigmoid(gi) * tanh(gg)
        h_next = sigmoid(go) * tanh(c_next)
        return h_next, c_next

    def initial_state(self, F_c: Tensor, F_k: Tensor | None, K: Tensor | None) -> Tensor:
        cfg = self.config
        n = F_c.shape[0]
        hv = cfg.feature_size
        dt = F_c.dtype
        if F_k is None:
            F_k = Tensor(np.zeros((n, cfg.code_channels, hv, hv), dtype=dt))
        if K is None:
            Kb = Tensor(np.zeros((n, cfg.n_class, hv, hv), dtype=dt))
        else:
            Kb = mul(K, Tensor(np.ones((n, 1, 1, 1), dtype=dt)))
        return concat_channels([F_c, F_k, Kb])

    def completion_forward(self, F_v: Tensor, F_k: Tensor | None, K: Tensor | None, F_c: Tensor, steps: int | None = None) -> Tensor:
        """Recurrent restoration; F_r = conv1×1 of the F_c track of the final hidden state."""
        steps = self.config.steps if steps is None else steps
        h = self.initial_state(F_c, F_k, K)
        c = Tensor(np.zeros(h.shape, dtype=h.dtype))
        for _ in range(steps):
            h, c = self.convlstm_step(F_v, h, c)
        track = split_channels(h, [self.config.feature_channels, self.config.state_channels - self.config.feature_channels])[0]
        return conv_same(track, self.params, "completion.out")

    def classify(self, F: Tensor) -> Tensor:
        return head_forward(self.params, F)

    # ------------------------------------------------------------ wiring

    def _restore(self, F_c, F_v, F_k, K, steps=None, cutoff=False):
        if cutoff:
            return F_v
        if self.config.variant == "no-completion":
            return conv_same(F_v, self.params, "completion.out")
        return self.completion_forward(F_v, F_k, K, F_c, steps)

    def forward_train(
        self,
        x_occ: Tensor,
        x_clean: Tensor | None = None,
        teacher: Teacher | None = None,
        clean_features: Tensor | None = None,
        force_P: float | None = None,
    ) -> ForwardResult:
        """Training wiring: the encoder sees teacher features of the clean image."""
        if clean_features is None:
            if x_clean is None or teacher is None:
                raise ValueError("forward_train needs the paired clean image and the teacher")
            if x_clean.shape != x_occ.shape:
                raise ValueError(f"unpaired input: {x_occ.shape} vs {x_clean.shape}")
            clean_features = teacher.features(x_clean)
        feats = self.vvp_forward(x_occ)
        att = self.dvp_forward(feats)
        P = att.P if force_P is None else Tensor(np.full(att.P.shape, force_P, dtype=att.P.dtype))
        F_v = self.mask_features(feats.F_c, P)
        F_k = K = None
        if self.config.variant != "no-knowledge":
            F_k = self.encode_knowledge(clean_features)
            K = self.knowledge()
        F_r = self._restore(feats.F_c, F_v, F_k, K)
        return ForwardResult(self.classify(F_r), att.logits, P, feats.F_c, F_v, F_r, F_k, K, {"F_bar": clean_features})

    def forward_infer(
        self,
        x_occ: Tensor,
        knowledge_noise: np.ndarray | None = None,
        cutoff: bool = False,
        steps: int | None = None,
    ) -> ForwardResult:
        """Test wiring: the encoder sees the visible features; K is frozen."""
        feats = self.vvp_forward(x_occ)
        att = self.dvp_forward(feats)
        F_v = self.mask_features(feats.F_c, att.P)
        F_k = K = None
        if self.config.variant != "no-knowledge":
            F_k = self.encode_knowledge(F_v)
            K = self.knowledge(knowledge_noise)
        F_r = self._restore(feats.F_c, F_v, F_k, K, steps, cutoff)
        return ForwardResult(self.classify(F_r), att.logits, att.P, feats.F_c, F_v, F_r, F_k, K)

    def init_from_teacher(self, teacher: Teacher) -> None:
        """Start the VVP and classifier from the clean-pretrained teacher."""
        for name, p in teacher.params.items():
            if name in self.params and self.params[name].shape == p.shape:
                self.params[name].data = p.data.astype(self.params[name].dtype, copy=True)

    def copy(self) -> "BIFRNet":
        return copy.deepcopy(self)

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        save_params(path, self.params, {"kind": "bifrnet", "config": asdict(self.config), **(meta or {})})

    @classmethod
    def load(cls, path: str | Path) -> "BIFRNet":
        params, meta = load_params(path)
        m = cls.__new__(cls)
        m.config = ModelConfig.from_dict(meta["config"])
        m.params = params
        m.meta = meta
        return m


# ----------------------------------------------------------- knowledge


def knowledge_batch_update(codes: Tensor, labels: np.ndarray, K: Tensor) -> tuple[Tensor, Tensor]:
    """Batch estimate of the class-knowledge distribution and its KL loss.

    ``codes`` is B×1×H_v×W_v. Each code lands in its label's slot; the sum
    over the batch divided by B gives the raw estimate. Classes missing from
    the batch copy their slice from ``K``; present slices are softmaxed over
    their cells. Returns ``(zeta, KL(zeta || K))``.
    """
    from .training import loss_knowledge

    labels = np.asarray(labels, dtype=np.int64)
    n_class, hv, wv = K.shape
    b = codes.shape[0]
    if codes.shape[1] != 1:
        raise ValueError("knowledge codes must have a single channel")
    if labels.shape != (b,) or labels.min() < 0 or labels.max() >= n_class:
        raise ValueError(f"labels must be {b} ids in [0, {n_class})")
    dt = codes.dtype
    onehot = np.zeros((n_class, b), dtype=dt)
    onehot[labels, np.arange(b)] = 1.0
    summed = matmul(Tensor(onehot), reshape(codes, (b, hv * wv)))
    raw = summed * (1.0 / b)
    present = np.zeros((n_class, 1), dtype=dt)
    present[np.unique(labels)] = 1.0
    K_flat = reshape(K, (n_class, hv * wv))
    zeta = softmax(raw, axis=-1) * Tensor(present) + K_flat * Tensor(1.0 - present)
    zeta = reshape(zeta, (n_class, hv, wv))
    return zeta, loss_knowledge(zeta, K)


# ------------------------------------------------------------ checkpoints


def save_params(path: str | Path, params: dict[str, Tensor], meta: dict) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, p in params.items():
        fname = f"{name}.btf"
        btf.save(root / fname, p.data)
        files[name] = fname
    meta = dict(meta, parameters=files)
    (root / "model.json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def load_params(path: str | Path) -> tuple[dict[str, Tensor], dict]:
    root = Path(path)
    meta = json.loads((root / "model.json").read_text())
    params = {name: Tensor(btf.load(root / f), requires_grad=True) for name, f in meta["parameters"].items()}
    return params, meta


def param_count(params: dict[str, Tensor]) -> int:
    return int(sum(math.prod(p.shape) for p in params.values()))
