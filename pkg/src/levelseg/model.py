"""The segmentation network: plan-built encoder-decoder with skip
connections, an optional frozen plug-in feature encoder fused at the
bottleneck, and two output heads (pixel-class logits and a level-set
regression map).

Weight initialization is derived per-parameter from (run seed, parameter
name), so two builds with the same seed are bitwise identical and the
presence or absence of one branch never shifts another branch's init.

The frozen encoder is a small windowed-attention patch-embedding
transformer with seed-fixed random weights. It stands in for a pretrained
foundation-model image encoder, which we do not ship; real weights can be
plugged in through a little-endian shape-tagged tensor file (see
``write_frozen_weights`` / ``load_frozen_weights``).
"""

import hashlib
import math
import struct
from dataclasses import dataclass, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .autoconfig import PlanConfig
from .errors import CheckpointError, PlanInvalid, ShapeMismatch, WeightsLoadError

FROZEN_NATIVE_INPUT = 1024  # the frozen encoder consumes 1024x1024x3
FROZEN_TOKEN_GRID = 64      # and emits a 64x64 embedding grid
WEIGHTS_MAGIC = b"LSFE"


@dataclass
class FrozenEncoderSpec:
    """Configuration of the frozen plug-in encoder branch.

    kind "surrogate_vit" builds the seed-initialized surrogate;
    "external_weights" builds the same architecture and fills it from
    ``weights_path``.
    """

    kind: str = "surrogate_vit"
    embed_channels: int = 256
    seed: int = 0
    weights_path: str = None
    width: int = 64       # internal token width (kept small for CPU use)
    depth: int = 2
    window: int = 8
    heads: int = 2
    mlp_ratio: float = 2.0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _param_seed(seed, name):
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _init_parameters(module, seed):
    """He fan-in init, seeded per parameter name; norms get identity init."""
    for name, sub in module.named_modules():
        if isinstance(sub, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            w = sub.weight
            if isinstance(sub, nn.Linear):
                fan_in = w.shape[1]
            elif isinstance(sub, nn.ConvTranspose2d):
                fan_in = w.shape[0] * w.shape[2] * w.shape[3]
            else:
                fan_in = (w.shape[1] // sub.groups if hasattr(sub, "groups") else w.shape[1])
                fan_in *= w.shape[2] * w.shape[3]
            g = torch.Generator().manual_seed(_param_seed(seed, name + ".weight"))
            with torch.no_grad():
                w.copy_(torch.randn(w.shape, generator=g) * math.sqrt(2.0 / fan_in))
                if sub.bias is not None:
                    sub.bias.zero_()
        elif isinstance(sub, (nn.InstanceNorm2d, nn.LayerNorm)):
            with torch.no_grad():
                if sub.weight is not None:
                    sub.weight.fill_(1.0)
                if sub.bias is not None:
                    sub.bias.zero_()


class WindowBlock(nn.Module):
    """Pre-norm transformer block with non-overlapping window attention."""

    def __init__(self, dim, window, heads, mlp_ratio):
        super().__init__()
        self.window = window
        self.heads = heads
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x):
        # x: (B, G, G, D) token grid; G divisible by the window size
        b, g, _, d = x.shape
        w, h = self.window, self.heads
        shortcut = x
        x = self.norm1(x)
        x = x.view(b, g // w, w, g // w, w, d).permute(0, 1, 3, 2, 4, 5)
        x = x.reshape(-1, w * w, d)
        qkv = self.qkv(x).view(-1, w * w, 3, h, d // h).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        att = (q @ k.transpose(-2, -1)) * (d // h) ** -0.5
        att = att.softmax(dim=-1)
        x = (att @ v).transpose(1, 2).reshape(-1, w * w, d)
        x = self.proj(x)
        x = x.view(b, g // w, g // w, w, w, d).permute(0, 1, 3, 2, 4, 5).reshape(b, g, g, d)
        x = shortcut + x
        return x + self.mlp(self.norm2(x))


class SurrogateEncoder(nn.Module):
    """Patch-embedding transformer: 1024x1024x3 in, 64x64xC_s out."""

    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        patch = FROZEN_NATIVE_INPUT // FROZEN_TOKEN_GRID
        self.patch_embed = nn.Conv2d(3, spec.width, patch, stride=patch)
        self.blocks = nn.ModuleList(
            WindowBlock(spec.width, spec.window, spec.heads, spec.mlp_ratio)
            for _ in range(spec.depth)
        )
        self.norm = nn.LayerNorm(spec.width)
        self.out_proj = nn.Linear(spec.width, spec.embed_channels)

    def forward(self, x):
        x = self.patch_embed(x)          # (B, width, 64, 64)
        x = x.permute(0, 2, 3, 1)
        for blk in self.blocks:
            x = blk(x)
        x = self.out_proj(self.norm(x))  # (B, 64, 64, C_s)
        return x.permute(0, 3, 1, 2)


def build_frozen_encoder(spec):
    """Construct the frozen branch from its spec; parameters are immutable."""
    enc = SurrogateEncoder(spec)
    if spec.kind == "surrogate_vit":
        _init_parameters(enc, spec.seed)
    elif spec.kind == "external_weights":
        state = load_frozen_weights(spec.weights_path)
        try:
            enc.load_state_dict({k: torch.from_numpy(v) for k, v in state.items()})
        except (RuntimeError, ValueError) as e:
            raise WeightsLoadError(f"weights do not match encoder architecture: {e}")
    else:
        raise ValueError(f"unknown frozen encoder kind {spec.kind!r}")
    enc.eval()
    for p in enc.parameters():
        p.requires_grad_(False)
    return enc


def encode_frozen(encoder, x):
    """Run the frozen branch on a preprocessed batch.

    Single-channel input is replicated to 3 channels, resized bilinearly to
    the encoder's native 1024x1024, encoded, and returned as a
    (B, C_s, 64, 64) embedding. No gradients touch the encoder.
    """
    with torch.no_grad():
        if x.shape[1] == 1:
            x3 = x.repeat(1, 3, 1, 1)
        elif x.shape[1] == 3:
            x3 = x
        else:
            x3 = x.mean(dim=1, keepdim=True).repeat(1, 3, 1, 1)
        if x3.shape[-2:] != (FROZEN_NATIVE_INPUT, FROZEN_NATIVE_INPUT):
            x3 = F.interpolate(x3, (FROZEN_NATIVE_INPUT, FROZEN_NATIVE_INPUT),
                               mode="bilinear", align_corners=False)
        return encoder(x3)


def fuse(embedding, bottleneck):
    """Resize the embedding to the bottleneck's spatial dims and concatenate."""
    if embedding.shape[-2:] != bottleneck.shape[-2:]:
        embedding = F.interpolate(embedding, bottleneck.shape[-2:],
                                  mode="bilinear", align_corners=False)
    return torch.cat([bottleneck, embedding], dim=1)


class ConvStage(nn.Module):
    def __init__(self, cin, cout, kernel, stride=1):
        super().__init__()
        pad = kernel // 2
        self.block = nn.Sequential(
            nn.Conv2d(cin, cout, kernel, stride=stride, padding=pad),
            nn.InstanceNorm2d(cout, affine=True),
            nn.LeakyReLU(0.01, inplace=True),
            nn.Conv2d(cout, cout, kernel, padding=pad),
            nn.InstanceNorm2d(cout, affine=True),
            nn.LeakyReLU(0.01, inplace=True),
        )

    def forward(self, x):
        return self.block(x)


class DualEncoderUNet(nn.Module):
    """Encoder-decoder segmentation net with optional frozen-branch fusion.

    Skip connection i joins encoder stage i to the decoder stage producing
    the same spatial resolution. When the frozen branch is present its
    embedding is concatenated onto the bottleneck features before the
    deepest decoder stage.
    """

    def __init__(self, plan, in_channels, classes, frozen_spec=None,
                 with_reg_head=True, seed=0):
        super().__init__()
        if plan.num_stages < 2 or len(plan.features_per_stage) != plan.num_stages + 1:
            raise PlanInvalid("features_per_stage must have num_stages + 1 entries")
        self.plan = plan
        self.in_channels = in_channels
        self.classes = classes
        self.seed = seed
        feats = plan.features_per_stage
        t = plan.num_stages
        k = plan.kernel_size

        stages = []
        cin = in_channels
        for i, f in enumerate(feats):
            stages.append(ConvStage(cin, f, k, stride=1 if i == 0 else 2))
            cin = f
        self.encoder = nn.ModuleList(stages)

        fuse_ch = frozen_spec.embed_channels if frozen_spec is not None else 0
        ups, decs = [], []
        for i in range(t):
            src = feats[t - i] + (fuse_ch if i == 0 else 0)
            dst = feats[t - 1 - i]
            ups.append(nn.ConvTranspose2d(src, dst, 2, stride=2))
            decs.append(ConvStage(dst * 2, dst, k))
        self.upconvs = nn.ModuleList(ups)
        self.dec_stages = nn.ModuleList(decs)

        self.seg_head = nn.Conv2d(feats[0], classes, 1)
        self.reg_head = nn.Conv2d(feats[0], classes, 1) if with_reg_head else None

        _init_parameters(self, seed)
        self.frozen_encoder = build_frozen_encoder(frozen_spec) if frozen_spec else None
        self.frozen_spec = frozen_spec

    @property
    def trainable_param_count(self):
        return sum(p.numel() for p in self.parameters() if p.requires_grad)

    @property
    def frozen_param_count(self):
        return sum(p.numel() for p in self.parameters() if not p.requires_grad)

    def trainable_checksum(self):
        return _checksum(p for n, p in sorted(self.named_parameters()) if p.requires_grad)

    def frozen_checksum(self):
        return _checksum(p for n, p in sorted(self.named_parameters()) if not p.requires_grad)

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ShapeMismatch(f"expected {self.in_channels} input channels, got {x.shape[1]}")
        skips = []
        h = x
        for stage in self.encoder:
            h = stage(h)
            skips.append(h)
        h = skips[-1]
        if self.frozen_encoder is not None:
            h = fuse(encode_frozen(self.frozen_encoder, x), h)
        for i, (up, dec) in enumerate(zip(self.upconvs, self.dec_stages)):
            h = up(h)
            h = dec(torch.cat([h, skips[-2 - i]], dim=1))
        logits = self.seg_head(h)
        out = {
            "seg_probs": torch.softmax(logits, dim=1),
            "seg_logits": logits,
            "levelset_pred": self.reg_head(h) if self.reg_head is not None else None,
        }
        return out


def build_model(plan, in_channels, classes, frozen_spec=None, with_reg_head=True, seed=0):
    return DualEncoderUNet(plan, in_channels, classes, frozen_spec=frozen_spec,
                           with_reg_head=with_reg_head, seed=seed)


def _checksum(tensors):
    h = hashlib.sha256()
    for t in tensors:
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Frozen-weights file format: magic, u32 tensor count; then per tensor a
# u16 name length, UTF-8 name, u8 ndim, ndim * u32 dims, float32 data.
# All integers and floats little-endian.
# ---------------------------------------------------------------------------

def write_frozen_weights(encoder, path):
    state = encoder.state_dict()
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", len(state)))
        for name, tensor in state.items():
            arr = tensor.detach().cpu().numpy().astype("<f4")
            enc_name = name.encode()
            fh.write(struct.pack("<H", len(enc_name)))
            fh.write(enc_name)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def load_frozen_weights(path):
    import numpy as np

    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as e:
        raise WeightsLoadError(str(e))
    if data[:4] != WEIGHTS_MAGIC:
        raise WeightsLoadError("bad magic; not a frozen-weights file")
    try:
        off = 4
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + nlen].decode()
            off += nlen
            (ndim,) = struct.unpack_from("<B", data, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape)
            off += 4 * n
            out[name] = arr.copy()
        if off != len(data):
            raise WeightsLoadError("trailing bytes in weights file")
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise WeightsLoadError(f"corrupt weights file: {e}")
    return out


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model, extra=None):
    payload = {
        "format_version": 1,
        "state_dict": model.state_dict(),
        "model_config": {
            "plan": model.plan.to_dict(),
            "in_channels": model.in_channels,
            "classes": model.classes,
            "frozen_spec": model.frozen_spec.to_dict() if model.frozen_spec else None,
            "with_reg_head": model.reg_head is not None,
            "seed": model.seed,
        },
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path):
    """Rebuild the model from a checkpoint; returns (model, extra dict)."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")
    try:
        cfg = payload["model_config"]
        plan = PlanConfig.from_dict(cfg["plan"])
        spec = FrozenEncoderSpec.from_dict(cfg["frozen_spec"]) if cfg["frozen_spec"] else None
        model = build_model(plan, cfg["in_channels"], cfg["classes"],
                            frozen_spec=spec, with_reg_head=cfg["with_reg_head"],
                            seed=cfg["seed"])
        model.load_state_dict(payload["state_dict"])
    except KeyError as e:
        raise CheckpointError(f"checkpoint missing field {e}")
    model.eval()
    return model, payload.get("extra", {})
