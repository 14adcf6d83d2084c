"""The toy end-to-end panoramic depth model.

ERP branch: patch embedding -> L pre-LN blocks. CP branch: the RGB cube faces
go through the same patch embedding. Guidance built from both branches
drives per-layer modulation networks at the configured (odd by default)
layers; the remaining layers run as plain blocks. A small upsampling head
turns the final tokens into a positive depth map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, rng_stream
from .config import ModelConfig
from .errors import ConfigError, DimensionError
from .gag import GagParams, GuidanceBundle, guidance
from .geometry import erp_to_cube
from .scadaln import (
    BlockParams,
    ModNetParams,
    ModulationParams,
    gen_modulation,
    grid_to_tokens,
    modulated_block,
    plain_block,
)

DECODER_WIDTHS = (32, 16)
INITIAL_DEPTH = 2.5  # metres, softplus output of the fresh head


def latitude_encoding(rows: int, channels: int) -> np.ndarray:
    """(1, C, rows, 1) fixed sinusoid of token-row latitude.

    It depends on latitude only, so the model stays equivariant to
    longitude rolls by whole patches.
    """
    lat = np.pi / 2 - (np.arange(rows) + 0.5) / rows * np.pi
    k = np.arange(channels) // 2 + 1
    phase = np.where(np.arange(channels) % 2 == 0, 0.0, np.pi / 2)
    enc = 0.5 * np.sin(k[:, None] * lat[None, :] + phase[:, None])
    return enc[None, :, :, None]


@dataclass
class ForwardResult:
    depth: Tensor
    features: list[np.ndarray] = field(default_factory=list)  # per block, (tokens, C)
    bundle: GuidanceBundle | None = None


class DepthModel:
    """Parameters plus forward pass. Parameters live in a name -> Tensor dict."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor] | None = None):
        self.cfg = cfg
        self.params = params if params is not None else self._init_params()
        self._apply_freeze()

    # -- construction -------------------------------------------------------
    def _init_params(self) -> dict[str, Tensor]:
        cfg = self.cfg
        dt = cfg.dtype
        c = cfg.channels
        p = cfg.patch
        rng = rng_stream(cfg.seed, 1)
        params: dict[str, Tensor] = {}

        def new(name, arr):
            params[name] = Tensor(np.asarray(arr, dtype=dt), requires_grad=True, name=name)

        fan = 3 * p * p
        new("patch.weight", rng.normal(0.0, 1.0 / np.sqrt(fan), size=(fan, c)))
        new("patch.bias", np.zeros(c))
        for layer in range(cfg.blocks):
            for name, t in BlockParams.init(c, cfg.heads, rng, dt).named(f"block{layer}").items():
                new(name, t.data)
        if cfg.modulated_layers:
            for name, t in GagParams.zeros(c, dt).named("gag").items():
                new(name, t.data)
            for layer in sorted(cfg.modulated_layers):
                for name, t in ModNetParams.init(c, rng, dt).named(f"modnet{layer}").items():
                    new(name, t.data)
        widths = (c, *DECODER_WIDTHS, 1)
        for i, (cin, cout) in enumerate(zip(widths[:-1], widths[1:])):
            std = 1.0 / np.sqrt(cin * 9)
            new(f"dec.conv{i}.weight", rng.normal(0.0, std, size=(cout, cin, 3, 3)))
            new(f"dec.conv{i}.bias", np.zeros(cout))
        # softplus^-1 of the initial depth so a fresh model predicts a sane scale
        params[f"dec.conv{len(widths) - 2}.bias"].data[:] = np.log(np.expm1(INITIAL_DEPTH))
        return params

    @classmethod
    def from_arrays(cls, cfg: ModelConfig, arrays: dict[str, np.ndarray]) -> "DepthModel":
        template = cls(cfg)
        expected = set(template.params)
        given = {k for k in arrays if not k.startswith("adam.")}
        if given != expected:
            missing = sorted(expected - given)
            extra = sorted(given - expected)
            raise ConfigError("checkpoint", f"parameter set mismatch; missing {missing}, unexpected {extra}")
        for name, t in template.params.items():
            arr = arrays[name]
            if arr.shape != t.shape:
                raise ConfigError("checkpoint", f"{name}: shape {arr.shape} != {t.shape}")
            t.data = np.array(arr, dtype=cfg.dtype)
        return template

    # -- parameter groups ----------------------------------------------------
    @staticmethod
    def is_backbone(name: str) -> bool:
        return name.startswith("patch.") or name.startswith("block")

    def backbone_names(self) -> list[str]:
        return [n for n in self.params if self.is_backbone(n)]

    def trainable(self) -> dict[str, Tensor]:
        return {n: p for n, p in self.params.items() if p.requires_grad}

    def _apply_freeze(self) -> None:
        for name, p in self.params.items():
            p.requires_grad = not (self.cfg.freeze_backbone and self.is_backbone(name))

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.params.items()}

    # -- pieces --------------------------------------------------------------
    def patch_embed(self, x: Tensor) -> Tensor:
        """(n, 3, H, W) -> (n, C, H/p, W/p) with one shared linear map per patch."""
        n, ch, h, w = x.shape
        p = self.cfg.patch
        hp, wp = h // p, w // p
        cols = x.reshape(n, ch, hp, p, wp, p).transpose(0, 2, 4, 1, 3, 5).reshape(n * hp * wp, ch * p * p)
        emb = cols @ self.params["patch.weight"] + self.params["patch.bias"]
        return emb.reshape(n, hp, wp, self.cfg.channels).transpose(0, 3, 1, 2)

    def _block(self, layer: int) -> BlockParams:
        g = lambda k: self.params[f"block{layer}.{k}"]  # noqa: E731
        return BlockParams(g("wqkv"), g("bqkv"), g("wo"), g("bo"), g("w1"), g("b1"), g("w2"), g("b2"),
                           self.cfg.heads)

    def _modnet(self, layer: int) -> ModNetParams:
        g = lambda k: self.params[f"modnet{layer}.{k}"]  # noqa: E731
        return ModNetParams(g("dw_weight"), g("pw_weight"), g("pw_bias"))

    def decode(self, t: Tensor) -> Tensor:
        n_conv = len(DECODER_WIDTHS) + 1

        def conv(x, i):
            return ad.conv2d(ad.pad_erp(x, 1), self.params[f"dec.conv{i}.weight"], self.params[f"dec.conv{i}.bias"])

        x = ad.silu(conv(t, 0))
        x = ad.silu(conv(ad.upsample_nearest(x, 2), 1))
        up = self.cfg.patch // 2
        if up > 1:
            x = ad.upsample_nearest(x, up)
        return ad.softplus(conv(x, n_conv - 1))

    # -- forward ---------------------------------------------------------------
    def forward(self, rgb, capture_features: bool = False, modulation: bool = True) -> ForwardResult:
        """Predict depth for one (1, 3, H, W) panorama.

        ``modulation=False`` feeds all-zero modulation groups to the
        modulated layers, which is what a freshly initialized model
        produces anyway.
        """
        cfg = self.cfg
        x = ad.as_tensor(np.asarray(rgb.data if isinstance(rgb, Tensor) else rgb, dtype=cfg.dtype))
        if x.shape != (1, 3, *cfg.erp):
            raise DimensionError(f"expected rgb of shape {(1, 3, *cfg.erp)}, got {x.shape}")
        f_erp = self.patch_embed(x)
        bundle = None
        if cfg.modulated_layers and modulation:
            faces = erp_to_cube(x, cfg.face_size)
            f_cp = self.patch_embed(faces)
            gag = GagParams(self.params["gag.weight"], self.params["gag.bias"])
            bundle = guidance(f_erp, f_cp, gag)
        h, w = cfg.token_grid
        t = f_erp + latitude_encoding(h, cfg.channels).astype(cfg.dtype)
        features = []
        for layer in range(cfg.blocks):
            bp = self._block(layer)
            if layer in cfg.modulated_layers:
                if bundle is not None:
                    mods = gen_modulation(bundle.f_gag, self._modnet(layer))
                else:
                    mods = ModulationParams.zeros(t.shape, cfg.dtype)
                t = modulated_block(t, mods, bp)
            else:
                t = plain_block(t, bp)
            if capture_features:
                features.append(grid_to_tokens(t).data.copy())
        return ForwardResult(self.decode(t), features, bundle)

    def predict(self, rgb, modulation: bool = True) -> np.ndarray:
        return self.forward(rgb, modulation=modulation).depth.data
