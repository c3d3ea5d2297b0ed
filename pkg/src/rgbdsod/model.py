"""Network assembly and ablation variants."""

from __future__ import annotations

import logging
from typing import Optional

import torch
import torch.nn as nn

from .backbone import SwinEncoder
from .cmi import CrossModalityInteraction, JointStreamInteraction
from .config import RunConfig, derive_stage_geometry, validate_config
from .decoder import SaliencyDecoder
from .fusion import AttentiveEnhancement, ModalityGate, SkipConv, early_fuse, gma_fuse

log = logging.getLogger(__name__)

# ablation rows -> config overrides
ABLATION_PRESETS: dict[str, dict] = {
    "full": {},
    "no_edge": {"variant": "no_edge"},
    "rgb_only": {"variant": "rgb_only", "cmi_stages": []},
    "depth_only": {"variant": "depth_only", "cmi_stages": []},
    "no_fdec": {"variant": "no_fdec"},
    "no_dsd": {"variant": "no_dsd"},
    "cmi_v2": {"variant": "cmi_v2"},
    "cmi_a": {"cmi_stages": [5]},
    "cmi_b": {"cmi_stages": [3, 4, 5]},
    "cmi_c": {"cmi_stages": [2, 3, 4, 5]},
}


class RGBDSaliencyNet(nn.Module):
    """Dual windowed-attention encoders, per-stage fusion, dense decoder.

    ``forward`` returns a dict with ``saliency`` and ``edge`` (``None`` for the
    no_edge variant); with ``return_features`` it also carries both encoder
    pyramids, the five cross-modal maps, the skip features and the decoding
    history.
    """

    def __init__(self, cfg: RunConfig):
        super().__init__()
        self.cfg = cfg
        geo = derive_stage_geometry(cfg)
        self.geometry = geo
        ch = geo.channels

        self.rgb_encoder = SwinEncoder(cfg) if cfg.uses_rgb else None
        self.depth_encoder = SwinEncoder(cfg) if cfg.uses_depth else None
        self.afe_rgb = nn.ModuleList(AttentiveEnhancement(c) for c in ch) if cfg.uses_rgb else None
        self.afe_depth = (nn.ModuleList(AttentiveEnhancement(c) for c in ch)
                          if cfg.uses_depth else None)

        self.cmi_stages = cfg.effective_cmi_stages
        block = JointStreamInteraction if cfg.variant == "cmi_v2" else CrossModalityInteraction
        self.interaction = nn.ModuleDict({
            str(s): block(ch[s - 1], cfg.num_heads[s - 2], geo.resolutions[s - 1],
                          cfg.cmi_blocks, cfg.cmi_dropout, cfg.mlp_ratio)
            for s in self.cmi_stages})
        self.gates = nn.ModuleDict({str(s): ModalityGate(ch[s - 1], cfg.gma_dropout)
                                    for s in self.cmi_stages})

        self.skip = SkipConv((ch[0], ch[1], ch[2]), cfg.decoder_width)
        self.decoder = SaliencyDecoder(ch, cfg.decoder_width, cfg.patch_size, cfg.variant)

    @property
    def single_modality(self) -> Optional[str]:
        if self.rgb_encoder is None:
            return "depth"
        if self.depth_encoder is None:
            return "rgb"
        return None

    def encode(self, rgb: Optional[torch.Tensor], depth: Optional[torch.Tensor]) -> dict:
        single = self.single_modality
        if single is not None:
            enc, afe, img = ((self.rgb_encoder, self.afe_rgb, rgb) if single == "rgb"
                             else (self.depth_encoder, self.afe_depth, depth))
            if img is None:
                raise ValueError(f"{single} input is required by this model")
            pyr = enc(img)
            return {
                "rgb_pyramid": pyr if single == "rgb" else None,
                "depth_pyramid": pyr if single == "depth" else None,
                "f_cm": [a(f) for a, f in zip(afe, pyr)],
                "f_skip": self.skip(*pyr[:3]),
            }

        if rgb is None or depth is None:
            raise ValueError("both RGB and depth inputs are required by this model")
        r = self.rgb_encoder.embed(rgb)
        d = self.depth_encoder.embed(depth)
        pyr_r, pyr_d, f_cm, gates = [], [], [], {}
        for i in range(1, 6):
            if i > 1:
                r = self.rgb_encoder.stage(i, r)
                d = self.depth_encoder.stage(i, d)
            pyr_r.append(r)
            pyr_d.append(d)
            a_r, a_d = self.afe_rgb[i - 1](r), self.afe_depth[i - 1](d)
            if i in self.cmi_stages:
                o_r, o_d = self.interaction[str(i)](a_r, a_d)
                g = self.gates[str(i)](o_r, o_d)
                gates[i] = g
                f_cm.append(gma_fuse(o_r, o_d, g))
                r, d = o_r, o_d
            else:
                f_cm.append(early_fuse(a_r, a_d))
        return {"rgb_pyramid": pyr_r, "depth_pyramid": pyr_d, "f_cm": f_cm,
                "f_skip": self.skip(*pyr_r[:3]), "gates": gates}

    def forward(self, rgb: Optional[torch.Tensor], depth: Optional[torch.Tensor] = None,
                return_features: bool = False) -> dict:
        feats = self.encode(rgb, depth)
        out = self.decoder(feats["f_cm"], feats["f_skip"])
        if return_features:
            out.update(feats)
        else:
            out.pop("f_dec")
        return out


def build_variant(cfg: RunConfig) -> RGBDSaliencyNet:
    """Validate ``cfg`` and construct its model with seeded initialization."""
    validate_config(cfg)
    if cfg.variant in ("rgb_only", "depth_only") and cfg.cmi_stages:
        log.warning("variant %s has a single encoder; ignoring cmi_stages %s",
                    cfg.variant, list(cfg.cmi_stages))
    torch.manual_seed(cfg.seed)
    return RGBDSaliencyNet(cfg)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
