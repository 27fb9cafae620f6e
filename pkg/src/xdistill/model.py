"""Full two-stream model: both encoders, cross-modal layers, loss heads."""

from __future__ import annotations

import numpy as np

from .crossmodal import CrossModalConfig, init_cross_weights
from .encoder import EncoderConfig, count_parameters, init_encoder_weights
from .numerics import Tensor
from .tokenizers import Vocab


class CrossModalModel:
    """Bundles configs, vocabularies, and every trainable tensor.

    Parameter names are namespaced: ``lang.*`` / ``clip.*`` for the two
    encoders, ``cross.*`` for the cross-modal layers, ``head.*`` for the
    adaptation loss heads.
    """

    def __init__(
        self,
        lang_cfg: EncoderConfig,
        clip_cfg: EncoderConfig,
        cross_cfg: CrossModalConfig,
        lang_vocab: Vocab,
        clip_vocab: Vocab,
        seed: int = 0,
    ):
        if lang_cfg.vocab_size != len(lang_vocab):
            raise ValueError(f"language config vocab_size {lang_cfg.vocab_size} != vocab {len(lang_vocab)}")
        if clip_cfg.vocab_size != len(clip_vocab):
            raise ValueError(f"clip config vocab_size {clip_cfg.vocab_size} != vocab {len(clip_vocab)}")
        self.lang_cfg = lang_cfg
        self.clip_cfg = clip_cfg
        self.cross_cfg = cross_cfg
        self.lang_vocab = lang_vocab
        self.clip_vocab = clip_vocab
        self.seed = seed

        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        self.params.update(init_encoder_weights(lang_cfg, rng, prefix="lang."))
        self.params.update(init_encoder_weights(clip_cfg, rng, prefix="clip."))
        self.params.update(init_cross_weights(cross_cfg, rng, prefix="cross."))
        self._init_heads(rng)

    def _init_heads(self, rng: np.random.Generator):
        def w(name, shape):
            self.params[name] = Tensor(rng.normal(0.0, 0.02, size=shape), requires_grad=True, name=name)

        def zeros(name, shape):
            self.params[name] = Tensor(np.zeros(shape), requires_grad=True, name=name)

        w("head.mlm.w", (self.lang_cfg.hidden_dim, self.lang_cfg.vocab_size))
        zeros("head.mlm.b", self.lang_cfg.vocab_size)
        w("head.match.w", (self.lang_cfg.hidden_dim, 2))
        zeros("head.match.b", 2)
        # Untied from the clip input embedding on purpose.
        w("head.cliptc.w", (self.clip_cfg.hidden_dim, self.clip_cfg.vocab_size))
        zeros("head.cliptc.b", self.clip_cfg.vocab_size)

    def subset(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith(prefix)}

    def parameter_count(self, prefix: str = "") -> int:
        return sum(t.size for k, t in self.params.items() if k.startswith(prefix))


def extract_language_encoder(model: CrossModalModel) -> tuple[EncoderConfig, dict[str, Tensor]]:
    """The language-stream weights alone, names stripped of their prefix.

    The tensors are the very objects inside the full model, so the
    extracted encoder's scalar count equals count_parameters(lang config)
    and shares no clip or cross-modal state.
    """
    weights = {k[len("lang.") :]: v for k, v in model.subset("lang.").items()}
    expected = count_parameters(model.lang_cfg)
    actual = sum(t.size for t in weights.values())
    assert actual == expected, f"extracted {actual} scalars, closed form says {expected}"
    return model.lang_cfg, weights
