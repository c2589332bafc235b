import numpy as np
import pytest
import torch
import torch.nn.functional as F

from catscene.model import (
    AdapterConfig,
    Backbone,
    EncoderConfig,
    ModelConfig,
    build_model,
    normalize_fusion,
    parameter_count,
    parameter_groups,
    single_backbone_parameter_count,
)
from catscene.model.classifier import FUSION_KINDS


def cfg(fusion="cat", **kw):
    enc = EncoderConfig(input_resize=8, patch_size=4, embed_dim=8, depth=2, num_heads=2, window_size=2)
    return ModelConfig(num_classes=4, encoder=enc, fusion=fusion, **kw)


def scenes(b=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    return tuple(torch.rand(b, 3, 8, 8, generator=g) for _ in range(3))


class TestConfig:
    def test_round_trip(self):
        m = cfg("feature", use_acf=False, use_mls=False)
        assert ModelConfig.from_dict(m.to_dict()) == m
        no_adapter = cfg(adapter=None)
        assert ModelConfig.from_dict(no_adapter.to_dict()).adapter is None

    def test_mls_requires_acf(self):
        with pytest.raises(ValueError):
            cfg(use_acf=False, use_mls=True)

    def test_aliases(self):
        assert normalize_fusion("center-only") == "center"
        assert normalize_fusion("decision_level") == "decision"
        with pytest.raises(ValueError):
            normalize_fusion("late")


class TestForward:
    @pytest.mark.parametrize("fusion", FUSION_KINDS)
    def test_probs_are_distributions(self, fusion):
        kw = {"use_acf": True, "use_mls": True} if fusion == "cat" else {"use_acf": False, "use_mls": False}
        model = build_model(cfg(fusion, **kw), seed=0)
        c, s, g = scenes()
        with torch.no_grad():
            out = model(c, s, g)
        assert out.probs.shape == (2, 4)
        assert torch.allclose(out.probs.sum(-1), torch.ones(2), atol=1e-6)
        assert (out.probs >= 0).all()

    def test_center_only_ignores_context_args(self):
        model = build_model(cfg("center", use_acf=False, use_mls=False), seed=0)
        c, s, g = scenes()
        with torch.no_grad():
            assert torch.equal(model(c).probs, model(c, s, g).probs)

    def test_context_required_for_fused_kinds(self):
        for fusion in ("input", "feature", "decision"):
            model = build_model(cfg(fusion, use_acf=False, use_mls=False), seed=0)
            with pytest.raises(ValueError):
                model(scenes()[0])

    def test_decision_is_mean_of_branch_distributions(self):
        model = build_model(cfg("decision", use_acf=False, use_mls=False), seed=0)
        c, s, g = scenes()
        with torch.no_grad():
            out = model(c, s, g)
            expect = sum(
                F.softmax(model.heads[b](model.encode(x, b).pooled), dim=-1)
                for b, x in (("center", c), ("surrounding", s), ("global", g))
            ) / 3.0
        assert torch.allclose(out.probs, expect, atol=1e-6)

    def test_input_level_weight_surgery(self):
        """Zeroing the context channels of the 9-channel patch embedding must
        reduce the stacked model to a 3-channel backbone on the center scene."""
        model = build_model(cfg("input", use_acf=False, use_mls=False), seed=0)
        with torch.no_grad():
            model.backbone.patch_embed.weight[:, 3:].zero_()
        solo = Backbone(model.cfg.encoder, None, branches=("shared",), in_chans=3)
        state = {
            k: v for k, v in model.backbone.state_dict().items() if "adapters" not in k
        }
        state["patch_embed.weight"] = state["patch_embed.weight"][:, :3]
        solo.load_state_dict(state)
        c, s, g = scenes()
        with torch.no_grad():
            out = model(c, s, g)
            expect = model.heads(solo(c, "shared").pooled)
        assert torch.allclose(next(iter(out.logits.values())), expect, atol=1e-5)

    def test_mls_probs_come_from_global_head(self):
        model = build_model(cfg("cat"), seed=0)
        c, s, g = scenes()
        with torch.no_grad():
            out = model(c, s, g)
        assert torch.equal(out.probs, out.head_outputs.p_g)
        assert out.fused.f_g_fused.shape == (2, 24)

    def test_seeded_build_is_reproducible(self):
        a = build_model(cfg("cat"), seed=7)
        b = build_model(cfg("cat"), seed=7)
        for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
            assert ka == kb and torch.equal(va, vb)
        other = build_model(cfg("cat"), seed=8)
        assert any(
            not torch.equal(v, other.state_dict()[k]) for k, v in a.state_dict().items()
        )


class TestLossTerms:
    def test_mls_terms(self):
        model = build_model(cfg("cat"), seed=0)
        c, s, g = scenes()
        labels = torch.tensor([1, 3])
        terms = model.loss_terms(model(c, s, g), labels)
        assert set(terms) == {"loss_c", "loss_s", "loss_g", "loss_all"}
        assert torch.allclose(
            terms["loss_all"], terms["loss_c"] + terms["loss_s"] + terms["loss_g"]
        )

    def test_decision_loss_is_neg_log_mean_prob(self):
        model = build_model(cfg("decision", use_acf=False, use_mls=False), seed=0)
        c, s, g = scenes()
        labels = torch.tensor([0, 2])
        out = model(c, s, g)
        terms = model.loss_terms(out, labels)
        expect = -out.probs[torch.arange(2), labels].log().mean()
        assert torch.allclose(terms["loss_all"], expect)

    def test_center_terms(self):
        model = build_model(cfg("center", use_acf=False, use_mls=False), seed=0)
        c, _, _ = scenes()
        terms = model.loss_terms(model(c), torch.tensor([0, 1]))
        assert set(terms) == {"loss_c", "loss_all"}
        assert torch.equal(terms["loss_c"], terms["loss_all"])

    def test_acf_without_mls_supervises_global_only(self):
        model = build_model(cfg("cat", use_mls=False), seed=0)
        c, s, g = scenes()
        terms = model.loss_terms(model(c, s, g), torch.tensor([0, 1]))
        assert set(terms) == {"loss_g", "loss_all"}


class TestParameters:
    def test_frozen_backbone(self):
        model = build_model(cfg("cat"), seed=0)
        groups = parameter_groups(model)
        assert groups["backbone"] and all(not p.requires_grad for p in groups["backbone"].values())
        total, trainable = parameter_count(model)
        assert trainable == sum(
            p.numel() for g in ("adapters", "acf", "heads") for p in parameter_groups(model)[g].values()
        )
        assert total == trainable + sum(p.numel() for p in groups["backbone"].values())

    def test_shared_backbone_vs_three_copies(self):
        """The three-branch model must carry far fewer parameters than three
        independently fine-tuned backbones."""
        model = build_model(cfg("cat"), seed=0)
        total, trainable = parameter_count(model)
        solo = single_backbone_parameter_count(model.cfg.encoder)
        assert total < 3 * solo
        assert trainable < total / 2

    def test_no_adapters_when_aft_disabled(self):
        model = build_model(cfg("cat", adapter=None), seed=0)
        assert not parameter_groups(model)["adapters"]

    def test_default_profile_economy(self):
        enc = EncoderConfig()  # 32px / d=32 / depth 4 profile
        model = build_model(ModelConfig(num_classes=8, encoder=enc), seed=0)
        total, trainable = parameter_count(model)
        solo = single_backbone_parameter_count(enc)
        assert total / solo < 1.35
        assert trainable / total < 0.25
