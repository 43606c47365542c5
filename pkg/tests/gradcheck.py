"""Central finite-difference check of the training loss on a micro-model."""
from __future__ import annotations

import torch

from gsr.forge import IndexingSample, RetrievalSample
from gsr.kg import Direction
from gsr.model import ModelConfig, Vocabulary, batch_loss, init_model, make_examples
from gsr.paths import DirectedHop

EPS = 1e-6


def micro_setup(seed: int = 0):
    # 5 content tokens: 2 relations and 3 words
    vocab = Vocabulary(["r1", "r2"], ["who", "is", "a"])
    cfg = ModelConfig(width=8, encoder_layers=1, decoder_layers=1, heads=2, ff_width=16,
                      max_question_tokens=6, max_hops=2, dropout=0.0, seed=seed)
    model = init_model(cfg, vocab)
    hop = lambda r: DirectedHop(r, Direction.FORWARD)
    idx, ret = make_examples(
        model,
        [IndexingSample("who is a", "r2")],
        [RetrievalSample("x", "who is a", "t", [(hop("r1"),), (hop("r1"), hop("r2"))]),
         RetrievalSample("y", "a is", "t", [(hop("r2"),)])],
    )
    return model, idx + ret


def max_group_error(model, batch) -> dict[str, float]:
    """Per-parameter relative error ||g_a - g_n|| / max(||g_a|| + ||g_n||, tiny)."""
    model.train()  # dropout is 0, train mode only matters for layer bookkeeping
    model.zero_grad()
    batch_loss(model, batch).backward()
    errors = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            analytic = p.grad.detach().clone()
            numeric = torch.zeros_like(p)
            flat, nflat = p.view(-1), numeric.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + EPS
                up = batch_loss(model, batch).item()
                flat[i] = orig - EPS
                down = batch_loss(model, batch).item()
                flat[i] = orig
                nflat[i] = (up - down) / (2 * EPS)
            denom = max((analytic.norm() + numeric.norm()).item(), 1e-12)
            errors[name] = (analytic - numeric).norm().item() / denom
    model.eval()
    return errors
