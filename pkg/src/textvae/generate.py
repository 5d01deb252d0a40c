"""Length-normalized beam search over any of the decoders.

Candidates are scored by total log-probability; finished hypotheses compete
on log-probability per generated token.  Beam width 1 is exactly greedy
argmax decoding.  Prefixes are re-decoded from scratch each step, which is
plenty fast at desk scale and keeps one code path for LSTM and CNN decoders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .data import BOS_ID, EOS_ID
from .errors import ParameterError, UsageError
from .models import LanguageModel, VaeModel
from .semisup import SemiVae, one_hot

MAX_LENGTH_CAP = 200


@dataclass
class _Hyp:
    tokens: list[int]  # includes leading BOS
    logprob: float

    def score(self) -> float:
        n = max(len(self.tokens) - 1, 1)  # generated tokens only
        return self.logprob / n


def _step_logprobs(model, prefixes: np.ndarray, z: Tensor | None, y: Tensor | None) -> np.ndarray:
    if isinstance(model, SemiVae):
        logits = model.decode_logits(z, y, prefixes)
    elif isinstance(model, VaeModel):
        logits = model.decode_logits(z, prefixes)
    elif isinstance(model, LanguageModel):
        logits = model.logits(prefixes)
    else:
        raise UsageError(f"cannot generate from {type(model).__name__}")
    last = logits.data[:, -1, :]
    mx = last.max(axis=1, keepdims=True)
    return last - (mx + np.log(np.exp(last - mx).sum(axis=1, keepdims=True)))


def beam_search(model, z: np.ndarray | None = None, label: int | None = None,
                beam: int = 10, max_len: int = MAX_LENGTH_CAP) -> list[int]:
    """Best token sequence (BOS/EOS stripped) under the model.

    z is a [z_dim] latent for (Semi)VaeModel decoders; label selects the class
    one-hot for SemiVae.  Deterministic: ties break toward lower token ids.
    """
    if beam < 1:
        raise ParameterError(f"beam width must be >= 1, got {beam}")
    max_len = min(max_len, MAX_LENGTH_CAP)
    z_t = None
    y_t = None
    if isinstance(model, SemiVae):
        if label is None:
            raise UsageError("a class label is required to generate from a label-conditioned model")
        if z is None:
            raise UsageError("a latent vector is required to generate from a VAE")
        y_row = one_hot(np.array([label]), model.config.num_classes)
    elif isinstance(model, VaeModel):
        if label is not None:
            raise UsageError("this checkpoint is unconditional; --label does not apply")
        if z is None:
            raise UsageError("a latent vector is required to generate from a VAE")
    elif label is not None or z is not None:
        raise UsageError("this checkpoint is a plain language model; z/label do not apply")

    alive = [_Hyp(tokens=[BOS_ID], logprob=0.0)]
    finished: list[_Hyp] = []
    for _ in range(max_len):
        prefixes = np.array([h.tokens for h in alive], dtype=np.int64)
        n = len(alive)
        if isinstance(model, (VaeModel, SemiVae)):
            z_t = Tensor(np.broadcast_to(np.asarray(z, dtype=np.float64), (n, len(z))).copy())
        if isinstance(model, SemiVae):
            y_t = Tensor(np.broadcast_to(y_row.data, (n, model.config.num_classes)).copy())
        logprobs = _step_logprobs(model, prefixes, z_t, y_t)
        candidates: list[_Hyp] = []
        for h, lp in zip(alive, logprobs):
            top = np.argsort(-lp, kind="stable")[:beam]
            for tok in top:
                candidates.append(_Hyp(tokens=h.tokens + [int(tok)], logprob=h.logprob + float(lp[tok])))
        candidates.sort(key=lambda h: (-h.logprob, h.tokens))
        # keep the overall top `beam`; EOS hypotheses retire from the frontier,
        # so beam=1 reproduces greedy decoding token for token
        alive = []
        for cand in candidates[:beam]:
            if cand.tokens[-1] == EOS_ID:
                finished.append(cand)
            else:
                alive.append(cand)
        if not alive:
            break
    finished.extend(alive)  # length-capped hypotheses still compete
    best = max(finished, key=lambda h: (h.score(), h.tokens[-1] == EOS_ID))
    tokens = best.tokens[1:]
    if tokens and tokens[-1] == EOS_ID:
        tokens = tokens[:-1]
    return tokens
