"""Sentence-encoder and token-access contracts with mock and live backends.

The mock encoder hashes the (truncated) token sequence into a seeded unit
vector: deterministic across processes, cheap, and faithful to the truncation
contract, which is what the property suite needs. The live backend wraps a
sentence-transformers model and is only imported when configured.
"""

from __future__ import annotations

import hashlib
from typing import Protocol

import numpy as np

from .errors import ConfigurationError

DEFAULT_OUTPUT_DIM = 768
DEFAULT_MAX_TOKENS = 384


class SentenceEncoder(Protocol):
    encoder_id: str
    output_dim: int
    max_tokens: int

    def encode(self, text: str) -> np.ndarray: ...


class TokenAccess(Protocol):
    """Split encoder access for embedding-layer fusion.

    Exposes the token-embedding lookup and the remaining encoder layers (the
    tail) separately, plus a vector-Jacobian product through the tail so a
    prepended slot can receive gradients while the tail stays frozen.
    """

    token_dim: int

    def embed_tokens(self, text: str, max_tokens: int) -> np.ndarray: ...

    def tail_forward(self, sequence: np.ndarray, mask: np.ndarray) -> np.ndarray: ...

    def tail_vjp(self, sequence: np.ndarray, mask: np.ndarray, grad_out: np.ndarray) -> np.ndarray: ...

    def tail_fingerprint(self) -> str: ...


def _hash_rng(*parts: str) -> np.random.Generator:
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


class HashEncoder:
    """Deterministic mock encoder: token sequence -> seeded unit vector."""

    def __init__(self, output_dim: int = DEFAULT_OUTPUT_DIM, max_tokens: int = DEFAULT_MAX_TOKENS):
        self.encoder_id = f"mock-hash-{output_dim}"
        self.output_dim = output_dim
        self.max_tokens = max_tokens

    def tokenize(self, text: str) -> list[str]:
        return text.split()

    def encode(self, text: str) -> np.ndarray:
        tokens = self.tokenize(text)[: self.max_tokens]
        rng = _hash_rng("sentence", str(self.output_dim), *tokens)
        vec = rng.standard_normal(self.output_dim)
        return vec / np.linalg.norm(vec)


class HashTokenAccess:
    """Mock token access paired with HashEncoder.

    Token embeddings are per-token seeded unit vectors; the tail is either the
    identity or a fixed seeded linear map, both row-local so masked pooling
    semantics are easy to verify in closed form.
    """

    def __init__(self, token_dim: int = DEFAULT_OUTPUT_DIM, tail: str = "identity", seed: int = 91):
        self.token_dim = token_dim
        self.tail_kind = tail
        if tail == "identity":
            self._matrix = None
        elif tail == "linear":
            rng = np.random.default_rng(seed)
            self._matrix = rng.standard_normal((token_dim, token_dim)) / np.sqrt(token_dim)
        else:
            raise ConfigurationError(f"unknown mock tail kind {tail!r}")

    def embed_tokens(self, text: str, max_tokens: int) -> np.ndarray:
        tokens = text.split()[:max_tokens]
        if not tokens:
            return np.zeros((0, self.token_dim))
        rows = []
        for token in tokens:
            rng = _hash_rng("token", str(self.token_dim), token)
            vec = rng.standard_normal(self.token_dim)
            rows.append(vec / np.linalg.norm(vec))
        return np.stack(rows)

    def tail_forward(self, sequence: np.ndarray, mask: np.ndarray) -> np.ndarray:
        if self._matrix is None:
            return sequence.copy()
        return sequence @ self._matrix.T

    def tail_vjp(self, sequence: np.ndarray, mask: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        if self._matrix is None:
            return grad_out.copy()
        return grad_out @ self._matrix

    def tail_fingerprint(self) -> str:
        if self._matrix is None:
            return "identity"
        return hashlib.sha256(self._matrix.tobytes()).hexdigest()


class SbertEncoder:
    """sentence-transformers wrapper (lazy import; needs the `real` extra)."""

    def __init__(self, model_name: str = "sentence-transformers/all-mpnet-base-v2"):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise ConfigurationError(
                "sentence-transformers is not installed; install the `real` extra"
            ) from exc
        self._model = SentenceTransformer(model_name)
        self._model.max_seq_length = DEFAULT_MAX_TOKENS
        self.encoder_id = model_name
        self.output_dim = int(self._model.get_sentence_embedding_dimension())
        self.max_tokens = DEFAULT_MAX_TOKENS

    def encode(self, text: str) -> np.ndarray:
        vec = self._model.encode([text], normalize_embeddings=True, show_progress_bar=False)[0]
        return np.asarray(vec, dtype=np.float64)


class SbertTokenAccess:
    """Token access into the transformer inside a sentence-transformers model.

    `embed_tokens` applies only the word-embedding matrix; position embeddings
    and the embedding layernorm are applied by the tail via `inputs_embeds`,
    so a projected context vector can be prepended in word-embedding space.
    """

    def __init__(self, model_name: str = "sentence-transformers/all-mpnet-base-v2"):
        try:
            import torch
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise ConfigurationError(
                "torch/sentence-transformers are not installed; install the `real` extra"
            ) from exc
        self._torch = torch
        st_model = SentenceTransformer(model_name)
        self._tokenizer = st_model.tokenizer
        self._model = st_model[0].auto_model
        self._model.eval()
        for param in self._model.parameters():
            param.requires_grad_(False)
        self.token_dim = int(self._model.config.hidden_size)

    def embed_tokens(self, text: str, max_tokens: int) -> np.ndarray:
        torch = self._torch
        ids = self._tokenizer(
            text, truncation=True, max_length=max_tokens, return_tensors="pt"
        )["input_ids"][0]
        with torch.no_grad():
            embeddings = self._model.embeddings.word_embeddings(ids)
        return embeddings.double().numpy()

    def _run_tail(self, sequence, mask):
        torch = self._torch
        seq = sequence.unsqueeze(0).float()
        attention = mask.unsqueeze(0).float()
        output = self._model(inputs_embeds=seq, attention_mask=attention)
        return output.last_hidden_state[0]

    def tail_forward(self, sequence: np.ndarray, mask: np.ndarray) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            hidden = self._run_tail(torch.from_numpy(sequence), torch.from_numpy(mask))
        return hidden.double().numpy()

    def tail_vjp(self, sequence: np.ndarray, mask: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        torch = self._torch
        seq = torch.from_numpy(sequence).float().requires_grad_(True)
        hidden = self._run_tail(seq, torch.from_numpy(mask))
        grad = torch.autograd.grad(hidden, seq, grad_outputs=torch.from_numpy(grad_out).float())[0]
        return grad.double().numpy()

    def tail_fingerprint(self) -> str:
        import hashlib as h

        digest = h.sha256()
        for param in self._model.parameters():
            digest.update(param.detach().cpu().numpy().tobytes())
        return digest.hexdigest()


def build_encoder(encoder_id: str) -> SentenceEncoder:
    if encoder_id in ("mock", "mock-hash", "mock-hash-768"):
        return HashEncoder()
    return SbertEncoder(encoder_id)


def build_token_access(encoder_id: str, tail: str = "identity") -> TokenAccess:
    if encoder_id in ("mock", "mock-hash", "mock-hash-768"):
        return HashTokenAccess(tail=tail)
    return SbertTokenAccess(encoder_id)


def masked_mean(hidden: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mean over unmasked positions; padding never leaks into the pool."""
    mask = np.asarray(mask, dtype=np.float64)
    total = mask.sum()
    if total == 0:
        raise ValueError("cannot pool a fully masked sequence")
    return (hidden * mask[:, None]).sum(axis=0) / total
