"""Scoring backends.

Every backend maps a batch of rendered inputs to one score in [0, 1] per
input, deterministically. Inputs follow the text-to-text template

    Query: <utterance> Context: <history> Document: <passage> Relevant:

and segment-aware backends parse it by the marker strings, not by token
positions, so they are robust to any token-budget settings upstream.
"""

from __future__ import annotations

import re
import threading
from typing import Protocol, Sequence

_QUERY_MARKER = "Query: "
_CONTEXT_MARKER = " Context: "
_DOCUMENT_MARKER = " Document: "
_RELEVANT_MARKER = " Relevant:"

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


class MalformedInput(ValueError):
    """An input string does not follow the rendered template."""


class Backend(Protocol):
    name: str

    def score(self, inputs: Sequence[str]) -> list[float]: ...


def split_template(text: str) -> tuple[str, str, str]:
    """(query, context, document) segments of one rendered input."""
    if not text.startswith(_QUERY_MARKER) or not text.endswith(_RELEVANT_MARKER):
        raise MalformedInput(
            f"input does not follow the Query/Context/Document/Relevant "
            f"template: {text[:60]!r}"
        )
    body = text[len(_QUERY_MARKER): -len(_RELEVANT_MARKER)]
    context_at = body.find(_CONTEXT_MARKER)
    document_at = body.find(_DOCUMENT_MARKER, context_at + 1)
    if context_at < 0 or document_at < 0:
        raise MalformedInput(f"input is missing a template marker: {text[:60]!r}")
    return (
        body[:context_at],
        body[context_at + len(_CONTEXT_MARKER): document_at],
        body[document_at + len(_DOCUMENT_MARKER):],
    )


def _terms(text: str) -> set[str]:
    return set(_TOKEN.findall(text.lower()))


class StubBackend:
    """Fixed 0.5 for every input; the wire-protocol smoke backend."""

    name = "stub"

    def score(self, inputs: Sequence[str]) -> list[float]:
        return [0.5] * len(inputs)


class OverlapBackend:
    """Fraction of the query+context vocabulary covered by the document.

    A document repeating the query verbatim scores 1.0; disjoint
    vocabularies score 0.0, as does an empty query+context.
    """

    name = "overlap"

    def score(self, inputs: Sequence[str]) -> list[float]:
        scores = []
        for text in inputs:
            query, context, document = split_template(text)
            wanted = _terms(query) | _terms(context)
            if not wanted:
                scores.append(0.0)
                continue
            covered = wanted & _terms(document)
            scores.append(len(covered) / len(wanted))
        return scores


class ModelBackend:
    """Sequence-to-sequence relevance model scored by its true-token
    probability on the first decoded position.

    The checkpoint is loaded lazily on first use and forward passes are
    serialized, since the accelerator is a shared resource.
    """

    name = "model"

    def __init__(self, identifier: str, max_length: int = 512):
        self.identifier = identifier
        self.max_length = max_length
        self._lock = threading.Lock()
        self._bundle = None

    def _load(self):
        if self._bundle is None:
            import torch
            from transformers import AutoModelForSeq2SeqLM, AutoTokenizer

            tokenizer = AutoTokenizer.from_pretrained(self.identifier)
            model = AutoModelForSeq2SeqLM.from_pretrained(self.identifier)
            model.eval()
            true_id = tokenizer.encode("true", add_special_tokens=False)[0]
            false_id = tokenizer.encode("false", add_special_tokens=False)[0]
            self._bundle = (torch, tokenizer, model, true_id, false_id)
        return self._bundle

    def score(self, inputs: Sequence[str]) -> list[float]:
        if not inputs:
            return []
        # re-assemble each input from its parsed segments so a malformed
        # string fails fast instead of producing an arbitrary score
        normalized = []
        for text in inputs:
            query, context, document = split_template(text)
            normalized.append(
                f"Query: {query} Context: {context} Document: {document} Relevant:"
            )
        with self._lock:
            torch, tokenizer, model, true_id, false_id = self._load()
            batch = tokenizer(
                normalized,
                return_tensors="pt",
                padding=True,
                truncation=True,
                max_length=self.max_length,
            )
            decoder_start = torch.full(
                (len(normalized), 1),
                model.config.decoder_start_token_id,
                dtype=torch.long,
            )
            with torch.no_grad():
                logits = model(**batch, decoder_input_ids=decoder_start).logits[:, 0, :]
                pair = logits[:, [false_id, true_id]]
                probabilities = torch.softmax(pair, dim=-1)[:, 1]
        return [float(p) for p in probabilities]


def make_backend(spec: str) -> Backend:
    """Build a backend from its CLI spec: stub, overlap, or model:<id>."""
    if spec == "stub":
        return StubBackend()
    if spec == "overlap":
        return OverlapBackend()
    if spec.startswith("model:"):
        identifier = spec[len("model:"):]
        if not identifier:
            raise ValueError("model backend needs an identifier: model:<id>")
        return ModelBackend(identifier)
    raise ValueError(f"unknown backend {spec!r} (expected stub, overlap, model:<id>)")
