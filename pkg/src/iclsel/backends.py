"""Log-probability backends: the model capability all scoring runs against.

Every backend answers two questions, how likely is this continuation given
this context and what does greedy decoding produce, behind one small
interface, so the selection and evaluation code never knows whether it is
talking to a lookup table, a toy distribution, or a real model over HTTP.

Natural-log convention throughout. Totals are raw sums of per-token
log-probabilities; length normalization, where wanted, is applied by the
consumer via :func:`normalized_total`.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import threading
import time
from collections import Counter, OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence, runtime_checkable

import httpx

from .errors import BackendError, MockMissError, ProtocolError

log = logging.getLogger(__name__)

# Toy-backend logprobs are snapped to this grid. Grid multiples of modest
# magnitude add in float64 without rounding, so a token sequence's total is
# identical however the sequence is split, so the chain rule holds exactly.
_GRID = 2.0 ** -30


def _snap(x: float) -> float:
    return round(x / _GRID) * _GRID


@dataclass(frozen=True)
class TokenLogProbs:
    """Per-token log-probabilities of a continuation, plus their sum."""

    tokens: tuple[str, ...]
    logprobs: tuple[float, ...]
    total: float

    def __post_init__(self):
        if len(self.tokens) != len(self.logprobs):
            raise ValueError(
                f"{len(self.tokens)} tokens vs {len(self.logprobs)} logprobs"
            )

    @classmethod
    def from_pairs(cls, tokens: Iterable[str], logprobs: Iterable[float]) -> "TokenLogProbs":
        lps = tuple(float(x) for x in logprobs)
        return cls(tuple(tokens), lps, math.fsum(lps))


EMPTY_LOGPROBS = TokenLogProbs((), (), 0.0)


def normalized_total(tlp: TokenLogProbs, normalization: str = "sum") -> float:
    """Total under the configured normalization: raw sum (default) or per-token mean."""
    if normalization == "sum":
        return tlp.total
    if normalization == "per_token":
        return tlp.total / len(tlp.logprobs) if tlp.logprobs else 0.0
    raise ValueError(f"unknown normalization {normalization!r}")


@runtime_checkable
class LogProbBackend(Protocol):
    name: str

    def conditional_logprob(self, context: str, continuation: str) -> TokenLogProbs: ...

    def generate(self, prompt: str, max_tokens: int, stop: Sequence[str] = ()) -> str: ...


def truncate_at_stop(text: str, stop: Sequence[str]) -> str:
    """Cut ``text`` at the earliest occurrence of any stop sequence."""
    cut = len(text)
    for s in stop:
        if not s:
            continue
        i = text.find(s)
        if i != -1:
            cut = min(cut, i)
    return text[:cut]


class _CallCounting:
    """Mixin tracking how many requests reached this backend (thread-safe)."""

    def __init__(self):
        self._count_lock = threading.Lock()
        self.logprob_calls = 0
        self.generate_calls = 0

    def _bump(self, attr: str) -> None:
        with self._count_lock:
            setattr(self, attr, getattr(self, attr) + 1)


class MockBackend(_CallCounting):
    """Table-driven backend for tests: any request outside the table is an error.

    This strictness is the point: a selection run on a mock pins the exact
    set of model calls the algorithm makes.
    """

    def __init__(self, table: Mapping[tuple[str, str], Sequence[float]],
                 gen_table: Mapping[str, str] | None = None, name: str = "mock"):
        super().__init__()
        self.name = name
        self.table: dict[tuple[str, str], tuple[float, ...]] = {}
        for key, lps in table.items():
            context, continuation = key
            lps = tuple(float(x) for x in lps)
            if any(lp > 0.0 for lp in lps):
                raise BackendError(f"mock table entry {key!r} has a positive log-probability")
            self.table[(context, continuation)] = lps
        self.gen_table = dict(gen_table or {})

    def conditional_logprob(self, context: str, continuation: str) -> TokenLogProbs:
        self._bump("logprob_calls")
        if continuation == "":
            return EMPTY_LOGPROBS
        key = (context, continuation)
        if key not in self.table:
            raise MockMissError(
                f"mock table has no entry for context={context!r} continuation={continuation!r}"
            )
        lps = self.table[key]
        tokens = tuple(f"<t{i}>" for i in range(len(lps)))
        return TokenLogProbs.from_pairs(tokens, lps)

    def generate(self, prompt: str, max_tokens: int, stop: Sequence[str] = ()) -> str:
        self._bump("generate_calls")
        if prompt not in self.gen_table:
            raise MockMissError(f"mock generation table has no entry for prompt={prompt!r}")
        text = truncate_at_stop(self.gen_table[prompt], stop)
        words = text.split(" ")
        if len(words) > max_tokens:
            text = " ".join(words[:max_tokens])
        return text


def _check_vocab(vocab: Mapping[str, float]) -> dict[str, float]:
    if not vocab:
        raise BackendError("vocab must be non-empty")
    for tok, p in vocab.items():
        if not (p > 0.0):
            raise BackendError(f"vocab probability for {tok!r} must be > 0, got {p}")
    total = math.fsum(vocab.values())
    if abs(total - 1.0) > 1e-9:
        raise BackendError(f"vocab probabilities sum to {total!r}, expected 1.0 within 1e-9")
    return dict(vocab)


class UnigramBackend(_CallCounting):
    """Deterministic toy model: whitespace tokens, fixed unigram probabilities.

    Continuation likelihood is independent of the context by construction,
    which makes hand computation of every scoring formula possible.
    """

    def __init__(self, vocab: Mapping[str, float], name: str = "unigram"):
        super().__init__()
        self.name = name
        self.vocab = _check_vocab(vocab)
        self._logp = {tok: _snap(math.log(p)) for tok, p in self.vocab.items()}
        # greedy pick: highest probability, ties by token text
        self._argmax = min(self.vocab, key=lambda t: (-self.vocab[t], t))

    def _token_logprob(self, tok: str) -> float:
        try:
            return self._logp[tok]
        except KeyError:
            raise BackendError(f"token {tok!r} is outside the unigram vocabulary") from None

    def conditional_logprob(self, context: str, continuation: str) -> TokenLogProbs:
        self._bump("logprob_calls")
        tokens = continuation.split()
        if not tokens:
            return EMPTY_LOGPROBS
        return TokenLogProbs.from_pairs(tokens, [self._token_logprob(t) for t in tokens])

    def generate(self, prompt: str, max_tokens: int, stop: Sequence[str] = ()) -> str:
        self._bump("generate_calls")
        if max_tokens < 1:
            raise BackendError("max_tokens must be >= 1")
        text = " ".join([self._argmax] * max_tokens)
        return truncate_at_stop(text, stop)


class ContextUnigramBackend(_CallCounting):
    """Unigram prior reweighted by what the context already contains.

    P(tok | prefix) ∝ p(tok) * (1 + boost * count(tok in prefix)), renormalized
    over the vocabulary. Each token's probability depends only on the multiset
    of preceding tokens, so the chain rule holds exactly (logprobs snap to the
    same grid as UnigramBackend). Unlike a plain unigram model, demonstrations
    actually influence what the model predicts, which is what a desk-scale
    stand-in for a real LM needs.

    Out-of-vocabulary context tokens are ignored; out-of-vocabulary
    continuation tokens are an error (no probability can be assigned).
    """

    def __init__(self, vocab: Mapping[str, float], boost: float = 1.0,
                 name: str = "context-unigram"):
        super().__init__()
        if boost < 0:
            raise BackendError("boost must be >= 0")
        self.name = name
        self.vocab = _check_vocab(vocab)
        self.boost = float(boost)

    def _score_tokens(self, ctx_tokens: list[str], cont_tokens: list[str]) -> list[float]:
        counts = Counter(t for t in ctx_tokens if t in self.vocab)
        # Z(prefix) = 1 + boost * sum over prefix occurrences of p(occurrence)
        weighted = math.fsum(self.vocab[t] * c for t, c in counts.items())
        out = []
        for tok in cont_tokens:
            if tok not in self.vocab:
                raise BackendError(f"token {tok!r} is outside the vocabulary")
            p = self.vocab[tok] * (1.0 + self.boost * counts[tok])
            z = 1.0 + self.boost * weighted
            out.append(_snap(math.log(p) - math.log(z)))
            counts[tok] += 1
            weighted += self.vocab[tok]
        return out

    def conditional_logprob(self, context: str, continuation: str) -> TokenLogProbs:
        self._bump("logprob_calls")
        cont_tokens = continuation.split()
        if not cont_tokens:
            return EMPTY_LOGPROBS
        lps = self._score_tokens(context.split(), cont_tokens)
        return TokenLogProbs.from_pairs(cont_tokens, lps)

    def generate(self, prompt: str, max_tokens: int, stop: Sequence[str] = ()) -> str:
        self._bump("generate_calls")
        if max_tokens < 1:
            raise BackendError("max_tokens must be >= 1")
        counts = Counter(t for t in prompt.split() if t in self.vocab)
        emitted: list[str] = []
        for _ in range(max_tokens):
            # Z is shared across candidates, so argmax of the unnormalized mass
            tok = min(
                self.vocab,
                key=lambda t: (-(self.vocab[t] * (1.0 + self.boost * counts[t])), t),
            )
            emitted.append(tok)
            counts[tok] += 1
        return truncate_at_stop(" ".join(emitted), stop)


class HttpBackend(_CallCounting):
    """Client for the JSON-over-HTTP scoring protocol.

    POST /v1/logprob  {"model", "context", "continuation"} -> {"tokens", "logprobs", "total"}
    POST /v1/generate {"model", "prompt", "max_tokens", "stop"} -> {"text"}
    GET  /v1/health   -> {"model", "ok"}

    Requests are idempotent (deterministic server), so transport failures and
    503s are retried with exponential backoff. Responses are validated before
    use: a token/logprob length mismatch, an inconsistent total, or a positive
    log-probability is a protocol error, not data.
    """

    def __init__(self, base_url: str, model: str = "default", timeout: float = 30.0,
                 retries: int = 3, transport: httpx.BaseTransport | None = None,
                 backoff: float = 0.1):
        super().__init__()
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.retries = retries
        self.backoff = backoff
        self.name = f"http:{self.base_url}:{model}"
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def _post(self, path: str, payload: dict) -> dict:
        url = f"{self.base_url}{path}"
        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                delay = self.backoff * (2 ** (attempt - 1))
                log.warning("retrying %s (attempt %d/%d) after %.2fs: %s",
                            url, attempt, self.retries, delay, last_exc)
                time.sleep(delay)
            try:
                resp = self._client.post(url, json=payload)
            except httpx.TransportError as e:
                last_exc = e
                continue
            if resp.status_code == 503:
                last_exc = BackendError(f"{url}: model unavailable (503)")
                continue
            if resp.status_code != 200:
                detail = ""
                try:
                    detail = resp.json().get("error", "")
                except Exception:
                    detail = resp.text[:200]
                raise BackendError(f"{url}: HTTP {resp.status_code}: {detail}")
            try:
                return resp.json()
            except json.JSONDecodeError as e:
                raise ProtocolError(f"{url}: response is not JSON") from e
        raise BackendError(f"{url}: unreachable after {self.retries} retries: {last_exc}")

    def conditional_logprob(self, context: str, continuation: str) -> TokenLogProbs:
        self._bump("logprob_calls")
        body = self._post("/v1/logprob", {
            "model": self.model, "context": context, "continuation": continuation,
        })
        tokens = body.get("tokens")
        logprobs = body.get("logprobs")
        total = body.get("total")
        if not isinstance(tokens, list) or not isinstance(logprobs, list) or not isinstance(total, (int, float)):
            raise ProtocolError(f"logprob response missing tokens/logprobs/total: {body!r}")
        if len(tokens) != len(logprobs):
            raise ProtocolError(
                f"logprob response has {len(tokens)} tokens but {len(logprobs)} logprobs"
            )
        lps = [float(x) for x in logprobs]
        if any(lp > 1e-6 for lp in lps):
            raise ProtocolError("logprob response contains a positive log-probability")
        if abs(math.fsum(lps) - float(total)) > 1e-6:
            raise ProtocolError(
                f"logprob response total {total!r} disagrees with sum of logprobs"
            )
        return TokenLogProbs.from_pairs([str(t) for t in tokens], lps)

    def generate(self, prompt: str, max_tokens: int, stop: Sequence[str] = ()) -> str:
        self._bump("generate_calls")
        body = self._post("/v1/generate", {
            "model": self.model, "prompt": prompt,
            "max_tokens": max_tokens, "stop": list(stop),
        })
        text = body.get("text")
        if not isinstance(text, str):
            raise ProtocolError(f"generate response missing text: {body!r}")
        return text

    def health(self) -> dict:
        url = f"{self.base_url}/v1/health"
        try:
            resp = self._client.get(url)
        except httpx.TransportError as e:
            raise BackendError(f"{url}: {e}") from e
        if resp.status_code != 200:
            raise BackendError(f"{url}: HTTP {resp.status_code}")
        return resp.json()

    def adopt_served_model(self) -> str:
        """Ask /v1/health which model the server hosts and score against it.
        Only meaningful before the first scoring call (the name keys caches)."""
        served = self.health().get("model")
        if isinstance(served, str) and served:
            self.model = served
            self.name = f"http:{self.base_url}:{served}"
        return self.model


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0


class CachedBackend:
    """Bounded LRU on top of any backend, keyed by (backend name, context,
    continuation). Selection re-scores identical prefixes heavily, so this is
    where sweep reuse comes from. Thread-safe."""

    def __init__(self, inner: LogProbBackend, maxsize: int = 200_000):
        self.inner = inner
        self.name = inner.name
        self.maxsize = maxsize
        self.stats = CacheStats()
        self._lock = threading.Lock()
        self._lru: OrderedDict[tuple, TokenLogProbs | str] = OrderedDict()

    def _get(self, key: tuple):
        with self._lock:
            if key in self._lru:
                self._lru.move_to_end(key)
                self.stats.hits += 1
                return self._lru[key]
            self.stats.misses += 1
            return None

    def _put(self, key: tuple, value) -> None:
        with self._lock:
            self._lru[key] = value
            self._lru.move_to_end(key)
            while len(self._lru) > self.maxsize:
                self._lru.popitem(last=False)

    def conditional_logprob(self, context: str, continuation: str) -> TokenLogProbs:
        key = ("lp", self.name, context, continuation)
        cached = self._get(key)
        if cached is not None:
            return cached
        result = self.inner.conditional_logprob(context, continuation)
        self._put(key, result)
        return result

    def generate(self, prompt: str, max_tokens: int, stop: Sequence[str] = ()) -> str:
        key = ("gen", self.name, prompt, max_tokens, tuple(stop))
        cached = self._get(key)
        if cached is not None:
            return cached
        result = self.inner.generate(prompt, max_tokens, stop)
        self._put(key, result)
        return result

    # ---- persistence (logprob entries only; generation is cheap to redo) ----

    def load_jsonl(self, path: str | Path) -> int:
        """Warm the cache from a dump written by :meth:`dump_jsonl`. Entries
        recorded under a different backend name are ignored."""
        path = Path(path)
        if not path.is_file():
            return 0
        n = 0
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if rec.get("backend") != self.name:
                    continue
                tlp = TokenLogProbs.from_pairs(rec["tokens"], rec["logprobs"])
                self._put(("lp", self.name, rec["context"], rec["continuation"]), tlp)
                n += 1
        return n

    def dump_jsonl(self, path: str | Path) -> int:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        n = 0
        with self._lock:
            entries = list(self._lru.items())
        with path.open("w", encoding="utf-8") as fh:
            for key, value in entries:
                if key[0] != "lp":
                    continue
                _, _, context, continuation = key
                fh.write(json.dumps({
                    "backend": self.name, "context": context, "continuation": continuation,
                    "tokens": list(value.tokens), "logprobs": list(value.logprobs),
                }, ensure_ascii=False))
                fh.write("\n")
                n += 1
        return n


def cache_file_for(cache_dir: str | Path, backend_name: str) -> Path:
    digest = hashlib.sha256(backend_name.encode("utf-8")).hexdigest()[:16]
    return Path(cache_dir) / f"logprob-{digest}.jsonl"


def load_mock_backend(path: str | Path) -> MockBackend:
    """Mock backend file: {"logprob": [{"context","continuation","logprobs"}],
    "generate": [{"prompt","text"}]}."""
    path = Path(path)
    if not path.is_file():
        raise BackendError(f"mock backend file not found: {path}")
    spec = json.loads(path.read_text(encoding="utf-8"))
    table = {
        (e["context"], e["continuation"]): e["logprobs"]
        for e in spec.get("logprob", [])
    }
    gen_table = {e["prompt"]: e["text"] for e in spec.get("generate", [])}
    return MockBackend(table, gen_table, name=spec.get("name", "mock"))


def load_unigram_backend(path: str | Path):
    """Unigram backend file: {"vocab": {token: prob}} plus an optional
    "context_boost" that upgrades it to a context-sensitive variant."""
    path = Path(path)
    if not path.is_file():
        raise BackendError(f"unigram backend file not found: {path}")
    spec = json.loads(path.read_text(encoding="utf-8"))
    vocab = spec.get("vocab")
    if not isinstance(vocab, dict):
        raise BackendError(f"{path}: expected a 'vocab' object")
    if "context_boost" in spec:
        return ContextUnigramBackend(vocab, boost=float(spec["context_boost"]),
                                     name=spec.get("name", "context-unigram"))
    return UnigramBackend(vocab, name=spec.get("name", "unigram"))
