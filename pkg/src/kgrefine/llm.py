"""Prompt rendering, structured-output parsing, and a chat-completion client.

Three canonical templates ship with the package: a direct refinement prompt,
an entity-first refinement prompt (the model lists key entities before
rewriting), and an adversarial corruption prompt for synthesizing unfaithful
utterances. Template files are the source of truth; customization means
adding new files, not editing these.

The HTTP client retries transient failures with exponential backoff, caches
responses by prompt hash, and only ever logs prompt hashes, never the
credential.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import string
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Sequence

import requests

log = logging.getLogger(__name__)

REFINE_DIRECT = "refine_direct"
REFINE_WITH_ENTITIES = "refine_with_entities"
ADVERSARIAL = "adversarial"
TEMPLATE_IDS = (REFINE_DIRECT, REFINE_WITH_ENTITIES, ADVERSARIAL)


class PromptError(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class LlmClientError(RuntimeError):
    pass


def load_template(template_id: str) -> str:
    if template_id not in TEMPLATE_IDS:
        raise PromptError(f"unknown template {template_id!r}; known: {TEMPLATE_IDS}")
    ref = resources.files("kgrefine.templates").joinpath(f"{template_id}.txt")
    return ref.read_text(encoding="utf-8")


def template_placeholders(template: str) -> set[str]:
    return {
        name
        for _, name, _, _ in string.Formatter().parse(template)
        if name is not None
    }


def render_prompt(template_id: str, bindings: Mapping[str, str]) -> str:
    """Substitute bindings into the stored template, byte-exactly.

    Every placeholder must be bound; missing ones raise naming the
    placeholder. Extra bindings are ignored.
    """
    template = load_template(template_id)
    missing = sorted(template_placeholders(template) - set(bindings))
    if missing:
        raise PromptError(f"placeholder {missing[0]!r} unbound")
    return template.format_map(dict(bindings))


@dataclass
class LlmRefineOutput:
    """Parsed entity-first refinement completion."""

    entities: list[str]
    output: str


def format_refine_output(result: LlmRefineOutput) -> str:
    """Canonical serialization; :func:`parse_refine_output` round-trips it."""
    return f"Entities: {', '.join(result.entities)}\nOutput: {result.output}"


_OUTPUT_MARKER = re.compile(r"(?i)\boutput\s*:")
_ENTITIES_MARKER = re.compile(r"(?i)\bentities\s*:")


def parse_refine_output(raw: str) -> LlmRefineOutput:
    """Extract the entity list and output text from a completion.

    Tolerates keyword casing and surrounding whitespace. The entities line is
    optional; a missing or empty output section is a parse error carrying the
    raw text.
    """
    out_m = _OUTPUT_MARKER.search(raw)
    if out_m is None:
        raise ParseError("no 'Output:' section found", raw)
    output = raw[out_m.end() :].strip()
    if not output:
        raise ParseError("'Output:' section is empty", raw)

    entities: list[str] = []
    ent_m = _ENTITIES_MARKER.search(raw, 0, out_m.start())
    if ent_m is not None:
        ent_text = raw[ent_m.end() : out_m.start()]
        entities = [e.strip() for e in ent_text.split(",") if e.strip()]
    return LlmRefineOutput(entities=entities, output=output)


@dataclass(frozen=True)
class ClientConfig:
    endpoint: str = ""
    model: str = ""
    timeout_s: float = 30.0
    max_attempts: int = 3
    backoff_s: float = 0.5
    api_key_env: str = "KGREFINE_API_KEY"
    cache_path: str | None = None
    max_concurrency: int = 4


class _Transient(Exception):
    pass


#: transport(config, payload) -> (status_code, parsed body)
Transport = Callable[[ClientConfig, dict], tuple[int, dict]]


def _http_post(cfg: ClientConfig, payload: dict) -> tuple[int, dict]:
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(cfg.api_key_env, "")
    if key:
        headers["Authorization"] = f"Bearer {key}"
    try:
        resp = requests.post(
            cfg.endpoint, json=payload, headers=headers, timeout=cfg.timeout_s
        )
    except requests.RequestException as err:
        raise _Transient(str(err)) from None
    try:
        body = resp.json()
    except ValueError:
        body = {}
    return resp.status_code, body


def _prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class CompletionCache:
    """JSONL cache keyed by prompt hash."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._entries: dict[str, str] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    d = json.loads(line)
                    self._entries[d["hash"]] = d["response"]

    def get(self, prompt: str) -> str | None:
        return self._entries.get(_prompt_hash(prompt))

    def put(self, prompt: str, response: str) -> None:
        key = _prompt_hash(prompt)
        if key in self._entries:
            return
        self._entries[key] = response
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(
                json.dumps({"hash": key, "response": response}, ensure_ascii=False)
                + "\n"
            )


def complete(
    prompt: str,
    cfg: ClientConfig,
    transport: Transport | None = None,
    cache: CompletionCache | None = None,
) -> str:
    """Send one chat completion and return the model's text.

    Retries transport failures, 429, and 5xx responses with exponential
    backoff up to ``cfg.max_attempts``; other non-2xx statuses fail
    immediately.
    """
    if cache is None and cfg.cache_path:
        cache = CompletionCache(cfg.cache_path)
    if cache is not None:
        hit = cache.get(prompt)
        if hit is not None:
            return hit
    transport = transport or _http_post
    payload = {
        "model": cfg.model,
        "messages": [{"role": "user", "content": prompt}],
    }
    phash = _prompt_hash(prompt)[:12]
    delay = cfg.backoff_s
    last_error = ""
    for attempt in range(1, cfg.max_attempts + 1):
        try:
            status, body = transport(cfg, payload)
        except _Transient as err:
            last_error = str(err)
            log.warning("prompt %s attempt %d transport error: %s", phash, attempt, err)
        else:
            if 200 <= status < 300:
                try:
                    text = body["choices"][0]["message"]["content"]
                except (KeyError, IndexError, TypeError):
                    raise LlmClientError(
                        f"prompt {phash}: malformed completion body"
                    ) from None
                log.info("prompt %s completed on attempt %d", phash, attempt)
                if cache is not None:
                    cache.put(prompt, text)
                return text
            if status == 429 or status >= 500:
                last_error = f"HTTP {status}"
                log.warning("prompt %s attempt %d got %s", phash, attempt, last_error)
            else:
                raise LlmClientError(f"prompt {phash}: HTTP {status}, not retryable")
        if attempt < cfg.max_attempts:
            time.sleep(delay)
            delay *= 2
    raise LlmClientError(
        f"prompt {phash}: exhausted {cfg.max_attempts} attempts ({last_error})"
    )


def complete_many(
    prompts: Sequence[str],
    cfg: ClientConfig,
    transport: Transport | None = None,
) -> list[str]:
    """Complete several prompts with bounded concurrency, preserving order."""
    cache = CompletionCache(cfg.cache_path) if cfg.cache_path else None
    with ThreadPoolExecutor(max_workers=max(1, cfg.max_concurrency)) as pool:
        futures = [
            pool.submit(complete, prompt, cfg, transport, cache)
            for prompt in prompts
        ]
        return [f.result() for f in futures]


def stub_complete(prompt: str) -> str:
    """Offline deterministic stand-in for a chat model.

    Echoes the prompt's Response section back in the canonical
    Entities/Output format so refinement pipelines run end to end without
    network access.
    """
    marker = "Response:"
    idx = prompt.rfind(marker)
    response = prompt[idx + len(marker) :].strip() if idx != -1 else prompt.strip()
    if response.endswith("."):
        response = response[:-1].rstrip() or response
    return f"Entities:\nOutput: {response}"


@dataclass
class LlmRefiner:
    """Adapts a completion function to the (knowledge, utterance) -> text
    contract used by the filtering pipeline."""

    complete_fn: Callable[[str], str]
    template_id: str = REFINE_DIRECT
    parse: bool = True

    def __call__(self, knowledge: str, utterance: str) -> str:
        prompt = render_prompt(
            self.template_id, {"knowledge": knowledge, "response": utterance}
        )
        raw = self.complete_fn(prompt)
        if not self.parse:
            return raw.strip()
        return parse_refine_output(raw).output


def adversarial_prompt(knowledge: str, dialogue_history: str, answer: str) -> str:
    return render_prompt(
        ADVERSARIAL,
        {
            "knowledge": knowledge,
            "dialogue_history": dialogue_history,
            "answer": answer,
        },
    )
