"""Answer-producing agents: a seeded synthetic model and a remote chat client."""

from __future__ import annotations

import json
import logging
import math
import os
import random
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import httpx

from .uq import canonical_number, normalize

log = logging.getLogger(__name__)

API_KEY_ENV = "SWARM_API_KEY"

SYSTEM_PROMPT = "You are one of several agents debating a question. Reason briefly, then commit to one answer."
ROUND0_INSTRUCTION = 'Answer the question. End your response with "Final answer: X".'
DEBATE_HEADER = "Answers from your neighbors in the previous round:"
DEBATE_INSTRUCTION = 'Reconsider your answer in light of these responses. End your response with "Final answer: X".'

RATIONALE_INDEPENDENT = "I worked it out on my own."
RATIONALE_ADOPTED = "I side with most of my neighbors."
RATIONALE_SCRIPTED = "This answer was fixed in advance."


class AgentFailure(RuntimeError):
    pass


class HttpError(AgentFailure):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class ParseError(ValueError):
    pass


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class QARecord:
    id: str
    question: str
    gold: str
    choices: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.id:
            raise DatasetError("QA record id must be non-empty")
        if self.choices is not None:
            object.__setattr__(self, "choices", tuple(self.choices))
        gold = normalize(self.gold)
        if not gold:
            raise DatasetError(f"record {self.id}: gold answer is empty after normalization")
        if self.choices is not None and gold not in option_letters(len(self.choices)):
            raise DatasetError(f"record {self.id}: gold {gold!r} is not an option letter")
        object.__setattr__(self, "gold", gold)

    @property
    def numeric(self) -> bool:
        return self.choices is None and canonical_number(self.gold) is not None

    def to_json(self) -> dict:
        out = {"id": self.id, "question": self.question}
        if self.choices is not None:
            out["choices"] = list(self.choices)
        out["answer"] = self.gold
        return out


def option_letters(n: int) -> list[str]:
    return [chr(ord("A") + i) for i in range(n)]


def load_dataset(path: str | Path) -> list[QARecord]:
    """Read QA items from JSONL (keys: id, question, choices?, answer)."""
    items: list[QARecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                rec = QARecord(
                    id=str(row["id"]),
                    question=row["question"],
                    gold=str(row["answer"]),
                    choices=row.get("choices"),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            if rec.id in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            items.append(rec)
    if not items:
        raise DatasetError(f"{path}: no records")
    return items


@dataclass(frozen=True)
class AgentMessage:
    round: int
    sender: int
    answer: str | None  # None marks an unparsable reply
    rationale: str = ""
    prompt_tokens: int = 0
    completion_tokens: int = 0

    @property
    def unparsable(self) -> bool:
        return self.answer is None

    @property
    def token_cost(self) -> tuple[int, int]:
        return (self.prompt_tokens, self.completion_tokens)

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "sender": self.sender,
            "answer": self.answer,
            "rationale": self.rationale,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
        }


def count_tokens(text: str) -> int:
    """Rough token proxy: one token per four UTF-8 bytes, rounded up."""
    return -(-len(text.encode("utf-8")) // 4)


def plurality(answers: Sequence[str | None]) -> str | None:
    """Most common answer; ties go to the lexicographically smallest. Abstentions are ignored."""
    counts = Counter(a for a in answers if a is not None)
    if not counts:
        return None
    best = max(counts.values())
    return min(a for a, c in counts.items() if c == best)


_FINAL = re.compile(r"final answer\s*[:：]?\s*(.+)", re.IGNORECASE)
_NUM = re.compile(r"[-+]?\$?\d[\d,]*(?:\.\d+)?")


def extract_answer(raw: str, item: QARecord) -> str | None:
    """Pull a normalized answer out of free text, or None if there is none.

    Multiple-choice items take the last standalone option letter, numeric items
    the last number.  Text after a "Final answer:" marker is searched first.
    """
    tail = None
    m = None
    for m in _FINAL.finditer(raw):
        pass
    if m is not None:
        tail = m.group(1)
    for text in ([tail] if tail else []) + [raw]:
        if item.choices is not None:
            letters = "".join(option_letters(len(item.choices)))
            # lowercase letters only count after the marker ("a" is usually an article)
            flags = re.IGNORECASE if text is tail else 0
            hits = re.findall(rf"(?<![A-Za-z])([{letters}])(?![A-Za-z])", text, flags)
            if hits:
                return hits[-1].upper()
        elif item.numeric:
            hits = _NUM.findall(text)
            for h in reversed(hits):
                num = canonical_number(h)
                if num is not None:
                    return num
        elif text is tail:
            ans = normalize(text.strip().splitlines()[0] if text.strip() else "")
            if ans:
                return ans
    return None


def parse_reply(raw: str, item: QARecord) -> str:
    ans = extract_answer(raw, item)
    if ans is None:
        raise ParseError(f"no answer found in reply for item {item.id}")
    return ans


def build_prompt(item: QARecord, neighbor_msgs: Sequence[AgentMessage], round: int = 0) -> str:
    """Debate prompt. Round 0 shows only the question; later rounds list the
    previous answers of the agent's neighbors, possibly none."""
    lines = [f"Question: {item.question}"]
    if item.choices is not None:
        lines.extend(f"{letter}. {text}" for letter, text in zip(option_letters(len(item.choices)), item.choices))
    if round == 0:
        lines.append(ROUND0_INSTRUCTION)
    else:
        lines.append(DEBATE_HEADER)
        for msg in neighbor_msgs:
            shown = msg.answer if msg.answer is not None else "no answer"
            lines.append(f"- Agent {msg.sender}: {shown}. {msg.rationale}".rstrip())
        lines.append(DEBATE_INSTRUCTION)
    return "\n".join(lines)


@dataclass(frozen=True)
class SyntheticAgentParams:
    q: float = 0.6
    beta: float = 0.7
    distractors: int = 3

    def __post_init__(self):
        if not (0.0 <= self.q <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("q and beta must lie in [0, 1]")
        if self.distractors < 1:
            raise ValueError("distractors must be >= 1")


def synthetic_answer(
    params: SyntheticAgentParams,
    item: QARecord,
    neighbor_msgs: Sequence[AgentMessage],
    rng: random.Random,
    round: int = 0,
    sender: int = 0,
) -> AgentMessage:
    """One reply from the competence/conformity agent model.

    With neighbor messages available the agent copies their plurality answer
    with probability ``beta``.  Otherwise it answers on its own: gold with
    probability ``q``, else one of the ``wrong<j>`` distractors uniformly.
    """
    answer = None
    rationale = RATIONALE_INDEPENDENT
    if neighbor_msgs:
        top = plurality([m.answer for m in neighbor_msgs])
        if top is not None and rng.random() < params.beta:
            answer, rationale = top, RATIONALE_ADOPTED
    if answer is None:
        if rng.random() < params.q:
            answer = item.gold
        else:
            answer = f"wrong{rng.randint(1, params.distractors)}"
    return _proxy_message(item, neighbor_msgs, round, sender, answer, rationale)


def _proxy_message(item, neighbor_msgs, round, sender, answer, rationale) -> AgentMessage:
    prompt = build_prompt(item, neighbor_msgs, round)
    completion = f"{rationale} Final answer: {answer}"
    return AgentMessage(
        round=round,
        sender=sender,
        answer=answer,
        rationale=rationale,
        prompt_tokens=count_tokens(SYSTEM_PROMPT) + count_tokens(prompt),
        completion_tokens=count_tokens(completion),
    )


class SyntheticAgent:
    """Seeded synthetic debater. ``script`` forces the answer in given rounds."""

    backend = "synthetic"

    def __init__(self, index: int, params: SyntheticAgentParams, script: Mapping[int, str] | None = None):
        self.index = index
        self.params = params
        self.script = dict(script or {})

    def answer(self, item: QARecord, neighbor_msgs, round: int, rng: random.Random) -> AgentMessage:
        if round in self.script:
            return _proxy_message(item, neighbor_msgs, round, self.index, normalize(self.script[round]), RATIONALE_SCRIPTED)
        return synthetic_answer(self.params, item, neighbor_msgs, rng, round=round, sender=self.index)


@dataclass
class RemoteEndpoint:
    base_url: str
    model: str
    api_key: str | None = None
    temperature: float = 0.7
    max_tokens: int = 512
    timeout: float = 60.0
    max_attempts: int = 3
    backoff: float = 0.5
    max_in_flight: int = 4
    _gate: threading.BoundedSemaphore = field(init=False, repr=False)

    def __post_init__(self):
        if self.api_key is None:
            self.api_key = os.environ.get(API_KEY_ENV)
        self._gate = threading.BoundedSemaphore(max(1, self.max_in_flight))

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + "/v1/chat/completions"


def _first_sentence(text: str) -> str:
    body = _FINAL.split(text)[0].strip()
    m = re.match(r"(.+?[.!?])(\s|$)", body, re.DOTALL)
    s = (m.group(1) if m else body).replace("\n", " ").strip()
    return s[:200]


def request_body(endpoint: RemoteEndpoint, item: QARecord, neighbor_msgs, round: int = 0) -> dict:
    return {
        "model": endpoint.model,
        "messages": [
            {"role": "system", "content": SYSTEM_PROMPT},
            {"role": "user", "content": build_prompt(item, neighbor_msgs, round)},
        ],
        "temperature": endpoint.temperature,
        "max_tokens": endpoint.max_tokens,
    }


def chat_answer(
    endpoint: RemoteEndpoint,
    item: QARecord,
    neighbor_msgs: Sequence[AgentMessage],
    round: int,
    sender: int = 0,
    client: httpx.Client | None = None,
) -> AgentMessage:
    """Ask a chat-completion server for one debate reply.

    Transient failures (connection errors, 429, 5xx) are retried with
    exponential backoff up to ``endpoint.max_attempts`` tries.  A reply with no
    extractable answer comes back as an unparsable message.
    """
    body = request_body(endpoint, item, neighbor_msgs, round)
    headers = {"Content-Type": "application/json"}
    if endpoint.api_key:
        headers["Authorization"] = f"Bearer {endpoint.api_key}"
    own = client is None
    client = client or httpx.Client(timeout=endpoint.timeout)
    try:
        data = _post_with_retry(client, endpoint, body, headers)
    finally:
        if own:
            client.close()

    try:
        content = data["choices"][0]["message"]["content"] or ""
        usage = data.get("usage") or {}
    except (KeyError, IndexError, TypeError) as exc:
        raise AgentFailure(f"malformed chat response: {exc}") from exc
    prompt_tokens = usage.get("prompt_tokens")
    completion_tokens = usage.get("completion_tokens")
    if prompt_tokens is None:
        prompt_tokens = sum(count_tokens(m["content"]) for m in body["messages"])
    if completion_tokens is None:
        completion_tokens = count_tokens(content)

    try:
        answer = parse_reply(content, item)
    except ParseError:
        log.warning("agent %d round %d: unparsable reply for item %s", sender, round, item.id)
        answer = None
    return AgentMessage(
        round=round,
        sender=sender,
        answer=answer,
        rationale=_first_sentence(content),
        prompt_tokens=int(prompt_tokens),
        completion_tokens=int(completion_tokens),
    )


def _post_with_retry(client: httpx.Client, endpoint: RemoteEndpoint, body: dict, headers: dict) -> dict:
    delay = endpoint.backoff
    last: Exception | None = None
    for attempt in range(1, endpoint.max_attempts + 1):
        status = None
        try:
            with endpoint._gate:
                resp = client.post(endpoint.url, json=body, headers=headers)
            status = resp.status_code
            if status == 200:
                return resp.json()
            if status != 429 and status < 500:
                raise HttpError(f"HTTP {status}: {resp.text[:200]}", status)
            last = HttpError(f"HTTP {status}", status)
        except (httpx.TransportError, ValueError) as exc:
            last = exc
        log.info("chat request attempt %d/%d failed: %s", attempt, endpoint.max_attempts, last)
        if attempt < endpoint.max_attempts:
            time.sleep(delay)
            delay *= 2
    status = getattr(last, "status", None)
    raise HttpError(f"chat request failed after {endpoint.max_attempts} attempts: {last}", status)


class RemoteAgent:
    backend = "remote"

    def __init__(self, index: int, endpoint: RemoteEndpoint, client: httpx.Client | None = None):
        self.index = index
        self.endpoint = endpoint
        self.client = client

    def answer(self, item: QARecord, neighbor_msgs, round: int, rng: random.Random | None = None) -> AgentMessage:
        return chat_answer(self.endpoint, item, neighbor_msgs, round, sender=self.index, client=self.client)
