"""Agent backend abstraction.

A backend is driven one agentic cycle at a time. Each call receives the
whole request (system prompt, session history, round input and the tool
results gathered so far this round) and answers with either the next
action or the final structured payload::

    {"action": {"tool": "read_file", "path": "shared/metrics.json"}}
    {"final": {...role payload...}}

An optional ``"usage"`` object reports ``tokens_in``, ``tokens_out`` and
``cost`` for the call.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Any

import httpx

from forage.errors import BackendDown, BackendError

TOOLS = ("read_file", "write_file", "list_dir")

ENDPOINT_ENV = "FORAGE_LLM_ENDPOINT"
API_KEY_ENV = "FORAGE_LLM_API_KEY"


class BackendKind(str, enum.Enum):
    LLM_ENDPOINT = "llm_endpoint"
    SCRIPTED_SIM = "scripted_sim"


@dataclass
class BackendRequest:
    role: str
    phase: str  # "round" or "postmortem"
    round_no: int
    turn: int
    max_turns: int
    system_prompt: str
    history: list[dict[str, Any]]
    round_input: str
    tool_results: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class AgentBackend:
    """Base class. Subclasses implement :meth:`step`."""

    kind: BackendKind = BackendKind.SCRIPTED_SIM

    def __init__(self, model_id: str = "", effort_hint: str = ""):
        self.model_id = model_id
        self.effort_hint = effort_hint

    def ping(self) -> None:
        """Raise :class:`BackendDown` if the backend cannot take requests."""

    def step(self, request: BackendRequest) -> dict[str, Any]:
        raise NotImplementedError

    def describe(self) -> dict[str, str]:
        return {"kind": self.kind.value, "model_id": self.model_id, "effort_hint": self.effort_hint}


class LLMEndpointBackend(AgentBackend):
    """Talks to an HTTP endpoint that wraps a hosted model.

    The endpoint receives the JSON-serialized :class:`BackendRequest` plus
    ``model`` and ``effort`` keys and must answer with an action or final
    document as described in the module docstring.
    """

    kind = BackendKind.LLM_ENDPOINT

    def __init__(
        self,
        model_id: str,
        effort_hint: str = "medium",
        endpoint: str | None = None,
        api_key: str | None = None,
        timeout: float = 600.0,
        transport: httpx.BaseTransport | None = None,
    ):
        super().__init__(model_id, effort_hint)
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV, "")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        if not self.endpoint:
            raise BackendDown(f"no endpoint configured; set {ENDPOINT_ENV}")
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        self._client = httpx.Client(base_url=self.endpoint, headers=headers, timeout=timeout, transport=transport)

    def ping(self) -> None:
        try:
            resp = self._client.get("/health")
        except httpx.HTTPError as exc:
            raise BackendDown(f"{self.endpoint}: {exc}") from None
        if resp.status_code >= 400:
            raise BackendDown(f"{self.endpoint}: health check returned {resp.status_code}")

    def step(self, request: BackendRequest) -> dict[str, Any]:
        body = request.to_dict()
        body["model"] = self.model_id
        body["effort"] = self.effort_hint
        try:
            resp = self._client.post("/step", json=body)
            resp.raise_for_status()
            doc = resp.json()
        except (httpx.HTTPError, json.JSONDecodeError) as exc:
            raise BackendError(f"{self.endpoint}: {exc}") from None
        if not isinstance(doc, dict) or not ("action" in doc or "final" in doc):
            raise BackendError(f"{self.endpoint}: response has neither 'action' nor 'final'")
        return doc

    def close(self) -> None:
        self._client.close()
