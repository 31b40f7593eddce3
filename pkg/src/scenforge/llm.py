"""Free text to scenario documents.

Two routes: a remote chat-completion endpoint fed with a templated prompt, or
an offline phrase matcher that needs no network. Both produce DSL text that is
then parsed, so a bad completion surfaces as a :class:`DslError`.
"""

from __future__ import annotations

import dataclasses
import json
import os
import re
import socket
import time
import urllib.error
import urllib.request
import zlib
from dataclasses import dataclass

from .dsl import ScenarioSpec, describe_registry, parse

__all__ = [
    "AuthError",
    "DEFAULT_TEMPLATE",
    "EmptyCompletion",
    "GatewayConfig",
    "GatewayError",
    "GatewayTimeout",
    "NetworkError",
    "PLACEHOLDER",
    "PromptTemplate",
    "build_prompt",
    "config_from_env",
    "match_intent",
    "query_remote",
]

PLACEHOLDER = "{USER QUERY}"


class GatewayError(RuntimeError):
    pass


class NetworkError(GatewayError):
    pass


class AuthError(GatewayError):
    pass


class GatewayTimeout(GatewayError):
    pass


class EmptyCompletion(GatewayError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    preamble: str
    instruction: str

    def __post_init__(self):
        n = self.instruction.count(PLACEHOLDER)
        if n != 1:
            raise ValueError(f"instruction must contain {PLACEHOLDER} exactly once (found {n})")


# Non-normative wording; the library listing is generated from the registry.
DEFAULT_TEMPLATE = PromptTemplate(
    preamble=(
        "You write driving scenarios in a small line-oriented language. "
        "Each agent calls one library function with key=value parameters.\n"
        "Statements: scenario <name> | seed <int> | env <tags> | ego: <fn> k=v | "
        "agent <id>: <vehicle|pedestrian> <fn> k=v | save <kind> <path>\n"
        "Library:\n" + describe_registry()
    ),
    instruction=(
        "Write the scenario for this request and reply with the document only.\n"
        "Request: " + PLACEHOLDER
    ),
)


def build_prompt(template: PromptTemplate, query: str) -> str:
    """Template text with the placeholder replaced by ``query`` verbatim."""
    if template.instruction.count(PLACEHOLDER) != 1:
        raise ValueError(f"instruction must contain {PLACEHOLDER} exactly once")
    head, tail = template.instruction.split(PLACEHOLDER)
    return template.preamble + "\n\n" + head + query + tail


@dataclass(frozen=True)
class GatewayConfig:
    base_url: str
    model: str = "scenario-writer"
    token_env: str = "SCENFORGE_LLM_KEY"
    timeout: float = 30.0
    retries: int = 2

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValueError("timeout must be > 0")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")
        if not self.base_url:
            raise ValueError("base_url is empty")


def config_from_env(env=None) -> GatewayConfig:
    env = os.environ if env is None else env
    url = env.get("SCENFORGE_LLM_URL", "")
    if not url:
        raise AuthError("SCENFORGE_LLM_URL is not set")
    return GatewayConfig(base_url=url, model=env.get("SCENFORGE_LLM_MODEL", "scenario-writer"))


def _endpoint(base: str) -> str:
    base = base.rstrip("/")
    return base if base.endswith("/chat/completions") else base + "/chat/completions"


def query_remote(config: GatewayConfig, prompt: str, backoff: float = 0.2) -> str:
    """POST ``prompt`` as a single user message and return the completion text.

    The token is read from ``config.token_env`` before any request is made.
    Network failures and timeouts are retried ``config.retries`` times; auth
    rejections (401/403) are not.
    """
    token = os.environ.get(config.token_env)
    if not token:
        raise AuthError(f"environment variable {config.token_env} is not set")
    body = json.dumps({
        "model": config.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": 0,
    }).encode()
    last: GatewayError | None = None
    for attempt in range(config.retries + 1):
        if attempt:
            time.sleep(backoff * attempt)
        req = urllib.request.Request(
            _endpoint(config.base_url), data=body, method="POST",
            headers={"Content-Type": "application/json", "Authorization": f"Bearer {token}"})
        try:
            with urllib.request.urlopen(req, timeout=config.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as e:
            if e.code in (401, 403):
                raise AuthError(f"endpoint rejected credentials (HTTP {e.code})") from e
            last = NetworkError(f"HTTP {e.code} from {config.base_url}")
            continue
        except (socket.timeout, TimeoutError):
            last = GatewayTimeout(f"no response within {config.timeout} s")
            continue
        except urllib.error.URLError as e:
            if isinstance(e.reason, (socket.timeout, TimeoutError)):
                last = GatewayTimeout(f"no response within {config.timeout} s")
            else:
                last = NetworkError(f"cannot reach {config.base_url}: {e.reason}")
            continue
        except (OSError, ValueError) as e:
            last = NetworkError(f"bad response from {config.base_url}: {e}")
            continue
        try:
            text = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            text = None
        if not text or not str(text).strip():
            raise EmptyCompletion("endpoint returned an empty completion")
        return str(text)
    assert last is not None
    raise type(last)(f"{last} (after {config.retries + 1} attempts)")


# ------------------------------------------------------------ offline matcher

# (phrase, statement builder). Checked longest phrase first.
_RULES: list[tuple[str, str]] = [
    ("cut in", "agent {vid}: vehicle cut_in target=ego"),
    ("cuts in", "agent {vid}: vehicle cut_in target=ego"),
    ("cutting in", "agent {vid}: vehicle cut_in target=ego"),
    ("crosses the road", "agent {pid}: pedestrian pedestrian_cross"),
    ("crossing the road", "agent {pid}: pedestrian pedestrian_cross"),
    ("cross the road", "agent {pid}: pedestrian pedestrian_cross"),
    ("changes lane", "ego: lane_change_{side}"),
    ("change lane", "ego: lane_change_{side}"),
    ("changing lane", "ego: lane_change_{side}"),
    ("u-turn", "ego: u_turn"),
    ("u turn", "ego: u_turn"),
    ("overtakes", "agent {vid}: vehicle overtake target=ego"),
    ("overtake", "agent {vid}: vehicle overtake target=ego"),
    ("follows", "agent {vid}: vehicle follow target=ego"),
    ("following", "agent {vid}: vehicle follow target=ego"),
    ("brakes", "ego: brake"),
    ("braking", "ego: brake"),
    ("accelerates", "ego: accelerate"),
    ("speeds up", "ego: accelerate"),
    ("stops", "ego: stop"),
    ("walks", "agent {pid}: pedestrian pedestrian_walk"),
]
_RULES.sort(key=lambda r: -len(r[0]))

_ENV_WORDS = {"rain": "rain", "rainy": "rain", "raining": "rain", "night": "night",
              "daytime": "daytime", "sunny": "sunny"}


def _normalize(query: str) -> str:
    return " ".join(re.sub(r"[^a-z0-9\- ]+", " ", query.lower()).split())


def match_intent(query: str) -> ScenarioSpec:
    """Deterministic phrase rules from a query to a parsed scenario.

    Unrecognized queries give a forward-driving ego and a warning.
    """
    text = _normalize(query)
    padded = f" {text} "
    words = set(text.split())
    side = "right" if "right" in words else "left"
    ego = None
    kinds: list[str] = []
    taken: list[tuple[int, int]] = []
    for phrase, stmt in _RULES:
        for m in re.finditer(rf"(?<= ){re.escape(phrase)}(?= )", padded):
            span = (m.start(), m.end())
            if any(a < span[1] and span[0] < b for a, b in taken):
                continue
            taken.append(span)
            if stmt.startswith("ego:"):
                ego = ego or stmt.format(side=side)
            elif stmt not in kinds:
                kinds.append(stmt)
    agents, nv, np_ = [], 0, 0
    for stmt in kinds:
        if "{vid}" in stmt:
            nv += 1
        else:
            np_ += 1
        agents.append(stmt.format(vid=f"a{nv}", pid=f"p{np_}"))
    tags = sorted({tag for w, tag in _ENV_WORDS.items() if w in words})
    seed = zlib.crc32(text.encode("utf-8"))
    lines = ["scenario prompt", f"seed {seed}"]
    if tags:
        lines.append("env " + " ".join(tags))
    lines.append(ego or "ego: forward")
    lines.extend(agents)
    spec = parse("\n".join(lines) + "\n")
    if ego is None and not agents:
        spec = dataclasses.replace(
            spec, warnings=spec.warnings + (f"no maneuver recognized in {query!r}; using ego forward",))
    return spec
