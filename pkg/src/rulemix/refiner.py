"""Rule-set refinement protocol: prompts, fixed-form response parsing, edits.

Refinement runs in two rounds. The adaptation round may rewrite any part of
a rule (operators, thresholds, dropped predicates, even the predicted class)
but may not delete rules; the pruning round may deactivate rules and must
justify each decision. Responses are line-oriented so chatty preambles are
ignored; anything malformed is rejected individually with a cause and never
aborts the batch -- the gating model, not the parser, is the safety net
against bad rules.

Two interchangeable clients sit behind the same ``complete(system, user)``
interface: a deterministic offline stub that emulates observed reviewer
patterns by reading the rules straight out of the prompt, and a remote
chat-completions client with bounded retries.
"""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass, field

import httpx
import numpy as np

from .data import CATEGORICAL, NUMERIC, FeatureSchema
from .rules import (
    OP_EQ,
    OP_GT,
    OP_LE,
    OP_RANGE,
    Predicate,
    Rule,
    RuleParseError,
    RuleSet,
    canonical_text,
    parse_rule,
)

ADAPTATION = "adaptation"
PRUNING = "pruning"

SYSTEM_MESSAGE = (
    "You are a careful domain expert reviewing decision rules for a tabular "
    "classification task. Answer strictly in the requested line format."
)


class RefinementUnavailableError(RuntimeError):
    """The remote refiner could not be reached after all retries."""


@dataclass(frozen=True)
class LlmClientConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4"
    api_key_env: str = "MORE_LLM_API_KEY"
    timeout_s: float = 60.0
    max_retries: int = 2
    temperature: float = 0.0

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise ValueError("timeout must be positive")


@dataclass
class RefinerEdit:
    """One parsed verdict: MODIFY (with replacement text), KEEP, or PRUNE."""

    kind: str  # "modify" | "keep" | "prune"
    rule_id: int
    rule_text: str = ""
    reason: str = ""
    # parsed payload for MODIFY, filled during validation
    predicates: tuple[Predicate, ...] | None = None
    class_index: int | None = None


@dataclass
class RefinementTranscript:
    """Verbatim prompts/responses plus the fate of every edit."""

    adaptation_prompt: str = ""
    adaptation_response: str = ""
    pruning_prompt: str = ""
    pruning_response: str = ""
    applied: list = field(default_factory=list)
    rejected: list = field(default_factory=list)
    error: str = ""

    def to_dict(self) -> dict:
        return {
            "adaptation_prompt": self.adaptation_prompt,
            "adaptation_response": self.adaptation_response,
            "pruning_prompt": self.pruning_prompt,
            "pruning_response": self.pruning_response,
            "applied": self.applied,
            "rejected": self.rejected,
            "error": self.error,
        }


# -- prompt construction -------------------------------------------------------

def _vocabulary_block(schema: FeatureSchema) -> str:
    lines = ["Feature vocabulary (use these names and no others):"]
    for spec in schema.features:
        if spec.kind == NUMERIC:
            lines.append(f"- {spec.name}: numeric; operators: <=, >, in (a, b]")
        else:
            cats = ", ".join(spec.categories)
            lines.append(f"- {spec.name}: categorical; operator: ==; categories: {cats}")
    lines.append("Class labels: " + ", ".join(schema.classes))
    return "\n".join(lines)


def _rules_block(rs: RuleSet, schema: FeatureSchema) -> str:
    # rules already adapted in an earlier round are marked so the reviewer
    # (live or stub) does not re-trim them
    lines = ["Rules under review:"]
    for r in sorted(rs.active_rules(), key=lambda r: r.rule_id):
        marker = " (previously adapted)" if r.llm_adapted else ""
        lines.append(f"RULE {r.rule_id}{marker}: {canonical_text(r, schema)}")
    return "\n".join(lines)


def build_adaptation_prompt(rs: RuleSet, schema: FeatureSchema) -> str:
    """Adaptation-round prompt: full rule set, schema vocabulary, response contract."""
    if not rs.active_rules():
        raise ValueError("cannot build a prompt for an empty rule set")
    return "\n\n".join(
        [
            "Task: align the classification rules below with established domain "
            "knowledge. You may adjust thresholds and operators of numeric "
            "predicates, change categories of categorical predicates, drop "
            "predicates that should not influence the prediction, and change the "
            "predicted class. Deleting an entire rule is forbidden in this step.",
            _rules_block(rs, schema),
            _vocabulary_block(schema),
            "Respond with exactly one verdict line per rule, using only these forms:\n"
            "RULE <id>: KEEP\n"
            "RULE <id>: MODIFY -> IF <condition> THEN <class>\n"
            "After a verdict you may add one justification line:\n"
            "CONTEXT <id>: <one sentence>\n"
            "Do not delete rules. Do not invent features, operators, categories, or classes.",
        ]
    )


def build_pruning_prompt(rs: RuleSet, schema: FeatureSchema) -> str:
    """Pruning-round prompt over the post-adaptation rule set."""
    if not rs.active_rules():
        raise ValueError("cannot build a prompt for an empty rule set")
    return "\n\n".join(
        [
            "Task: review the full rule set below and decide, for every rule, "
            "whether it stays or is removed. Remove rules that are over-specific, "
            "under-complex, misaligned with domain knowledge, or in contradiction "
            "with another rule in the set (then keep the better-aligned rule). "
            "The whole set is shown so you can compare rules against each other.",
            _rules_block(rs, schema),
            _vocabulary_block(schema),
            "Respond with exactly one verdict line per rule, using only these forms:\n"
            "KEEP <id>: <reason>\n"
            "PRUNE <id>: <reason>",
        ]
    )


# -- response parsing ------------------------------------------------------------

_RULE_VERDICT_RE = re.compile(r"^RULE\s+(\d+)\s*:\s*(KEEP|MODIFY\s*->\s*(.+))\s*$")
_CONTEXT_RE = re.compile(r"^CONTEXT\s+(\d+)\s*:\s*(.+)$")
_PRUNE_KEEP_RE = re.compile(r"^(PRUNE|KEEP)\s+(\d+)\s*:\s*(.*)$")
_ADAPT_PRUNE_RE = re.compile(r"^PRUNE\s+(\d+)\s*:")


def parse_response(
    text: str, phase: str, rs: RuleSet, schema: FeatureSchema
) -> tuple[list[RefinerEdit], list[dict]]:
    """Line-oriented parse of a refiner response.

    Returns (edits, rejected). Unmatched lines, unknown rule ids, duplicate
    verdicts, phase violations, and unparseable replacement rules all land in
    the rejected list with a cause; rules without a verdict line implicitly
    stay as they are (KEEP). Never raises on malformed input.
    """
    if phase not in (ADAPTATION, PRUNING):
        raise ValueError(f"unknown phase {phase!r}")
    active_ids = {r.rule_id for r in rs.active_rules()}
    edits: dict[int, RefinerEdit] = {}
    rejected: list[dict] = []

    def reject(line: str, cause: str) -> None:
        rejected.append({"line": line, "cause": cause})

    for raw_line in text.splitlines():
        line = raw_line.strip()
        if not line:
            continue

        if phase == ADAPTATION:
            if _ADAPT_PRUNE_RE.match(line):
                reject(line, "phase violation: rule removal is forbidden during adaptation")
                continue
            m = _CONTEXT_RE.match(line)
            if m:
                rid = int(m.group(1))
                if rid not in active_ids:
                    reject(line, f"unknown rule id {rid}")
                elif rid in edits:
                    edits[rid].reason = m.group(2).strip()
                else:
                    edits[rid] = RefinerEdit(kind="keep", rule_id=rid, reason=m.group(2).strip())
                continue
            m = _RULE_VERDICT_RE.match(line)
            if not m:
                reject(line, "no grammar match")
                continue
            rid = int(m.group(1))
            if rid not in active_ids:
                reject(line, f"unknown rule id {rid}")
                continue
            if rid in edits and edits[rid].kind != "keep":
                reject(line, f"duplicate verdict for rule {rid}")
                continue
            if m.group(2).startswith("KEEP"):
                if rid not in edits:
                    edits[rid] = RefinerEdit(kind="keep", rule_id=rid)
                continue
            rule_text = m.group(3).strip()
            try:
                predicates, class_index = parse_rule(rule_text, schema)
            except RuleParseError as exc:
                reject(line, f"invalid replacement rule: {exc}")
                continue
            reason = edits[rid].reason if rid in edits else ""
            edits[rid] = RefinerEdit(
                kind="modify",
                rule_id=rid,
                rule_text=rule_text,
                reason=reason,
                predicates=predicates,
                class_index=class_index,
            )
        else:
            if line.startswith("RULE "):
                reject(line, "phase violation: only PRUNE/KEEP verdicts are valid during pruning")
                continue
            m = _PRUNE_KEEP_RE.match(line)
            if not m:
                reject(line, "no grammar match")
                continue
            verdict, rid, reason = m.group(1), int(m.group(2)), m.group(3).strip()
            if rid not in active_ids:
                reject(line, f"unknown rule id {rid}")
                continue
            if rid in edits:
                reject(line, f"duplicate verdict for rule {rid}")
                continue
            if verdict == "PRUNE":
                if not reason:
                    reject(line, "PRUNE requires a reason")
                    continue
                edits[rid] = RefinerEdit(kind="prune", rule_id=rid, reason=reason)
            else:
                edits[rid] = RefinerEdit(kind="keep", rule_id=rid, reason=reason)

    return [edits[k] for k in sorted(edits)], rejected


def apply_edits(rs: RuleSet, edits: list[RefinerEdit]) -> RuleSet:
    """Apply validated edits, returning a new rule set; ids never change.

    MODIFY swaps the predicates/class, marks the rule as reviewer-adapted and
    stores the justification; PRUNE deactivates with the reason retrievable
    at explanation time; KEEP stores the reason if one was given.
    """
    out = rs.copy()
    for edit in edits:
        rule = out.get(edit.rule_id)
        if rule is None or not rule.active:
            continue
        if edit.kind == "modify":
            if edit.predicates is None or edit.class_index is None:
                raise ValueError("MODIFY edit was not validated before apply")
            rule.predicates = edit.predicates
            rule.class_index = edit.class_index
            rule.llm_adapted = True
            if edit.reason:
                rule.context = edit.reason
        elif edit.kind == "prune":
            rule.active = False
            rule.context = edit.reason
        elif edit.kind == "keep":
            if edit.reason:
                rule.context = edit.reason
        else:
            raise ValueError(f"unknown edit kind {edit.kind!r}")
    return out


def refine(rs: RuleSet, schema: FeatureSchema, client) -> tuple[RuleSet, RefinementTranscript]:
    """Adaptation round-trip, apply, then pruning round-trip, apply.

    Transport failures surface as RefinementUnavailableError; the caller
    decides whether to degrade or abort.
    """
    transcript = RefinementTranscript()
    transcript.adaptation_prompt = build_adaptation_prompt(rs, schema)
    transcript.adaptation_response = client.complete(SYSTEM_MESSAGE, transcript.adaptation_prompt)
    edits, rejected = parse_response(transcript.adaptation_response, ADAPTATION, rs, schema)
    transcript.applied.extend(_edit_record(ADAPTATION, e) for e in edits)
    transcript.rejected.extend({"phase": ADAPTATION, **r} for r in rejected)
    adapted = apply_edits(rs, edits)

    if adapted.active_rules():
        transcript.pruning_prompt = build_pruning_prompt(adapted, schema)
        transcript.pruning_response = client.complete(SYSTEM_MESSAGE, transcript.pruning_prompt)
        edits, rejected = parse_response(transcript.pruning_response, PRUNING, adapted, schema)
        transcript.applied.extend(_edit_record(PRUNING, e) for e in edits)
        transcript.rejected.extend({"phase": PRUNING, **r} for r in rejected)
        adapted = apply_edits(adapted, edits)
    return adapted, transcript


def _edit_record(phase: str, edit: RefinerEdit) -> dict:
    return {
        "phase": phase,
        "kind": edit.kind,
        "rule_id": edit.rule_id,
        "rule_text": edit.rule_text,
        "reason": edit.reason,
    }


# -- deterministic stub ------------------------------------------------------------

def _round_sig2(v: float) -> float:
    return float(f"{v:.2g}")


def _stub_adapt_rule(rule: Rule, schema: FeatureSchema) -> tuple[Rule, list[str]] | None:
    """The stub's adaptation of one rule, or None when nothing changes."""
    notes = []
    preds = list(rule.predicates)
    if len(preds) > 3 and not rule.llm_adapted:
        preds = preds[:-1]
        notes.append("dropped the least informative predicate to reduce over-specificity")
    rounded = []
    changed_round = False
    for p in preds:
        if p.op in (OP_LE, OP_GT):
            t = _round_sig2(p.threshold)
            if t != p.threshold:
                changed_round = True
            rounded.append(Predicate(p.feature, p.op, threshold=t))
        elif p.op == OP_RANGE:
            lo, hi = _round_sig2(p.low), _round_sig2(p.high)
            if lo < hi and (lo != p.low or hi != p.high):
                changed_round = True
                rounded.append(Predicate(p.feature, OP_RANGE, low=lo, high=hi))
            else:
                rounded.append(p)
        else:
            rounded.append(p)
    if changed_round:
        notes.append("rounded thresholds to two significant digits for interpretability")
    if not notes:
        return None
    new_rule = rule.copy()
    new_rule.predicates = tuple(rounded)
    return new_rule, notes


def stub_refine(rs: RuleSet, schema: FeatureSchema, phase: str) -> list[RefinerEdit]:
    """Deterministic refiner emulating common reviewer patterns.

    Adaptation: trims one predicate off over-long rules it has not reviewed
    before and rounds numeric thresholds to two significant digits; classes
    and features are never touched. Pruning: of any two rules with identical
    predicate sets but different classes, the higher id is removed as a
    contradiction. Both passes are no-ops on their own output.
    """
    edits: list[RefinerEdit] = []
    active = sorted(rs.active_rules(), key=lambda r: r.rule_id)
    if phase == ADAPTATION:
        for rule in active:
            adapted = _stub_adapt_rule(rule, schema)
            if adapted is None:
                edits.append(RefinerEdit(kind="keep", rule_id=rule.rule_id))
                continue
            new_rule, notes = adapted
            edits.append(
                RefinerEdit(
                    kind="modify",
                    rule_id=rule.rule_id,
                    rule_text=canonical_text(new_rule, schema),
                    reason="Adapted rule: " + "; ".join(notes) + ".",
                    predicates=new_rule.predicates,
                    class_index=new_rule.class_index,
                )
            )
        return edits

    if phase != PRUNING:
        raise ValueError(f"unknown phase {phase!r}")
    first_by_key: dict[tuple, Rule] = {}
    for rule in active:
        key = rule.canonical_key()
        holder = first_by_key.setdefault(key, rule)
        if holder is not rule and holder.class_index != rule.class_index:
            edits.append(
                RefinerEdit(
                    kind="prune",
                    rule_id=rule.rule_id,
                    reason=f"contradicts rule {holder.rule_id}",
                )
            )
        else:
            edits.append(
                RefinerEdit(
                    kind="keep",
                    rule_id=rule.rule_id,
                    reason="consistent with the rest of the rule set",
                )
            )
    return edits


_PROMPT_RULE_RE = re.compile(
    r"^RULE\s+(\d+)(?P<adapted> \(previously adapted\))?\s*:\s*(IF .+)$", re.MULTILINE
)


class StubChatClient:
    """Offline stand-in for the remote reviewer.

    Reads the rule set back out of the prompt text, runs the deterministic
    stub logic, and answers in the response grammar -- so training code sees
    exactly the same interface and message flow as with a live endpoint.
    """

    def __init__(self, schema: FeatureSchema):
        self.schema = schema

    def _ruleset_from_prompt(self, prompt: str) -> RuleSet:
        rules = []
        max_id = -1
        for m in _PROMPT_RULE_RE.finditer(prompt):
            rid = int(m.group(1))
            try:
                predicates, class_index = parse_rule(m.group(3).strip(), self.schema)
            except RuleParseError:
                continue
            rules.append(
                Rule(
                    rule_id=rid,
                    predicates=predicates,
                    class_index=class_index,
                    anchor=np.zeros(self.schema.n_features),
                    precision_estimate=1.0,
                    llm_adapted=m.group("adapted") is not None,
                )
            )
            max_id = max(max_id, rid)
        return RuleSet(rules=rules, next_id=max_id + 1)

    def complete(self, system: str, user: str) -> str:
        phase = ADAPTATION if "MODIFY ->" in user else PRUNING
        rs = self._ruleset_from_prompt(user)
        edits = stub_refine(rs, self.schema, phase)
        lines = []
        for e in edits:
            if phase == ADAPTATION:
                if e.kind == "modify":
                    lines.append(f"RULE {e.rule_id}: MODIFY -> {e.rule_text}")
                    lines.append(f"CONTEXT {e.rule_id}: {e.reason}")
                else:
                    lines.append(f"RULE {e.rule_id}: KEEP")
            else:
                verdict = "PRUNE" if e.kind == "prune" else "KEEP"
                lines.append(f"{verdict} {e.rule_id}: {e.reason}")
        return "\n".join(lines) + "\n"


class RemoteChatClient:
    """Chat-completions client with bounded retries and exponential backoff.

    The bearer token comes from the environment variable named in the config
    and is never persisted anywhere.
    """

    def __init__(self, config: LlmClientConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self._client = httpx.Client(timeout=config.timeout_s, transport=transport)
        self._sleep = time.sleep

    def complete(self, system: str, user: str) -> str:
        key = os.environ.get(self.config.api_key_env)
        if not key:
            raise RefinementUnavailableError(
                f"environment variable {self.config.api_key_env} is not set"
            )
        payload = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.config.temperature,
        }
        last_error = "no attempt made"
        for attempt in range(self.config.max_retries + 1):
            if attempt > 0:
                self._sleep(1.0 * 2 ** (attempt - 1))
            try:
                resp = self._client.post(
                    self.config.endpoint,
                    json=payload,
                    headers={"Authorization": f"Bearer {key}"},
                )
                resp.raise_for_status()
                body = resp.json()
                return str(body["choices"][0]["message"]["content"])
            except (httpx.HTTPError, KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
                last_error = f"{type(exc).__name__}: {exc}"
        raise RefinementUnavailableError(
            f"refinement endpoint failed after {self.config.max_retries + 1} attempts ({last_error})"
        )
