"""Scenario runner: provisions owners and devices, drives handshakes over
simulated links, and reports sizes, frames, and outcomes.

Scenario files are structured text. Every step carries an `expect` field, so
scenarios double as self-checking fixtures; expectations match outcomes by
prefix ("untrusted" matches "untrusted(owner mismatch)"). Runs are
deterministic under the scenario seed: keys, salts, nonces, and link noise
all derive from it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from random import Random
from typing import Any

from . import crypto
from .credentials import Claim, RevocationRegistry, issue, revoke
from .encoding import from_canonical, EncodingError
from .handshake import (
    AlwaysTrust,
    HandshakeSession,
    OwnerMatch,
    RequireClaim,
    SessionConfig,
    State,
    TrustPolicy,
    initiate,
    respond,
)
from .identity import (
    Did,
    DidDocument,
    METHOD_PEER,
    METHOD_REG,
    PublicKeyEntry,
    ServiceEndpoint,
    format_did,
    generate_peer_did,
    parse_did,
    rotate_key,
)
from .resolver import Registry, ResolutionError, Resolver, registered_did_for
from .transport import DeliveryError, Messenger, PROFILES, make_link
from .wallet import Wallet

EPOCH = 1_700_000_000
MAX_LEGS = 64


class ScenarioError(Exception):
    """Scenario failed validation before execution."""


# ---------------------------------------------------------------------------
# Scenario model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioActor:
    name: str
    role: str                 # "owner" | "device"
    did_method: str           # "peer" | "reg"
    owner: str | None = None  # actor reference


@dataclass(frozen=True)
class ScenarioCredential:
    issuer: str
    subject: str
    claims: dict[str, str]
    validity: int


@dataclass(frozen=True)
class ScenarioLink:
    a: str
    b: str
    profile: str
    loss: float | None = None
    reorder: float | None = None


@dataclass(frozen=True)
class ScenarioStep:
    action: str
    params: dict[str, Any]
    expect: str | None = None


@dataclass
class Scenario:
    actors: list[ScenarioActor]
    credentials: list[ScenarioCredential] = field(default_factory=list)
    links: list[ScenarioLink] = field(default_factory=list)
    steps: list[ScenarioStep] = field(default_factory=list)
    seed: int = 0
    name: str = "scenario"

    @classmethod
    def from_mapping(cls, mapping: Any) -> "Scenario":
        if not isinstance(mapping, dict):
            raise ScenarioError("scenario must be a mapping")
        try:
            actors = [
                ScenarioActor(
                    name=a["name"],
                    role=a["role"],
                    did_method=a.get("did_method", METHOD_PEER),
                    owner=a.get("owner"),
                )
                for a in mapping.get("actors", [])
            ]
            credentials = [
                ScenarioCredential(
                    issuer=c["issuer"],
                    subject=c["subject"],
                    claims=dict(c["claims"]),
                    validity=c.get("validity", 30 * 24 * 3600),
                )
                for c in mapping.get("credentials", [])
            ]
            links = [
                ScenarioLink(
                    a=l["a"],
                    b=l["b"],
                    profile=l.get("profile", "lossless"),
                    loss=l.get("loss"),
                    reorder=l.get("reorder"),
                )
                for l in mapping.get("links", [])
            ]
            steps = [
                ScenarioStep(
                    action=s["action"],
                    params={k: v for k, v in s.items() if k not in ("action", "expect")},
                    expect=s.get("expect"),
                )
                for s in mapping.get("steps", [])
            ]
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"malformed scenario: {exc}") from exc
        return cls(
            actors=actors,
            credentials=credentials,
            links=links,
            steps=steps,
            seed=mapping.get("seed", 0),
            name=mapping.get("name", "scenario"),
        )

    @classmethod
    def load(cls, path: str) -> "Scenario":
        with open(path, "rb") as fh:
            raw = fh.read()
        try:
            return cls.from_mapping(from_canonical(raw))
        except EncodingError as exc:
            raise ScenarioError(f"cannot parse scenario file: {exc}") from exc

    def validate(self) -> list[str]:
        problems: list[str] = []
        names = [a.name for a in self.actors]
        if len(names) != len(set(names)):
            problems.append("duplicate actor names")
        known = set(names)
        for actor in self.actors:
            if actor.role not in ("owner", "device"):
                problems.append(f"actor {actor.name!r}: unknown role {actor.role!r}")
            if actor.did_method not in (METHOD_PEER, METHOD_REG):
                problems.append(
                    f"actor {actor.name!r}: unknown did method {actor.did_method!r}"
                )
            if actor.owner is not None and actor.owner not in known:
                problems.append(f"actor {actor.name!r}: unknown owner {actor.owner!r}")
        for i, cred in enumerate(self.credentials):
            for ref in (cred.issuer, cred.subject):
                if ref not in known:
                    problems.append(f"credential {i}: unknown actor {ref!r}")
            if cred.validity <= 0:
                problems.append(f"credential {i}: validity must be positive")
            for value in cred.claims.values():
                if value.startswith("@") and value[1:] not in known:
                    problems.append(f"credential {i}: unknown actor reference {value!r}")
        for i, link in enumerate(self.links):
            for ref in (link.a, link.b):
                if ref not in known:
                    problems.append(f"link {i}: unknown actor {ref!r}")
            if link.profile not in PROFILES:
                problems.append(f"link {i}: unknown profile {link.profile!r}")
        for i, step in enumerate(self.steps):
            problems.extend(self._validate_step(i, step, known))
        return problems

    def _validate_step(self, i: int, step: ScenarioStep, known: set[str]) -> list[str]:
        problems = []
        p = step.params
        if step.action == "handshake":
            for key in ("initiator", "responder"):
                if p.get(key) not in known:
                    problems.append(f"step {i}: unknown actor {p.get(key)!r}")
            link_index = p.get("link", 0)
            if not self.links or not (0 <= link_index < len(self.links)):
                problems.append(f"step {i}: link index {link_index} out of range")
            else:
                link = self.links[link_index]
                if {p.get("initiator"), p.get("responder")} != {link.a, link.b}:
                    problems.append(
                        f"step {i}: link {link_index} does not join "
                        f"{p.get('initiator')!r} and {p.get('responder')!r}"
                    )
            policy = p.get("policy", "owner-match")
            if isinstance(policy, str):
                if policy not in ("owner-match", "always-trust"):
                    problems.append(f"step {i}: unknown policy {policy!r}")
                elif policy == "owner-match":
                    for key in ("initiator", "responder"):
                        actor = next(
                            (a for a in self.actors if a.name == p.get(key)), None
                        )
                        if actor is not None and actor.owner is None:
                            problems.append(
                                f"step {i}: {actor.name!r} has no owner for owner-match"
                            )
            elif not (isinstance(policy, dict) and {"name", "value"} <= set(policy)):
                problems.append(f"step {i}: malformed policy {policy!r}")
        elif step.action == "resolve":
            if p.get("actor") not in known:
                problems.append(f"step {i}: unknown actor {p.get('actor')!r}")
            target = p.get("target", "")
            if target.startswith("@") and target[1:] not in known:
                problems.append(f"step {i}: unknown target {target!r}")
        elif step.action == "revoke":
            if p.get("issuer") not in known:
                problems.append(f"step {i}: unknown actor {p.get('issuer')!r}")
            index = p.get("credential", -1)
            if not (0 <= index < len(self.credentials)):
                problems.append(f"step {i}: credential index {index} out of range")
            elif self.credentials[index].issuer != p.get("issuer"):
                problems.append(f"step {i}: credential {index} was not issued by "
                                f"{p.get('issuer')!r}")
        elif step.action == "rotate":
            if p.get("actor") not in known:
                problems.append(f"step {i}: unknown actor {p.get('actor')!r}")
        else:
            problems.append(f"step {i}: unknown action {step.action!r}")
        return problems


# ---------------------------------------------------------------------------
# Provisioning
# ---------------------------------------------------------------------------

def _seed_bytes(*parts: Any) -> bytes:
    return crypto.digest(":".join(str(p) for p in parts).encode("utf-8"))


def _seed_int(*parts: Any) -> int:
    return int.from_bytes(_seed_bytes(*parts)[:8], "big")


@dataclass
class ProvisionedActor:
    spec: ScenarioActor
    did: Did
    document: DidDocument
    wallet: Wallet
    sign_key: crypto.KeyPair
    resolver: Resolver
    revocation: RevocationRegistry


class Deployment:
    """All actors provisioned and able to reach each other's documents."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.registry = Registry()
        self.actors: dict[str, ProvisionedActor] = {}
        self.issued_ids: list[str] = []
        self.now = EPOCH
        for actor in scenario.actors:
            self.actors[actor.name] = self._provision(actor)
        self._distribute_documents()
        for cred in scenario.credentials:
            self._issue(cred)

    def _provision(self, actor: ScenarioActor) -> ProvisionedActor:
        sign_key = crypto.keygen(
            crypto.PURPOSE_SIGN, seed=_seed_bytes(self.scenario.seed, actor.name, "sign")
        )
        agree_key = crypto.keygen(
            crypto.PURPOSE_AGREE, seed=_seed_bytes(self.scenario.seed, actor.name, "agree")
        )
        keys = (
            PublicKeyEntry(sign_key.key_id, crypto.PURPOSE_SIGN, sign_key.public),
            PublicKeyEntry(agree_key.key_id, crypto.PURPOSE_AGREE, agree_key.public),
        )
        endpoints = (
            ServiceEndpoint("ep-1", "sim-link", f"sim-link://{actor.name}"),
        )
        if actor.did_method == METHOD_PEER:
            did, document = generate_peer_did(keys, endpoints)
        else:
            did = registered_did_for(sign_key.public, actor.name)
            document = DidDocument(id=did, public_keys=keys, service_endpoints=endpoints)
            self.registry.register(document, sign_key)
        wallet = Wallet()
        wallet.put_key(sign_key)
        wallet.put_key(agree_key)
        wallet.put_document(document)
        return ProvisionedActor(
            spec=actor,
            did=did,
            document=document,
            wallet=wallet,
            sign_key=sign_key,
            resolver=Resolver(self.registry),
            revocation=RevocationRegistry(did),
        )

    def _distribute_documents(self) -> None:
        # Desk-scale bootstrap: peer documents are handed around directly.
        for holder in self.actors.values():
            for other in self.actors.values():
                if other.did.method == METHOD_PEER:
                    holder.resolver.store_peer(other.did, other.document)

    def _expand(self, value: str) -> str:
        if value.startswith("@"):
            return format_did(self.actors[value[1:]].did)
        return value

    def _issue(self, cred: ScenarioCredential) -> None:
        issuer = self.actors[cred.issuer]
        subject = self.actors[cred.subject]
        claims = [Claim(name, self._expand(value)) for name, value in cred.claims.items()]
        rng = Random(_seed_int(self.scenario.seed, "issue", len(self.issued_ids)))
        vc, openings = issue(
            issuer.sign_key, issuer.did, subject.did, claims, cred.validity,
            now=self.now, rng=rng,
        )
        subject.wallet.put_credential(vc, openings)
        self.issued_ids.append(vc.vc_id)

    def policy_for(self, actor: ProvisionedActor, policy_spec: Any) -> TrustPolicy:
        if isinstance(policy_spec, dict):
            return RequireClaim(
                name=policy_spec["name"], value=self._expand(policy_spec["value"])
            )
        if policy_spec == "always-trust":
            return AlwaysTrust()
        if policy_spec == "owner-match":
            assert actor.spec.owner is not None
            return OwnerMatch(my_owner=self.actors[actor.spec.owner].did)
        raise ScenarioError(f"unknown policy {policy_spec!r}")

    def session_config(
        self, actor: ProvisionedActor, policy: TrustPolicy, rng: Random
    ) -> SessionConfig:
        revocation = None
        if isinstance(policy, OwnerMatch):
            owner = next(
                (a for a in self.actors.values() if a.did == policy.my_owner), None
            )
            revocation = owner.revocation if owner else None
        return SessionConfig(
            did=actor.did,
            document=actor.wallet.current_document or actor.document,
            sign_key=actor.sign_key,
            resolver=actor.resolver,
            policy=policy,
            credentials=tuple(actor.wallet.credentials.values()),
            revocation=revocation,
            rng=rng,
        )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class StepMetrics:
    action: str
    outcome: str
    expect: str | None
    matched: bool
    bytes_sent: int = 0
    frames: int = 0
    fragments_per_message: list[int] = field(default_factory=list)
    round_trips: int = 0
    retransmissions: int = 0

    def to_mapping(self) -> dict[str, Any]:
        return {
            "action": self.action,
            "outcome": self.outcome,
            "expect": self.expect,
            "matched": self.matched,
            "bytes_sent": self.bytes_sent,
            "frames": self.frames,
            "fragments_per_message": self.fragments_per_message,
            "round_trips": self.round_trips,
            "retransmissions": self.retransmissions,
        }


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    ddo_bytes: dict[str, int]
    vc_bytes: list[int]
    steps: list[StepMetrics] = field(default_factory=list)

    def all_matched(self) -> bool:
        return all(s.matched for s in self.steps)

    def to_mapping(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "document_sizes": {"ddo_bytes": self.ddo_bytes, "vc_bytes": self.vc_bytes},
            "steps": [s.to_mapping() for s in self.steps],
        }

    def to_json_bytes(self) -> bytes:
        return (json.dumps(self.to_mapping(), sort_keys=True, indent=2) + "\n").encode()

    def summary_lines(self) -> list[str]:
        lines = [f"scenario {self.scenario} (seed {self.seed})"]
        for name, size in sorted(self.ddo_bytes.items()):
            lines.append(f"  ddo {name}: {size} bytes")
        for i, size in enumerate(self.vc_bytes):
            lines.append(f"  vc {i}: {size} bytes")
        header = (
            f"  {'step':<12} {'outcome':<28} {'bytes':>7} {'frames':>7} "
            f"{'rts':>4} {'retx':>5} match"
        )
        lines.append(header)
        for s in self.steps:
            lines.append(
                f"  {s.action:<12} {s.outcome:<28} {s.bytes_sent:>7} {s.frames:>7} "
                f"{s.round_trips:>4} {s.retransmissions:>5} "
                f"{'yes' if s.matched else 'NO'}"
            )
        return lines


def _outcome_matches(outcome: str, expect: str | None) -> bool:
    if expect is None:
        return True
    return outcome.startswith(expect)


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

@dataclass
class HandshakeRun:
    """Everything observable from driving one handshake over one link."""

    initiator: HandshakeSession
    responder: HandshakeSession
    legs: int = 0
    legs_to_secure: int | None = None
    legs_to_terminal: int | None = None
    fragments_per_message: list[int] = field(default_factory=list)
    frames_sent: int = 0
    retransmissions: int = 0
    delivery_failed: bool = False

    def outcome(self) -> str:
        if self.delivery_failed:
            return "delivery-failed"
        for session in (self.initiator, self.responder):
            if session.state == State.FAILED:
                reason = session.failure_reason or "unknown"
                if reason.startswith("peer"):
                    continue
                return f"failed({reason})"
        if self.initiator.state == State.FAILED or self.responder.state == State.FAILED:
            return "failed(peer)"
        if (
            self.initiator.state == State.TRUSTED
            and self.responder.state == State.TRUSTED
        ):
            return "trusted"
        for session in (self.initiator, self.responder):
            if session.state == State.UNTRUSTED:
                reason = (session.my_verdict.reason if session.my_verdict else None) or "policy"
                return f"untrusted({reason})"
        return f"stalled({self.initiator.state.value}/{self.responder.state.value})"

    def round_trips_to_secure(self) -> int | None:
        if self.legs_to_secure is None:
            return None
        return (self.legs_to_secure + 1) // 2

    def round_trips_to_terminal(self) -> int | None:
        if self.legs_to_terminal is None:
            return None
        return (self.legs_to_terminal + 1) // 2


_TERMINAL = frozenset({State.TRUSTED, State.UNTRUSTED, State.FAILED})
_SECURE_OR_LATER = frozenset(
    {State.SECURE, State.CREDENTIALS_EXCHANGED, State.TRUSTED, State.UNTRUSTED}
)


def drive_handshake(
    link, initiator: HandshakeSession, first_message: bytes,
    responder: HandshakeSession, now: int, intercept=None,
) -> HandshakeRun:
    """Alternate message batches between the two sessions over the link.

    `intercept(receiver_role, message) -> message` models an on-path attacker:
    it may rewrite any message after reassembly, before the receiver steps it.
    """
    a, b = link.endpoints
    messengers = {a: Messenger(link, a), b: Messenger(link, b)}
    sessions = {a: initiator, b: responder}
    run = HandshakeRun(initiator=initiator, responder=responder)
    outbox: list[bytes] = [first_message]
    sender = a
    while outbox and run.legs < MAX_LEGS:
        run.legs += 1
        receiver_name = b if sender == a else a
        replies: list[bytes] = []
        for message in outbox:
            try:
                report = messengers[sender].send(message)
            except DeliveryError:
                run.delivery_failed = True
                return run
            run.fragments_per_message.append(report.fragments)
            run.frames_sent += report.frames_sent
            run.retransmissions += report.retransmissions
            received = messengers[receiver_name].receive()
            if received is None:
                run.delivery_failed = True
                return run
            if intercept is not None:
                received = intercept(sessions[receiver_name].role, received)
            replies.extend(sessions[receiver_name].step(received, now))
        if run.legs_to_secure is None and all(
            s.state in _SECURE_OR_LATER for s in sessions.values()
        ):
            run.legs_to_secure = run.legs
        if run.legs_to_terminal is None and all(
            s.state in _TERMINAL for s in sessions.values()
        ):
            run.legs_to_terminal = run.legs
        outbox = replies
        sender = receiver_name
    return run


class ScenarioRunner:
    def __init__(self, scenario: Scenario):
        problems = scenario.validate()
        if problems:
            raise ScenarioError("; ".join(problems))
        self.scenario = scenario
        self.deployment = Deployment(scenario)

    def run(self) -> MetricsReport:
        deployment = self.deployment
        report = MetricsReport(
            scenario=self.scenario.name,
            seed=self.scenario.seed,
            ddo_bytes={
                name: len(actor.document.to_bytes())
                for name, actor in deployment.actors.items()
            },
            vc_bytes=[
                len(deployment.actors[c.subject].wallet
                    .get_credential(vc_id).credential.to_bytes())
                for c, vc_id in zip(self.scenario.credentials, deployment.issued_ids)
            ],
        )
        for index, step in enumerate(self.scenario.steps):
            report.steps.append(self._run_step(index, step))
        return report

    def _run_step(self, index: int, step: ScenarioStep) -> StepMetrics:
        if step.action == "handshake":
            return self._run_handshake(index, step)
        if step.action == "resolve":
            return self._run_resolve(index, step)
        if step.action == "revoke":
            return self._run_revoke(index, step)
        if step.action == "rotate":
            return self._run_rotate(index, step)
        raise ScenarioError(f"unknown action {step.action!r}")

    def _run_handshake(self, index: int, step: ScenarioStep) -> StepMetrics:
        deployment = self.deployment
        p = step.params
        init_actor = deployment.actors[p["initiator"]]
        resp_actor = deployment.actors[p["responder"]]
        link_spec = self.scenario.links[p.get("link", 0)]
        link = make_link(
            link_spec.profile,
            a=init_actor.spec.name,
            b=resp_actor.spec.name,
            loss=link_spec.loss,
            reorder=link_spec.reorder,
            seed=_seed_int(self.scenario.seed, "link", index),
        )
        policy_spec = p.get("policy", "owner-match")
        init_cfg = deployment.session_config(
            init_actor,
            deployment.policy_for(init_actor, policy_spec),
            Random(_seed_int(self.scenario.seed, "hs", index, "i")),
        )
        resp_cfg = deployment.session_config(
            resp_actor,
            deployment.policy_for(resp_actor, policy_spec),
            Random(_seed_int(self.scenario.seed, "hs", index, "r")),
        )
        now = deployment.now + index
        session, hello = initiate(init_cfg, peer_hint=resp_actor.did, now=now)
        responder = respond(resp_cfg, now=now)
        run = drive_handshake(link, session, hello, responder, now)
        outcome = run.outcome()
        rts = run.round_trips_to_terminal() or run.round_trips_to_secure() or 0
        return StepMetrics(
            action="handshake",
            outcome=outcome,
            expect=step.expect,
            matched=_outcome_matches(outcome, step.expect),
            bytes_sent=link.bytes_on_wire(),
            frames=len(link.trace),
            fragments_per_message=run.fragments_per_message,
            round_trips=rts,
            retransmissions=run.retransmissions,
        )

    def _run_resolve(self, index: int, step: ScenarioStep) -> StepMetrics:
        deployment = self.deployment
        actor = deployment.actors[step.params["actor"]]
        target = step.params["target"]
        if target.startswith("@"):
            did = deployment.actors[target[1:]].did
        else:
            did = parse_did(target)
        try:
            actor.resolver.resolve(did, deployment.now + index)
            outcome = "resolved"
        except ResolutionError as exc:
            outcome = f"unresolved({type(exc).__name__})"
        return StepMetrics(
            action="resolve",
            outcome=outcome,
            expect=step.expect,
            matched=_outcome_matches(outcome, step.expect),
        )

    def _run_revoke(self, index: int, step: ScenarioStep) -> StepMetrics:
        deployment = self.deployment
        issuer = deployment.actors[step.params["issuer"]]
        vc_id = deployment.issued_ids[step.params["credential"]]
        revoke(
            issuer.revocation, issuer.sign_key, vc_id,
            issuer.resolver, deployment.now + index,
        )
        outcome = "revoked"
        return StepMetrics(
            action="revoke",
            outcome=outcome,
            expect=step.expect,
            matched=_outcome_matches(outcome, step.expect),
        )

    def _run_rotate(self, index: int, step: ScenarioStep) -> StepMetrics:
        deployment = self.deployment
        actor = deployment.actors[step.params["actor"]]
        old_key = actor.sign_key
        new_key = crypto.keygen(
            crypto.PURPOSE_SIGN,
            seed=_seed_bytes(self.scenario.seed, actor.spec.name, "rotate", index),
        )
        doc = actor.wallet.current_document or actor.document
        rotated = rotate_key(
            doc,
            old_key.key_id,
            PublicKeyEntry(new_key.key_id, crypto.PURPOSE_SIGN, new_key.public),
            now=deployment.now + index,
        )
        actor.wallet.put_key(new_key)
        actor.wallet.put_document(rotated)
        actor.document = rotated
        actor.sign_key = new_key
        outcome = "rotated"
        if actor.did.method == METHOD_REG:
            # The outgoing key authorizes the update that retires it.
            deployment.registry.register(rotated, old_key)
        return StepMetrics(
            action="rotate",
            outcome=outcome,
            expect=step.expect,
            matched=_outcome_matches(outcome, step.expect),
        )


def run_scenario(scenario: Scenario) -> MetricsReport:
    return ScenarioRunner(scenario).run()
