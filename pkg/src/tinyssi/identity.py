"""Decentralized identifiers and their documents.

A DID is `did:<method>:<id>`. Its document lists public keys and service
endpoints and nothing else: documents are pseudonymous by construction and
never carry attributes or claims. Peer-method DIDs are self-certifying, the
id being the digest of the canonical genesis document, so two devices can
exchange them directly with no registry.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Any, Iterable

from . import crypto
from .encoding import (
    EncodingError,
    base58_encode,
    canonical_bytes,
    from_canonical,
    from_hex,
    is_base58,
)

METHOD_PEER = "peer"
METHOD_REG = "reg"

_METHOD_RE = re.compile(r"^[a-z0-9]+$")

_DOCUMENT_FIELDS = frozenset(
    {"id", "public_keys", "service_endpoints", "version", "previous_keys"}
)
_KEY_FIELDS = frozenset({"key_id", "purpose", "public"})
_ENDPOINT_FIELDS = frozenset({"endpoint_id", "type", "address"})
_RETIRED_FIELDS = frozenset({"key_id", "public", "retired_at"})


class DidError(ValueError):
    """Malformed DID text or document structure."""


@dataclass(frozen=True)
class Did:
    method: str
    id: str

    def __post_init__(self) -> None:
        if not self.method or not _METHOD_RE.match(self.method):
            raise DidError(f"method must be lowercase alphanumeric, got {self.method!r}")
        if not self.id or not is_base58(self.id):
            raise DidError(f"method-specific id has illegal characters: {self.id!r}")

    def __str__(self) -> str:
        return format_did(self)


def parse_did(text: str) -> Did:
    """Parse `did:<method>:<id>` text into its parts."""
    if not isinstance(text, str) or not text.startswith("did:"):
        raise DidError(f"missing 'did:' prefix in {text!r}")
    rest = text[len("did:") :]
    method, sep, method_id = rest.partition(":")
    if not sep:
        raise DidError(f"missing method-specific id in {text!r}")
    return Did(method=method, id=method_id)


def format_did(d: Did) -> str:
    return f"did:{d.method}:{d.id}"


@dataclass(frozen=True)
class PublicKeyEntry:
    key_id: str
    purpose: str
    public: bytes

    def to_mapping(self) -> dict[str, Any]:
        return {"key_id": self.key_id, "purpose": self.purpose, "public": self.public.hex()}


@dataclass(frozen=True)
class ServiceEndpoint:
    endpoint_id: str
    type: str
    address: str

    def to_mapping(self) -> dict[str, Any]:
        return {"endpoint_id": self.endpoint_id, "type": self.type, "address": self.address}


@dataclass(frozen=True)
class RetiredKey:
    key_id: str
    public: bytes
    retired_at: int

    def to_mapping(self) -> dict[str, Any]:
        return {"key_id": self.key_id, "public": self.public.hex(), "retired_at": self.retired_at}


@dataclass(frozen=True)
class DidDocument:
    """Pseudonymous record binding a DID to keys and endpoints.

    Immutable; mutation operations return a new document with an incremented
    version. Retired keys are kept forever so proofs made against them stay
    checkable.
    """

    id: Did
    public_keys: tuple[PublicKeyEntry, ...]
    service_endpoints: tuple[ServiceEndpoint, ...] = ()
    version: int = 1
    previous_keys: tuple[RetiredKey, ...] = ()

    def __post_init__(self) -> None:
        if len(self.public_keys) < 1:
            raise DidError("document must hold at least one public key")
        ids = [k.key_id for k in self.public_keys] + [k.key_id for k in self.previous_keys]
        if len(ids) != len(set(ids)):
            raise DidError("key ids must be unique across current and retired keys")
        if self.version < 1:
            raise DidError("version must be a positive integer")

    def find_key(self, key_id: str) -> PublicKeyEntry | RetiredKey | None:
        """Look up a key id among current and retired keys."""
        for key in self.public_keys:
            if key.key_id == key_id:
                return key
        for key in self.previous_keys:
            if key.key_id == key_id:
                return key
        return None

    def content_mapping(self) -> dict[str, Any]:
        """The document body without its id (the peer-method genesis form)."""
        return {
            "public_keys": [k.to_mapping() for k in self.public_keys],
            "service_endpoints": [e.to_mapping() for e in self.service_endpoints],
            "version": self.version,
            "previous_keys": [k.to_mapping() for k in self.previous_keys],
        }

    def to_mapping(self) -> dict[str, Any]:
        mapping = self.content_mapping()
        mapping["id"] = format_did(self.id)
        return mapping

    def to_bytes(self) -> bytes:
        return canonical_serialize(self)

    @classmethod
    def from_mapping(cls, mapping: Any) -> "DidDocument":
        if not isinstance(mapping, dict):
            raise DidError("document must be a mapping")
        unknown = set(mapping) - _DOCUMENT_FIELDS
        if unknown:
            raise DidError(
                f"documents carry no attributes; unknown fields {sorted(unknown)}"
            )
        missing = _DOCUMENT_FIELDS - set(mapping)
        if missing:
            raise DidError(f"document missing fields {sorted(missing)}")
        try:
            keys = tuple(_key_from_mapping(k) for k in mapping["public_keys"])
            endpoints = tuple(_endpoint_from_mapping(e) for e in mapping["service_endpoints"])
            retired = tuple(_retired_from_mapping(k) for k in mapping["previous_keys"])
        except (TypeError, KeyError, EncodingError) as exc:
            raise DidError(f"malformed document entry: {exc}") from exc
        version = mapping["version"]
        if not isinstance(version, int) or isinstance(version, bool):
            raise DidError("version must be an integer")
        return cls(
            id=parse_did(mapping["id"]),
            public_keys=keys,
            service_endpoints=endpoints,
            version=version,
            previous_keys=retired,
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "DidDocument":
        try:
            return cls.from_mapping(from_canonical(raw))
        except EncodingError as exc:
            raise DidError(str(exc)) from exc


def _key_from_mapping(mapping: dict[str, Any]) -> PublicKeyEntry:
    if set(mapping) != _KEY_FIELDS:
        raise DidError(f"malformed public key entry: {sorted(mapping)}")
    return PublicKeyEntry(
        key_id=mapping["key_id"],
        purpose=mapping["purpose"],
        public=from_hex(mapping["public"], crypto.KEY_LEN),
    )


def _endpoint_from_mapping(mapping: dict[str, Any]) -> ServiceEndpoint:
    if set(mapping) != _ENDPOINT_FIELDS:
        raise DidError(f"malformed service endpoint entry: {sorted(mapping)}")
    return ServiceEndpoint(
        endpoint_id=mapping["endpoint_id"],
        type=mapping["type"],
        address=mapping["address"],
    )


def _retired_from_mapping(mapping: dict[str, Any]) -> RetiredKey:
    if set(mapping) != _RETIRED_FIELDS:
        raise DidError(f"malformed retired key entry: {sorted(mapping)}")
    return RetiredKey(
        key_id=mapping["key_id"],
        public=from_hex(mapping["public"], crypto.KEY_LEN),
        retired_at=mapping["retired_at"],
    )


def canonical_serialize(doc: DidDocument) -> bytes:
    """Deterministic document bytes: the wire and storage form."""
    return canonical_bytes(doc.to_mapping())


def peer_did_for(public_keys: Iterable[PublicKeyEntry],
                 service_endpoints: Iterable[ServiceEndpoint] = ()) -> Did:
    genesis = {
        "public_keys": [k.to_mapping() for k in public_keys],
        "service_endpoints": [e.to_mapping() for e in service_endpoints],
        "version": 1,
        "previous_keys": [],
    }
    suffix = base58_encode(crypto.digest(canonical_bytes(genesis)))
    return Did(method=METHOD_PEER, id=suffix)


def generate_peer_did(
    public_keys: Iterable[PublicKeyEntry],
    service_endpoints: Iterable[ServiceEndpoint] = (),
) -> tuple[Did, DidDocument]:
    """Derive a self-certifying peer DID from a genesis key set.

    The id is the base58 digest of the canonical genesis bytes; inserting it
    yields the final document. Purely a function of the genesis content.
    """
    keys = tuple(public_keys)
    endpoints = tuple(service_endpoints)
    if not keys:
        raise DidError("peer DID genesis needs at least one public key")
    did = peer_did_for(keys, endpoints)
    return did, DidDocument(id=did, public_keys=keys, service_endpoints=endpoints)


def verify_peer_document(did: Did, doc: DidDocument) -> bool:
    """Check a peer document's self-certification: digest of genesis == id.

    Only holds for documents still in genesis form (version 1); rotated peer
    documents need a version chain, which is out of scope here.
    """
    if did.method != METHOD_PEER or doc.id != did:
        return False
    recomputed = base58_encode(crypto.digest(canonical_bytes(doc.content_mapping())))
    return recomputed == did.id


def rotate_key(
    doc: DidDocument, old_key_id: str, new_key: PublicKeyEntry, now: int
) -> DidDocument:
    """Retire one key and append a replacement; no re-signing of anything.

    The old key moves to previous_keys with a timestamp and the version is
    bumped. Nothing signs the document itself, so credentials issued against
    the old key stay verifiable as-is.
    """
    remaining = tuple(k for k in doc.public_keys if k.key_id != old_key_id)
    if len(remaining) == len(doc.public_keys):
        raise DidError(f"no key {old_key_id!r} in document")
    if doc.find_key(new_key.key_id) is not None:
        raise DidError(f"key id {new_key.key_id!r} already present")
    old = next(k for k in doc.public_keys if k.key_id == old_key_id)
    return replace(
        doc,
        public_keys=remaining + (new_key,),
        previous_keys=doc.previous_keys
        + (RetiredKey(key_id=old.key_id, public=old.public, retired_at=now),),
        version=doc.version + 1,
    )


def validate_document(doc: DidDocument | dict[str, Any]) -> list[str]:
    """Collect structural violations; an empty list means the document is valid."""
    violations: list[str] = []
    if isinstance(doc, DidDocument):
        mapping = doc.to_mapping()
    else:
        mapping = doc
    unknown = set(mapping) - _DOCUMENT_FIELDS
    for field in sorted(unknown):
        violations.append(
            f"pseudonymity violation: attribute field {field!r} not permitted"
        )
    missing = _DOCUMENT_FIELDS - set(mapping)
    for field in sorted(missing):
        violations.append(f"missing field {field!r}")
    if missing:
        return violations
    keys = mapping["public_keys"]
    if not isinstance(keys, list) or not keys:
        violations.append("document must hold at least one public key")
        keys = []
    ids = []
    for entry in keys:
        if not isinstance(entry, dict) or set(entry) != _KEY_FIELDS:
            violations.append(f"malformed public key entry: {entry!r}")
            continue
        ids.append(entry["key_id"])
        if entry["purpose"] not in (crypto.PURPOSE_SIGN, crypto.PURPOSE_AGREE):
            violations.append(f"unknown key purpose {entry['purpose']!r}")
    for entry in mapping["previous_keys"]:
        if not isinstance(entry, dict) or set(entry) != _RETIRED_FIELDS:
            violations.append(f"malformed retired key entry: {entry!r}")
            continue
        ids.append(entry["key_id"])
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    for key_id in dupes:
        violations.append(f"duplicate key id {key_id!r}")
    version = mapping["version"]
    if not isinstance(version, int) or isinstance(version, bool) or version < 1:
        violations.append(f"version must be a positive integer, got {version!r}")
    try:
        parse_did(mapping["id"])
    except DidError as exc:
        violations.append(str(exc))
    return violations
