"""Command-line interface.

Exit codes: 0 ok, 2 validation problem, 3 verification failure, 4 transport
failure. Failures print a machine-readable error object to stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import crypto, wallet as wallet_mod
from .credentials import (
    Claim,
    ClaimOpening,
    CredentialError,
    Presentation,
    RevocationRegistry,
    VerifiableCredential,
    issue,
    present,
    revoke,
    verify_credential,
    verify_presentation,
)
from .encoding import from_canonical, canonical_bytes
from .harness import Scenario, ScenarioError, run_scenario
from .identity import (
    DidDocument,
    DidError,
    METHOD_PEER,
    METHOD_REG,
    PublicKeyEntry,
    ServiceEndpoint,
    format_did,
    generate_peer_did,
    parse_did,
    rotate_key,
)
from .resolver import Registry, RegistryError, ResolutionError, Resolver, registered_did_for
from .transport import PROFILES

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_VERIFICATION = 3
EXIT_TRANSPORT = 4


def _emit(payload) -> None:
    print(json.dumps(payload, sort_keys=True, indent=2))


def _fail(code: int, reason: str) -> int:
    _emit({"error": {"code": code, "reason": reason}})
    return code


def _now() -> int:
    return int(time.time())


def _load_registry(path: str | None) -> Registry:
    if path and Path(path).exists():
        return Registry.load(path)
    return Registry()


def _build_resolver(args) -> Resolver:
    resolver = Resolver(_load_registry(getattr(args, "registry", None)))
    for doc_path in getattr(args, "peer_doc", None) or []:
        doc = DidDocument.from_bytes(Path(doc_path).read_bytes())
        resolver.store_peer(doc.id, doc)
    return resolver


def _load_revocations(path: str | None) -> RevocationRegistry | None:
    if not path or not Path(path).exists():
        return None
    mapping = from_canonical(Path(path).read_bytes())
    registry = RevocationRegistry(parse_did(mapping["owner"]))
    for vc_id in mapping["revoked"]:
        registry.add(vc_id)
    return registry


def _save_revocations(path: str, registry: RevocationRegistry) -> None:
    Path(path).write_bytes(
        canonical_bytes(
            {"owner": format_did(registry.owner), "revoked": sorted(registry.revoked)}
        )
    )


def _unlock(args) -> wallet_mod.Wallet:
    return wallet_mod.Wallet.unlock(args.wallet, args.passphrase)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_keygen(args) -> int:
    seed = bytes.fromhex(args.seed) if args.seed else None
    try:
        kp = crypto.keygen(args.purpose, seed=seed)
    except crypto.CryptoError as exc:
        return _fail(EXIT_VALIDATION, str(exc))
    _emit(
        {
            "key_id": kp.key_id,
            "purpose": kp.purpose,
            "public": kp.public.hex(),
            "secret": kp.secret.hex(),
        }
    )
    return EXIT_OK


def cmd_did_create(args) -> int:
    w = _unlock(args)
    if w.owner_did is not None:
        return _fail(EXIT_VALIDATION, "wallet already holds an identity")
    sign_key = crypto.keygen(crypto.PURPOSE_SIGN)
    agree_key = crypto.keygen(crypto.PURPOSE_AGREE)
    keys = (
        PublicKeyEntry(sign_key.key_id, crypto.PURPOSE_SIGN, sign_key.public),
        PublicKeyEntry(agree_key.key_id, crypto.PURPOSE_AGREE, agree_key.public),
    )
    endpoints = ()
    if args.endpoint:
        endpoints = (ServiceEndpoint("ep-1", "sim-link", args.endpoint),)
    if args.method == METHOD_PEER:
        did, doc = generate_peer_did(keys, endpoints)
    else:
        if not args.registry:
            return _fail(EXIT_VALIDATION, "reg method needs --registry")
        did = registered_did_for(sign_key.public, args.endpoint or "")
        doc = DidDocument(id=did, public_keys=keys, service_endpoints=endpoints)
        registry = _load_registry(args.registry)
        try:
            registry.register(doc, sign_key)
        except RegistryError as exc:
            return _fail(EXIT_VALIDATION, str(exc))
        registry.save(args.registry)
    w.put_key(sign_key)
    w.put_key(agree_key)
    w.put_document(doc)
    w.save(args.wallet, args.passphrase)
    _emit({"did": format_did(did), "document_bytes": len(doc.to_bytes())})
    return EXIT_OK


def cmd_did_resolve(args) -> int:
    try:
        did = parse_did(args.did)
    except DidError as exc:
        return _fail(EXIT_VALIDATION, str(exc))
    resolver = _build_resolver(args)
    try:
        doc = resolver.resolve(did, _now())
    except ResolutionError as exc:
        return _fail(EXIT_VERIFICATION, str(exc))
    print(doc.to_bytes().decode("utf-8"))
    return EXIT_OK


def cmd_ddoc_show(args) -> int:
    w = _unlock(args)
    doc = w.current_document
    if doc is None:
        return _fail(EXIT_VALIDATION, "wallet holds no document")
    print(doc.to_bytes().decode("utf-8"))
    return EXIT_OK


def cmd_ddoc_rotate_key(args) -> int:
    w = _unlock(args)
    doc = w.current_document
    if doc is None or w.owner_did is None:
        return _fail(EXIT_VALIDATION, "wallet holds no document")
    old_keys = [k for k in w.sign_keys() if doc.find_key(k.key_id) is not None]
    if not old_keys:
        return _fail(EXIT_VALIDATION, "no rotatable signing key in wallet")
    old_key = old_keys[0]
    new_key = crypto.keygen(crypto.PURPOSE_SIGN)
    rotated = rotate_key(
        doc,
        old_key.key_id,
        PublicKeyEntry(new_key.key_id, crypto.PURPOSE_SIGN, new_key.public),
        now=_now(),
    )
    if w.owner_did.method == METHOD_REG:
        if not args.registry:
            return _fail(EXIT_VALIDATION, "reg method needs --registry")
        registry = _load_registry(args.registry)
        try:
            registry.register(rotated, old_key)
        except RegistryError as exc:
            return _fail(EXIT_VALIDATION, str(exc))
        registry.save(args.registry)
    w.put_key(new_key)
    w.put_document(rotated)
    w.save(args.wallet, args.passphrase)
    print(rotated.to_bytes().decode("utf-8"))
    return EXIT_OK


def _parse_claims(pairs: list[str]) -> list[Claim]:
    claims = []
    for pair in pairs:
        name, sep, value = pair.partition("=")
        if not sep or not name:
            raise CredentialError(f"claims look like name=value, got {pair!r}")
        claims.append(Claim(name=name, value=value))
    return claims


def cmd_vc_issue(args) -> int:
    w = _unlock(args)
    doc = w.current_document
    if doc is None or w.owner_did is None:
        return _fail(EXIT_VALIDATION, "issuer wallet holds no identity")
    sign_keys = [k for k in w.sign_keys() if any(
        e.key_id == k.key_id for e in doc.public_keys
    )]
    if not sign_keys:
        return _fail(EXIT_VALIDATION, "no current signing key in wallet")
    try:
        subject = parse_did(args.subject)
        claims = _parse_claims(args.claim)
        vc, openings = issue(
            sign_keys[0],
            w.owner_did,
            subject,
            claims,
            validity=args.validity_days * 24 * 3600,
            now=_now(),
        )
    except (DidError, CredentialError) as exc:
        return _fail(EXIT_VALIDATION, str(exc))
    Path(args.out).write_bytes(vc.to_bytes())
    Path(args.openings_out).write_bytes(
        canonical_bytes(
            {"vc_id": vc.vc_id, "openings": [o.to_mapping() for o in openings]}
        )
    )
    _emit({"vc_id": vc.vc_id, "credential_bytes": len(vc.to_bytes())})
    return EXIT_OK


def cmd_vc_verify(args) -> int:
    try:
        vc = VerifiableCredential.from_bytes(Path(args.vc).read_bytes())
    except CredentialError as exc:
        return _fail(EXIT_VERIFICATION, f"signature: {exc}")
    resolver = _build_resolver(args)
    verdict = verify_credential(vc, resolver, _load_revocations(args.revoked), _now())
    if not verdict:
        return _fail(EXIT_VERIFICATION, verdict.reason or "invalid")
    _emit({"verdict": "valid", "vc_id": vc.vc_id})
    return EXIT_OK


def cmd_vc_present(args) -> int:
    try:
        vc = VerifiableCredential.from_bytes(Path(args.vc).read_bytes())
        stored = from_canonical(Path(args.openings).read_bytes())
        openings = tuple(
            ClaimOpening(o["name"], o["value"], bytes.fromhex(o["salt"]))
            for o in stored["openings"]
        )
        presentation = present(vc, openings, args.disclose.split(","))
    except (CredentialError, KeyError, ValueError) as exc:
        return _fail(EXIT_VALIDATION, str(exc))
    Path(args.out).write_bytes(presentation.to_bytes())
    _emit(
        {
            "vc_id": vc.vc_id,
            "disclosed": [o.name for o in presentation.disclosed],
            "presentation_bytes": len(presentation.to_bytes()),
        }
    )
    return EXIT_OK


def cmd_vc_verify_presentation(args) -> int:
    try:
        presentation = Presentation.from_bytes(Path(args.presentation).read_bytes())
    except CredentialError as exc:
        return _fail(EXIT_VERIFICATION, f"signature: {exc}")
    resolver = _build_resolver(args)
    verdict = verify_presentation(
        presentation, resolver, _load_revocations(args.revoked), _now()
    )
    if not verdict:
        return _fail(EXIT_VERIFICATION, verdict.reason or "invalid")
    _emit(
        {
            "verdict": "valid",
            "disclosed": {o.name: o.value for o in presentation.disclosed},
        }
    )
    return EXIT_OK


def cmd_vc_revoke(args) -> int:
    w = _unlock(args)
    if w.owner_did is None:
        return _fail(EXIT_VALIDATION, "issuer wallet holds no identity")
    registry = _load_revocations(args.revoked) or RevocationRegistry(w.owner_did)
    resolver = _build_resolver(args)
    if w.owner_did.method == METHOD_PEER and w.current_document is not None:
        resolver.store_peer(w.owner_did, w.current_document)
    sign_keys = w.sign_keys()
    if not sign_keys:
        return _fail(EXIT_VALIDATION, "no signing key in wallet")
    doc = w.current_document
    current = [k for k in sign_keys if doc and any(
        e.key_id == k.key_id for e in doc.public_keys
    )]
    try:
        revoke(registry, (current or sign_keys)[0], args.vc_id, resolver, _now())
    except CredentialError as exc:
        return _fail(EXIT_VERIFICATION, str(exc))
    _save_revocations(args.revoked, registry)
    _emit({"revoked": args.vc_id})
    return EXIT_OK


def cmd_wallet_create(args) -> int:
    if Path(args.wallet).exists():
        return _fail(EXIT_VALIDATION, f"{args.wallet} already exists")
    wallet_mod.create(args.wallet, args.passphrase)
    _emit({"wallet": args.wallet})
    return EXIT_OK


def cmd_wallet_unlock(args) -> int:
    w = _unlock(args)
    _emit(
        {
            "owner_did": format_did(w.owner_did) if w.owner_did else None,
            "keys": len(w.keys),
            "documents": len(w.documents),
            "credentials": len(w.credentials),
        }
    )
    return EXIT_OK


def cmd_wallet_list(args) -> int:
    w = _unlock(args)
    _emit(
        {
            "keys": sorted(w.keys),
            "credentials": w.list_credentials(),
        }
    )
    return EXIT_OK


def cmd_sim_run(args) -> int:
    try:
        scenario = Scenario.load(args.scenario)
        if args.seed is not None:
            scenario.seed = args.seed
        report = run_scenario(scenario)
    except ScenarioError as exc:
        return _fail(EXIT_VALIDATION, str(exc))
    for line in report.summary_lines():
        print(line)
    if args.report:
        Path(args.report).write_bytes(report.to_json_bytes())
    if args.strict and not report.all_matched():
        mismatched = [s for s in report.steps if not s.matched]
        if any(s.outcome == "delivery-failed" for s in mismatched):
            return _fail(EXIT_TRANSPORT, "delivery failed")
        return _fail(
            EXIT_VERIFICATION,
            "; ".join(f"{s.action}: {s.outcome} != {s.expect}" for s in mismatched),
        )
    return EXIT_OK


def cmd_sim_profiles(args) -> int:
    _emit(
        {
            name: {
                "mtu": profile.mtu,
                "loss_probability": profile.loss_probability,
                "reorder_probability": profile.reorder_probability,
            }
            for name, profile in sorted(PROFILES.items())
        }
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_wallet_args(parser) -> None:
    parser.add_argument("--wallet", required=True, help="wallet file path")
    parser.add_argument("--passphrase", required=True)


def _add_resolver_args(parser) -> None:
    parser.add_argument("--registry", help="registry snapshot (.reg)")
    parser.add_argument(
        "--peer-doc", action="append", help="peer document file (.ddoc); repeatable"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tinyssi")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate a keypair")
    p.add_argument("--purpose", choices=[crypto.PURPOSE_SIGN, crypto.PURPOSE_AGREE],
                   default=crypto.PURPOSE_SIGN)
    p.add_argument("--seed", help="32-byte hex seed for deterministic output")
    p.set_defaults(func=cmd_keygen)

    did = sub.add_parser("did", help="identifier operations").add_subparsers(
        dest="subcommand", required=True
    )
    p = did.add_parser("create")
    p.add_argument("--method", choices=[METHOD_PEER, METHOD_REG], default=METHOD_PEER)
    p.add_argument("--endpoint", help="service endpoint address")
    p.add_argument("--registry", help="registry snapshot for reg method")
    _add_wallet_args(p)
    p.set_defaults(func=cmd_did_create)
    p = did.add_parser("resolve")
    p.add_argument("did")
    _add_resolver_args(p)
    p.set_defaults(func=cmd_did_resolve)

    ddoc = sub.add_parser("ddoc", help="document operations").add_subparsers(
        dest="subcommand", required=True
    )
    p = ddoc.add_parser("show")
    _add_wallet_args(p)
    p.set_defaults(func=cmd_ddoc_show)
    p = ddoc.add_parser("rotate-key")
    _add_wallet_args(p)
    p.add_argument("--registry")
    p.set_defaults(func=cmd_ddoc_rotate_key)

    vc = sub.add_parser("vc", help="credential operations").add_subparsers(
        dest="subcommand", required=True
    )
    p = vc.add_parser("issue")
    _add_wallet_args(p)
    p.add_argument("--subject", required=True)
    p.add_argument("--claim", action="append", required=True, help="name=value")
    p.add_argument("--validity-days", type=int, default=30)
    p.add_argument("--out", required=True)
    p.add_argument("--openings-out", required=True)
    p.set_defaults(func=cmd_vc_issue)
    p = vc.add_parser("verify")
    p.add_argument("vc")
    p.add_argument("--revoked")
    _add_resolver_args(p)
    p.set_defaults(func=cmd_vc_verify)
    p = vc.add_parser("present")
    p.add_argument("--vc", required=True)
    p.add_argument("--openings", required=True)
    p.add_argument("--disclose", required=True, help="comma-separated claim names")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_vc_present)
    p = vc.add_parser("verify-presentation")
    p.add_argument("presentation")
    p.add_argument("--revoked")
    _add_resolver_args(p)
    p.set_defaults(func=cmd_vc_verify_presentation)
    p = vc.add_parser("revoke")
    _add_wallet_args(p)
    p.add_argument("--vc-id", required=True)
    p.add_argument("--revoked", required=True, help="revocation list file")
    _add_resolver_args(p)
    p.set_defaults(func=cmd_vc_revoke)

    w = sub.add_parser("wallet", help="wallet operations").add_subparsers(
        dest="subcommand", required=True
    )
    p = w.add_parser("create")
    _add_wallet_args(p)
    p.set_defaults(func=cmd_wallet_create)
    p = w.add_parser("unlock")
    _add_wallet_args(p)
    p.set_defaults(func=cmd_wallet_unlock)
    p = w.add_parser("list")
    _add_wallet_args(p)
    p.set_defaults(func=cmd_wallet_list)

    sim = sub.add_parser("sim", help="scenario simulation").add_subparsers(
        dest="subcommand", required=True
    )
    p = sim.add_parser("run")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--report", help="write the metrics report here")
    p.add_argument("--strict", action="store_true",
                   help="exit nonzero unless every step matched its expectation")
    p.set_defaults(func=cmd_sim_run)
    p = sim.add_parser("profiles")
    p.set_defaults(func=cmd_sim_profiles)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except wallet_mod.WrongPassphraseError as exc:
        return _fail(EXIT_VERIFICATION, str(exc))
    except wallet_mod.WalletError as exc:
        return _fail(EXIT_VERIFICATION, str(exc))
    except FileNotFoundError as exc:
        return _fail(EXIT_VALIDATION, str(exc))
    except (DidError, CredentialError, ResolutionError) as exc:
        return _fail(EXIT_VALIDATION, str(exc))


if __name__ == "__main__":
    sys.exit(main())
