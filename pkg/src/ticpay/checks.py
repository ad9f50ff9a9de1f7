"""Run-level verdicts: secrecy, message-order conformance, money safety.

These checks are white-box on purpose. The harness that built the world
knows every secret in it (codes, PINs, keys, account numbers), scans the
raw bytes that crossed the channels for any of them, and checks the
bookkeeping of every bank. The protocol passes when the scan over real
ciphertext finds nothing and the same scan over the identity cipher
finds plenty — the negative control that proves the scan can see.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

from .netsim import ProtocolTrace, WireRecord
from .wire import Envelope, F, WireError

# Delivered msg_type order of a clean single-payment run, client and bank
# only. Step markers: provisioning and login are the entry stairs, then
# mode, submit, the SMS exchange, and the final result.
ONE_WAY_TEMPLATE = [
    "tic_provision",
    "login_request",
    "login_response",
    "mode_select",
    "mode_ack",
    "payment_submit",
    "submit_ack",
    "sms_challenge",
    "sms_reply",
    "txn_result",
]

# The merchant flow wraps the same payment: checkout and invoice first,
# then merchant verification through both banks, then the one-way steps
# as the inner payment, then settlement fan-out and confirmation.
TWO_WAY_TEMPLATE = [
    "tic_provision",
    "login_request",
    "login_response",
    "checkout_request",
    "invoice",
    "merchant_auth_request",
    "merchant_auth_forward",
    "merchant_auth_verdict",
    "merchant_auth_ack",
    "mode_select",
    "mode_ack",
    "payment_submit",
    "submit_ack",
    "sms_challenge",
    "sms_reply",
    "txn_result",
    "payment_notice",
    "settle_notice",
    "payment_confirmation",
]

TEMPLATES = {"one-way": ONE_WAY_TEMPLATE, "two-way": TWO_WAY_TEMPLATE}

# Message types a merchant agent may legitimately receive, with the body
# fields each may carry. Anything else reaching a merchant is a breach.
MERCHANT_SCHEMAS = {
    "checkout_request": frozenset(),
    "payment_confirmation": frozenset(
        {int(F.INVOICE_NUMBER), int(F.AMOUNT), int(F.CUSTOMER_REF)}
    ),
}


@dataclass(frozen=True)
class LeakFinding:
    seq: int  # trace seq of the transmission whose bytes leaked
    secret_id: str
    offset: int


def leakage_scan(wire_log: Sequence[WireRecord],
                 secrets: Dict[str, bytes]) -> List[LeakFinding]:
    """Find every occurrence of any secret inside any transmitted bytes.

    Secrets are scanned as raw byte substrings; authenticated ciphertext
    cannot contain them except by 2^-something accident, so any hit on a
    real cipher is a protocol bug.
    """
    findings: List[LeakFinding] = []
    for record in wire_log:
        for secret_id, value in secrets.items():
            if not value:
                continue
            start = record.data.find(value)
            while start != -1:
                findings.append(LeakFinding(record.seq, secret_id, start))
                start = record.data.find(value, start + 1)
    return findings


@dataclass(frozen=True)
class ConformanceResult:
    ok: bool
    step: Optional[int] = None       # first divergent step, 0-based
    expected: Optional[str] = None
    got: Optional[str] = None

    def describe(self) -> str:
        if self.ok:
            return "conformance: pass"
        return (f"conformance: diverged at step {self.step}: "
                f"expected {self.expected!r}, got {self.got!r}")


def conformance_check(trace: ProtocolTrace, template: Sequence[str],
                      request_id: Optional[str] = None) -> ConformanceResult:
    """Compare delivered msg_types, in order, against a template.

    With `request_id`, only deliveries tagged with it are projected;
    otherwise the whole run must match, extra traffic included.
    """
    delivered = [
        e.msg_type for e in trace.events
        if e.kind == "deliver" and (request_id is None or e.request_id == request_id)
    ]
    for i, expected in enumerate(template):
        if i >= len(delivered):
            return ConformanceResult(ok=False, step=i, expected=expected, got=None)
        if delivered[i] != expected:
            return ConformanceResult(ok=False, step=i, expected=expected,
                                     got=delivered[i])
    if len(delivered) > len(template):
        return ConformanceResult(ok=False, step=len(template), expected=None,
                                 got=delivered[len(template)])
    return ConformanceResult(ok=True)


@dataclass(frozen=True)
class BlindnessFinding:
    seq: int
    reason: str


def merchant_blindness_check(
    wire_log: Sequence[WireRecord],
    merchant_names: Iterable[str],
    customer_account_ids: Iterable[str],
) -> List[BlindnessFinding]:
    """Schema check: traffic to merchants carries no customer payment data.

    Two layers: the message type and its field set must be in the allowed
    schema, and the raw bytes must not contain any customer account id.
    """
    merchants = set(merchant_names)
    account_bytes = [a.encode("utf-8") for a in customer_account_ids]
    findings: List[BlindnessFinding] = []
    for record in wire_log:
        if record.receiver not in merchants:
            continue
        allowed = MERCHANT_SCHEMAS.get(record.msg_type)
        if allowed is None:
            findings.append(BlindnessFinding(
                record.seq, f"unexpected msg_type {record.msg_type!r} to merchant"))
            continue
        try:
            env = Envelope.from_bytes(record.data)
        except WireError:
            findings.append(BlindnessFinding(record.seq, "unparseable envelope"))
            continue
        extra = set(env.body) - set(allowed)
        if extra:
            findings.append(BlindnessFinding(
                record.seq, f"fields {sorted(extra)} outside merchant schema"))
        for acct in account_bytes:
            if acct and acct in record.data:
                findings.append(BlindnessFinding(
                    record.seq, "customer account id present in merchant-bound bytes"))
    return findings


def total_funds(banks: Iterable) -> int:
    """World-wide money supply: all account balances plus clearing legs."""
    return sum(bank.total_funds() for bank in banks)


def collect_secrets(server, clients=(), extra_accounts=()) -> Dict[str, bytes]:
    """Everything in this world that must never cross a channel in the clear.

    Covers issued TIC values, account PINs, live session keys, and the
    account identifiers on both sides of payments.
    """
    secrets: Dict[str, bytes] = {}
    for i, value in enumerate(server.registry.issued_values()):
        secrets[f"tic:{i}"] = value.encode("utf-8")
    for username, record in server.accounts.items():
        secrets[f"pin:{username}"] = record.pin.value
        secrets[f"account:{record.account_id}"] = record.account_id.encode("utf-8")
    for cookie, session in server.sessions.items():
        secrets[f"key:{session.session_id}"] = session.secret_key.key_bytes
    for client in clients:
        if client.session is not None:
            secrets[f"client-key:{client.name}"] = client.session.secret_key.key_bytes
    for account_id in extra_accounts:
        secrets[f"account:{account_id}"] = account_id.encode("utf-8")
    return secrets
