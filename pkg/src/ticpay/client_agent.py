"""Customer-side agent: login, key unwrap, vault handling, payment flow.

The agent mirrors the server's session phases from its own side: it
logs in, unwraps the PIN-wrapped session key, selects a payment mode,
then spends one vault code per transaction — the code encrypts the
order, the session key encrypts the code, and neither ever leaves the
device in the clear. SMS prompts are answered only for transactions
this agent actually started; anything else is ignored as a spoof.

For two-way purchases the agent first asks its bank to authenticate
the merchant and refuses to send a single payment byte until the
verdict is positive.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass
from typing import List, Optional

from .crypto import CryptoSuite, Pin
from .errors import IntegrityFailure, VaultEmpty, VaultLocked, WireError
from .netsim import Actor, Ctx
from .payment import PayMode, PaymentOrder
from .rng import DeterministicRng
from .tic_registry import TicBatch, TicCode
from .two_way import MerchantCertificate
from .vault import SALT_LEN, TicVault
from .wire import Channel, Ciphertext, Envelope, F


# -- vault operations (directly callable, no simulator needed) ----------------


def provision_vault(batch: TicBatch, local_password: str,
                    salt: Optional[bytes] = None) -> TicVault:
    """Seal a freshly issued batch under the device password."""
    if not batch.codes:
        raise ValueError("cannot provision an empty batch")
    if salt is None:
        salt = secrets.token_bytes(SALT_LEN)
    alphabet = batch.codes[0].alphabet
    return TicVault.provision(batch.codes, local_password, salt=salt, alphabet=alphabet)


def unlock_and_pick(vault: TicVault, local_password: str, index: int = 0):
    """Open the vault and spend one code; the vault no longer contains it."""
    if vault.locked:
        vault.unlock(local_password)
    code = vault.pick(index)
    return code, vault


def change_password(vault: TicVault, old_password: str, new_password: str) -> TicVault:
    vault.change_password(old_password, new_password)
    return vault


@dataclass
class ClientSession:
    """Client half of a live session; the key exists only in memory."""

    cookie: str
    secret_key: object
    phase: str = "logged-in"  # logged-in | closed


@dataclass
class _InFlight:
    order: PaymentOrder
    txn_id: Optional[str] = None  # learned from submit_ack or the SMS prompt
    replied: bool = False


class ClientAgent(Actor):
    """One customer device driving payments through its bank.

    `payments` run sequentially, one session each. `reply_policy` is the
    scripted human: answer YES, answer NO, or never answer. A `merchant`
    switches the agent into the two-way flow: checkout, invoice, merchant
    verification, then the ordinary payment inside it.
    """

    def __init__(
        self,
        name: str,
        password: str,
        pin: Pin,
        vault_password: str,
        bank: str = "cbank",
        payments: Optional[List[PaymentOrder]] = None,
        reply_policy: str = "yes",
        reply_delay: int = 0,
        pick_policy: str = "first",
        merchant: Optional[str] = None,
        mode: str = "electronic-transfer",
        cipher: str = "aes-gcm",
        rng: Optional[DeterministicRng] = None,
    ):
        if reply_policy not in ("yes", "no", "ignore"):
            raise ValueError(f"unknown reply policy {reply_policy!r}")
        if pick_policy not in ("first", "random"):
            raise ValueError(f"unknown pick policy {pick_policy!r}")
        self.name = name
        self.role = "client"
        self.password = password
        self.pin = pin
        self.vault_password = vault_password
        self.bank = bank
        self.reply_policy = reply_policy
        self.reply_delay = reply_delay
        self.pick_policy = pick_policy
        self.merchant = merchant
        self.mode = PayMode.from_name(mode)
        self.suite = CryptoSuite(cipher)
        self.rng = rng or DeterministicRng(0, f"client|{name}")
        self.vault: Optional[TicVault] = None
        self.session: Optional[ClientSession] = None
        self.inflight: Optional[_InFlight] = None
        self.outcomes: List[str] = []
        self._queue: List[PaymentOrder] = list(payments or [])
        self._awaiting_ack = False
        self._request_counter = 0
        self.request_id = ""
        self._invoice: Optional[dict] = None

    # -- flow control ---------------------------------------------------------

    def _begin_next(self, ctx: Ctx) -> None:
        """Start a session if there is work: a queued payment or a checkout."""
        if self.merchant is None and not self._queue:
            return
        self.session = None
        self.inflight = None
        ctx.send(Envelope(
            sender=self.name, receiver=self.bank, channel=Channel.WEB,
            msg_type="login_request", body={
                int(F.USERNAME): self.name.encode("utf-8"),
                int(F.PASSWORD): self.password.encode("utf-8"),
            },
        ))

    def _finish_current(self, ctx: Ctx, outcome: str) -> None:
        self.outcomes.append(outcome)
        if self.inflight is None and self.merchant is None and self._queue:
            # Failed before composing, so the head of the queue is this very
            # attempt. Abandon it: retrying with the same broken factor would
            # loop forever.
            self._queue.pop(0)
        self.inflight = None
        if self.session is not None:
            self.session.phase = "closed"
        if self.merchant is None and self._queue:
            self._begin_next(ctx)

    # -- lifecycle ----------------------------------------------------------------

    def on_message(self, ctx: Ctx, env: Envelope) -> None:
        handler = {
            "tic_provision": self._on_provision,
            "login_response": self._on_login_response,
            "mode_ack": self._on_mode_ack,
            "submit_ack": self._on_submit_ack,
            "sms_challenge": self._on_sms_challenge,
            "txn_result": self._on_txn_result,
            "invoice": self._on_invoice,
            "merchant_auth_ack": self._on_merchant_auth_ack,
            "payment_notice": self._on_payment_notice,
        }.get(env.msg_type)
        if handler is None:
            ctx.note(f"ignored msg_type={env.msg_type}")
            return
        handler(ctx, env)

    # -- handlers --------------------------------------------------------------------

    def _on_provision(self, ctx: Ctx, env: Envelope) -> None:
        try:
            self.vault = TicVault.from_bytes(env.body.get(int(F.VAULT), b""))
        except WireError as exc:
            ctx.note(f"provision-rejected cause={exc}")
            return
        ctx.note("vault-received")
        self._begin_next(ctx)

    def _on_login_response(self, ctx: Ctx, env: Envelope) -> None:
        if env.body.get(int(F.STATUS)) != b"\x01":
            reason = env.body.get(int(F.REASON), b"").decode("utf-8")
            ctx.note(f"login-failed cause={reason}")
            self._finish_current(ctx, f"login-failed:{reason}")
            return
        try:
            wrapped = Ciphertext.from_bytes(env.body[int(F.WRAPPED_KEY)])
            secret_key = self.suite.unwrap_secret_key(wrapped, self.pin, env.cookie)
        except (KeyError, WireError, IntegrityFailure) as exc:
            # A PIN mismatch surfaces here: the wrap fails authentication and
            # no session exists client-side, welcome message or not.
            ctx.note(f"key-unwrap-failed cause={type(exc).__name__}")
            self._finish_current(ctx, "key-unwrap-failed")
            return
        self.session = ClientSession(cookie=env.cookie, secret_key=secret_key)
        ctx.note("session-established")
        if self.merchant is not None:
            self._request_counter += 1
            self.request_id = f"{self.name}-R{self._request_counter:03d}"
            ctx.send(Envelope(
                sender=self.name, receiver=self.merchant, channel=Channel.WEB,
                msg_type="checkout_request", body={}, request_id=self.request_id,
            ))
            return
        self._select_mode(ctx, self._queue[0].mode)

    def _select_mode(self, ctx: Ctx, mode: PayMode) -> None:
        ctx.send(Envelope(
            sender=self.name, receiver=self.bank, channel=Channel.WEB,
            msg_type="mode_select", body={int(F.MODE): PayMode(mode).label.encode("utf-8")},
            cookie=self.session.cookie, request_id=self.request_id,
        ))

    def _current_order(self) -> Optional[PaymentOrder]:
        if self.merchant is not None:
            if self._invoice is None:
                return None
            return PaymentOrder(
                mode=self.mode,
                payee_account=self._invoice["payee_ref"],
                amount=self._invoice["amount"],
                invoice_number=self._invoice["invoice_number"],
            )
        return self._queue[0] if self._queue else None

    def _on_mode_ack(self, ctx: Ctx, env: Envelope) -> None:
        if env.body.get(int(F.STATUS)) != b"\x01":
            reason = env.body.get(int(F.REASON), b"").decode("utf-8")
            ctx.note(f"mode-rejected cause={reason}")
            self._finish_current(ctx, f"mode-rejected:{reason}")
            return
        order = self._current_order()
        if order is None:
            return
        self._compose_and_submit(ctx, order)

    def _compose_and_submit(self, ctx: Ctx, order: PaymentOrder) -> None:
        """Spend one code: it keys the order, the session key wraps it.

        On any local failure (empty or locked vault) nothing is sent."""
        if self.session is None or self.session.phase != "logged-in":
            ctx.note("submit-skipped cause=session-closed")
            return
        try:
            if self.vault is None:
                raise VaultEmpty("no vault provisioned")
            if self.vault.locked:
                self.vault.unlock(self.vault_password)
            index = 0
            if self.pick_policy == "random":
                index = self.rng.below(max(self.vault.remaining(), 1))
            code = self.vault.pick(index)
        except (VaultEmpty, VaultLocked, IntegrityFailure) as exc:
            ctx.note(f"vault-failure cause={type(exc).__name__}")
            self._finish_current(ctx, "vault-failure")
            return
        cookie = self.session.cookie
        enc_tic = self.suite.encrypt_tic(code.value, self.session.secret_key, cookie)
        enc_order = self.suite.encrypt_payment(order, code.value, cookie)
        if self.merchant is None and self._queue:
            self._queue.pop(0)
        self.inflight = _InFlight(order=order)
        self._awaiting_ack = True
        ctx.note(f"submitted amount={order.amount}")
        ctx.send(Envelope(
            sender=self.name, receiver=self.bank, channel=Channel.WEB,
            msg_type="payment_submit", body={
                int(F.ENC_TIC): enc_tic.to_bytes(),
                int(F.ENC_ORDER): enc_order.to_bytes(),
            }, cookie=cookie, request_id=self.request_id,
        ))

    def _on_submit_ack(self, ctx: Ctx, env: Envelope) -> None:
        if not self._awaiting_ack:
            # Answers we never asked for (e.g. the bank denying a replayed
            # copy of our submission) say nothing about our transaction.
            ctx.note("unexpected-submit-ack ignored")
            return
        self._awaiting_ack = False
        if env.body.get(int(F.STATUS)) != b"\x01":
            ctx.note("submit-denied")
            self._finish_current(ctx, "submit-denied")
            return
        txn_id = env.body.get(int(F.TXN_ID), b"").decode("utf-8")
        if self.inflight is not None:
            self.inflight.txn_id = txn_id
        ctx.note(f"submit-accepted txn={txn_id}")

    def _on_sms_challenge(self, ctx: Ctx, env: Envelope) -> None:
        txn_id = env.body.get(int(F.TXN_ID), b"").decode("utf-8")
        amount = int.from_bytes(env.body.get(int(F.AMOUNT), b"\x00"), "big")
        flight = self.inflight
        # Only prompts matching the transaction this agent actually started
        # get an answer; amount is the cross-check because the prompt can
        # outrun the submit_ack that names the txn id.
        if flight is None or flight.replied or amount != flight.order.amount or (
            flight.txn_id is not None and flight.txn_id != txn_id
        ):
            ctx.note(f"sms-ignored txn={txn_id}")
            return
        flight.txn_id = flight.txn_id or txn_id
        if self.reply_policy == "ignore":
            ctx.note(f"sms-unanswered txn={txn_id}")
            return
        flight.replied = True
        decision = b"YES" if self.reply_policy == "yes" else b"NO"
        ctx.note(f"sms-replied txn={txn_id} decision={decision.decode()}")
        ctx.send(Envelope(
            sender=self.name, receiver=self.bank, channel=Channel.SMS,
            msg_type="sms_reply", body={
                int(F.TXN_ID): txn_id.encode("utf-8"),
                int(F.DECISION): decision,
            }, request_id=self.request_id,
        ), delay=self.reply_delay)

    def _on_txn_result(self, ctx: Ctx, env: Envelope) -> None:
        result = env.body.get(int(F.RESULT), b"").decode("utf-8")
        reason = env.body.get(int(F.REASON), b"").decode("utf-8")
        ctx.note(f"result {result}" + (f" cause={reason}" if reason else ""))
        self._finish_current(ctx, result)

    # -- two-way handlers ----------------------------------------------------------

    def _on_invoice(self, ctx: Ctx, env: Envelope) -> None:
        body = env.body
        try:
            cert = MerchantCertificate.from_bytes(body[int(F.CERT)])
            amount = int.from_bytes(body[int(F.AMOUNT)], "big")
            invoice_number = body[int(F.INVOICE_NUMBER)].decode("utf-8")
            enc_info = body[int(F.ENC_MERCHANT_INFO)]
            if amount <= 0:
                raise ValueError("non-positive invoice amount")
        except (KeyError, ValueError, WireError) as exc:
            ctx.note(f"invoice-rejected cause={type(exc).__name__}")
            return
        self._invoice = {
            "invoice_number": invoice_number,
            "amount": amount,
            "payee_ref": cert.account_ref,
            "merchant_id": cert.merchant_id,
        }
        ctx.note(f"invoice-received number={invoice_number} amount={amount}")
        ctx.send(Envelope(
            sender=self.name, receiver=self.bank, channel=Channel.WEB,
            msg_type="merchant_auth_request", body={
                int(F.CERT): body[int(F.CERT)],
                int(F.ENC_MERCHANT_INFO): enc_info,
                int(F.MERCHANT_ID): cert.merchant_id.encode("utf-8"),
                int(F.MERCHANT_BANK_ID): cert.merchant_bank_id.encode("utf-8"),
                int(F.INVOICE_NUMBER): invoice_number.encode("utf-8"),
                int(F.AMOUNT): amount.to_bytes(8, "big"),
            }, cookie=self.session.cookie, request_id=self.request_id,
        ))

    def _on_merchant_auth_ack(self, ctx: Ctx, env: Envelope) -> None:
        verdict = env.body.get(int(F.VERDICT), b"").decode("utf-8")
        if verdict != "positive":
            reason = env.body.get(int(F.REASON), b"").decode("utf-8")
            ctx.note(f"merchant-auth-negative reason={reason or verdict}")
            self._finish_current(ctx, f"merchant-rejected:{reason or verdict}")
            return
        ctx.note("merchant-auth-positive")
        self._select_mode(ctx, self.mode)

    def _on_payment_notice(self, ctx: Ctx, env: Envelope) -> None:
        invoice = env.body.get(int(F.INVOICE_NUMBER), b"").decode("utf-8")
        amount = int.from_bytes(env.body.get(int(F.AMOUNT), b"\x00"), "big")
        ctx.note(f"payment-notice invoice={invoice} amount={amount}")
