"""Bank-side authentication server and payment state machine.

One session walks LoggedIn, ModeSelected, AwaitingTic, AwaitingSms,
Closed in order, never backward, and carries at most one pending
transaction. Authentication is layered: password login, then a
PIN-wrapped per-session key, then a one-time TIC, then an SMS reply;
a transaction commits only when every layer holds.

Failure answers for payment submission are deliberately opaque: one
constant rejection body regardless of internal cause, so an attacker
probing with forged ciphertexts learns nothing from the response. The
precise cause goes to the trace instead.

`BankServer` is the transport-free core (directly callable in tests);
`BankActor` adapts it to envelopes, timers, and the SMS channel.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

from .crypto import CryptoSuite, Pin, SecretKey, derive_tic_key
from .errors import IntegrityFailure, RoleMismatch, WireError
from .netsim import Actor, Ctx, digest16
from .payment import PayMode, PaymentOrder
from .rng import DeterministicRng
from .tic_registry import RegistryConfig, TicRegistry, code_digest
from .vault import TicVault
from .wire import Channel, Ciphertext, Envelope, F, Header

DEFAULT_SMS_DEADLINE = 300
DEFAULT_LOCKOUT_AFTER = 5

GENERIC_DENIAL_REASON = b"authentication-failed"


def generic_denial_body() -> Dict[int, bytes]:
    """The one rejection payload every failed submission gets, verbatim."""
    return {int(F.STATUS): b"\x00", int(F.REASON): GENERIC_DENIAL_REASON}


class Phase(Enum):
    LOGGED_IN = "LoggedIn"
    MODE_SELECTED = "ModeSelected"
    AWAITING_TIC = "AwaitingTic"
    AWAITING_SMS = "AwaitingSms"
    CLOSED = "Closed"


PHASE_ORDER = [Phase.LOGGED_IN, Phase.MODE_SELECTED, Phase.AWAITING_TIC,
               Phase.AWAITING_SMS, Phase.CLOSED]


@dataclass
class AccountRecord:
    """One customer as the bank knows them; passwords only as verifiers."""

    account_id: str
    username: str
    salt: bytes
    password_digest: bytes
    pin: Pin
    cell_number: str
    vault_password: str  # enrolled device password used to seal provisioned codes

    @staticmethod
    def digest(salt: bytes, password: str) -> bytes:
        return hashlib.sha256(salt + password.encode("utf-8")).digest()

    def verify_password(self, password: str) -> bool:
        return AccountRecord.digest(self.salt, password) == self.password_digest


class TxnState(Enum):
    PENDING = "pending"
    COMMITTED = "committed"
    ABORTED = "aborted"


@dataclass
class PendingTransaction:
    txn_id: str
    session_id: str
    cookie: str
    order: PaymentOrder
    tic_digest: str
    account_id: str
    sms_sent_at: int
    expiry_deadline: int
    request_id: str = ""
    state: TxnState = TxnState.PENDING
    abort_cause: Optional[str] = None


@dataclass
class Session:
    session_id: str
    cookie: str
    username: str
    account_id: str
    secret_key: SecretKey
    created_at: int
    phase: Phase = Phase.LOGGED_IN
    mode: Optional[PayMode] = None
    txn_id: Optional[str] = None
    phase_history: List[Phase] = field(default_factory=lambda: [Phase.LOGGED_IN])

    def advance(self, new_phase: Phase) -> None:
        # Forward-only; skipping ahead is allowed (a failed submit jumps
        # straight to Closed) but the history must stay ordered.
        if PHASE_ORDER.index(new_phase) < PHASE_ORDER.index(self.phase):
            raise ValueError(f"phase would move backward: {self.phase} -> {new_phase}")
        if new_phase is not self.phase:
            self.phase = new_phase
            self.phase_history.append(new_phase)


# -- operation results --------------------------------------------------------


@dataclass(frozen=True)
class LoginResult:
    ok: bool
    reason: Optional[str] = None  # bad-credentials | locked-out
    cookie: Optional[str] = None
    session_id: Optional[str] = None
    wrapped_secret: Optional[Ciphertext] = None
    welcome: Optional[str] = None


@dataclass(frozen=True)
class ModeResult:
    ok: bool
    reason: Optional[str] = None  # unknown-session | wrong-phase | bad-mode


@dataclass(frozen=True)
class SubmitResult:
    ok: bool
    cause: Optional[str] = None  # internal only; external answer is generic
    txn_id: Optional[str] = None
    session_id: Optional[str] = None


@dataclass(frozen=True)
class ReplyResult:
    ok: bool
    committed: bool = False
    reason: Optional[str] = None  # unknown-txn | already-final
    cause: Optional[str] = None   # declined | timeout | insufficient-funds
    txn: Optional[PendingTransaction] = None


class BankServer:
    """Accounts, sessions, registry, and the money book for one bank.

    `seed` drives every random artifact (salts, cookies, session keys)
    so two servers built alike behave byte-identically.
    """

    def __init__(
        self,
        name: str = "cbank",
        seed: int | str | bytes = 0,
        registry: Optional[TicRegistry] = None,
        suite: Optional[CryptoSuite] = None,
        cipher: str = "aes-gcm",
        sms_deadline: int = DEFAULT_SMS_DEADLINE,
        lockout_after: int = DEFAULT_LOCKOUT_AFTER,
        payment_gate: Optional[Callable[[str], bool]] = None,
    ):
        self.name = name
        self.registry = registry or TicRegistry(RegistryConfig())
        self.cipher_name = cipher
        self.suite = suite or CryptoSuite(cipher)
        self.sms_deadline = sms_deadline
        self.lockout_after = lockout_after
        # request_id -> may this payment proceed; one-way traffic has no
        # request_id and passes trivially.
        self.payment_gate = payment_gate
        self._rng = DeterministicRng(seed, f"bank|{name}")
        # One long-lived stream: recreating it per login would replay the
        # same cookie value and never satisfy the uniqueness loop.
        self._cookie_rng = self._rng.child("cookies")
        self.accounts: Dict[str, AccountRecord] = {}          # by username
        self.accounts_by_id: Dict[str, AccountRecord] = {}
        self.balances: Dict[str, int] = {}                    # account_id -> minor units
        self.clearing = 0  # value owed to/from other banks; keeps totals constant
        self.sessions: Dict[str, Session] = {}                # by cookie
        self.txns: Dict[str, PendingTransaction] = {}
        self.failed_logins: Dict[str, int] = {}
        self.locked: set = set()
        self._session_counter = 0
        self._txn_counter = 0

    # -- enrollment ----------------------------------------------------------

    def enroll(
        self,
        username: str,
        password: str,
        pin: Pin,
        cell_number: str,
        account_id: str,
        balance: int,
        vault_password: str,
    ) -> AccountRecord:
        if username in self.accounts:
            raise ValueError(f"username {username!r} already enrolled")
        salt = self._rng.child(f"salt|{username}").take(16)
        record = AccountRecord(
            account_id=account_id,
            username=username,
            salt=salt,
            password_digest=AccountRecord.digest(salt, password),
            pin=pin,
            cell_number=cell_number,
            vault_password=vault_password,
        )
        self.accounts[username] = record
        self.accounts_by_id[account_id] = record
        self.balances[account_id] = balance
        return record

    def total_funds(self) -> int:
        return sum(self.balances.values()) + self.clearing

    # -- provisioning ---------------------------------------------------------

    def provision_codes(self, username: str, count: int) -> bytes:
        """Mint a batch and seal it under the customer's enrolled device
        password; the returned bytes are safe to send in the clear."""
        record = self.accounts[username]
        batch = self.registry.generate_tics(
            record.account_id, count, seed=self._rng.child(f"batch|{username}").take(16)
        )
        salt = self._rng.child(f"vault-salt|{username}").take(16)
        vault = TicVault.provision(
            batch.codes, record.vault_password, salt=salt,
            alphabet=self.registry.config.alphabet, cipher=self.cipher_name,
        )
        return vault.to_bytes()

    # -- login -----------------------------------------------------------------

    def login(self, username: str, password: str, now: int = 0) -> LoginResult:
        record = self.accounts.get(username)
        if record is None:
            return LoginResult(ok=False, reason="bad-credentials")
        if username in self.locked:
            return LoginResult(ok=False, reason="locked-out")
        if not record.verify_password(password):
            count = self.failed_logins.get(username, 0) + 1
            self.failed_logins[username] = count
            if count >= self.lockout_after:
                self.locked.add(username)
            return LoginResult(ok=False, reason="bad-credentials")
        self.failed_logins[username] = 0

        self._session_counter += 1
        session_id = f"S{self._session_counter:04d}"
        cookie = self._cookie_rng.token(16)
        while cookie in self.sessions:  # vanishingly unlikely; uniqueness is a contract
            cookie = self._cookie_rng.token(16)
        key_rng = self._rng.child(f"session-key|{session_id}")
        secret_key = SecretKey(key_bytes=key_rng.take(32), session_id=session_id)
        session = Session(
            session_id=session_id,
            cookie=cookie,
            username=username,
            account_id=record.account_id,
            secret_key=secret_key,
            created_at=now,
        )
        self.sessions[cookie] = session
        wrapped = self.suite.wrap_secret_key(secret_key, record.pin, session_handle=cookie)
        return LoginResult(
            ok=True,
            cookie=cookie,
            session_id=session_id,
            wrapped_secret=wrapped,
            welcome=f"Welcome {username}, session established",
        )

    # -- payment mode ------------------------------------------------------------

    def select_mode(self, cookie: str, mode_name: str) -> ModeResult:
        session = self.sessions.get(cookie)
        if session is None:
            return ModeResult(ok=False, reason="unknown-session")
        if session.phase is not Phase.LOGGED_IN:
            return ModeResult(ok=False, reason="wrong-phase")
        try:
            mode = PayMode.from_name(mode_name)
        except ValueError:
            return ModeResult(ok=False, reason="bad-mode")
        session.mode = mode
        session.advance(Phase.MODE_SELECTED)
        session.advance(Phase.AWAITING_TIC)
        return ModeResult(ok=True)

    # -- payment submission --------------------------------------------------------

    def submit_payment(
        self,
        cookie: str,
        enc_tic: bytes | Ciphertext,
        enc_order: bytes | Ciphertext,
        now: int = 0,
        request_id: str = "",
    ) -> SubmitResult:
        """Three-stage check: TIC decrypts under the session key, matches a
        live issued code (consumed on match), and then keys the order's own
        decryption. Any miss anywhere denies the transaction and closes the
        session; the caller must answer with the one generic denial."""
        session = self.sessions.get(cookie)

        def fail(cause: str) -> SubmitResult:
            if session is not None:
                session.advance(Phase.CLOSED)
            return SubmitResult(ok=False, cause=cause,
                                session_id=session.session_id if session else None)

        if session is None:
            return SubmitResult(ok=False, cause="unknown-session")
        if session.phase is not Phase.AWAITING_TIC:
            return fail("wrong-phase")
        if request_id and (self.payment_gate is None or not self.payment_gate(request_id)):
            return fail("merchant-not-authorized")

        try:
            enc_tic = enc_tic if isinstance(enc_tic, Ciphertext) else Ciphertext.from_bytes(enc_tic)
            tic_value = self.suite.decrypt_tic(enc_tic, session.secret_key, cookie)
        except (WireError, IntegrityFailure, RoleMismatch):
            return fail("tic-decrypt-failed")

        verdict = self.registry.verify_and_consume(session.account_id, tic_value, now=now)
        if not verdict.accepted:
            return fail(f"tic-{verdict.reason}")

        # The code is now cancelled for any future transaction, but it still
        # keys this one's order decryption.
        try:
            enc_order = (enc_order if isinstance(enc_order, Ciphertext)
                         else Ciphertext.from_bytes(enc_order))
            order = self.suite.decrypt_payment(enc_order, tic_value, cookie)
            order.validate()
        except (WireError, IntegrityFailure, RoleMismatch, ValueError):
            return fail("order-decrypt-failed")

        if session.mode is not None and order.mode != session.mode:
            return fail("mode-mismatch")
        if self.balances.get(session.account_id, 0) < order.amount:
            return fail("insufficient-funds")

        self._txn_counter += 1
        txn_id = f"T{self._txn_counter:04d}"
        txn = PendingTransaction(
            txn_id=txn_id,
            session_id=session.session_id,
            cookie=cookie,
            order=order,
            tic_digest=code_digest(tic_value),
            account_id=session.account_id,
            sms_sent_at=now,
            expiry_deadline=now + self.sms_deadline,
            request_id=request_id,
        )
        self.txns[txn_id] = txn
        session.txn_id = txn_id
        session.advance(Phase.AWAITING_SMS)
        return SubmitResult(ok=True, txn_id=txn_id, session_id=session.session_id)

    # -- confirmation ---------------------------------------------------------------

    def _close_session_of(self, txn: PendingTransaction) -> None:
        session = self.sessions.get(txn.cookie)
        if session is not None and session.phase is not Phase.CLOSED:
            session.advance(Phase.CLOSED)

    def _commit(self, txn: PendingTransaction) -> ReplyResult:
        payer = txn.account_id
        amount = txn.order.amount
        if self.balances.get(payer, 0) < amount:
            txn.state = TxnState.ABORTED
            txn.abort_cause = "insufficient-funds"
            self._close_session_of(txn)
            return ReplyResult(ok=True, committed=False, cause="insufficient-funds", txn=txn)
        # Both legs move together: value leaves the payer and lands either in
        # a local account or in clearing (owed to another bank), so the bank
        # total is unchanged at every instant.
        self.balances[payer] -= amount
        payee = txn.order.payee_account
        if payee in self.balances:
            self.balances[payee] += amount
        else:
            self.clearing += amount
        txn.state = TxnState.COMMITTED
        self._close_session_of(txn)
        return ReplyResult(ok=True, committed=True, txn=txn)

    def _abort(self, txn: PendingTransaction, cause: str) -> ReplyResult:
        txn.state = TxnState.ABORTED
        txn.abort_cause = cause
        self._close_session_of(txn)
        return ReplyResult(ok=True, committed=False, cause=cause, txn=txn)

    def handle_sms_reply(self, txn_id: str, reply: str, now: int = 0) -> ReplyResult:
        txn = self.txns.get(txn_id)
        if txn is None:
            return ReplyResult(ok=False, reason="unknown-txn")
        if txn.state is not TxnState.PENDING:
            return ReplyResult(ok=False, reason="already-final", txn=txn)
        if now > txn.expiry_deadline:
            return self._abort(txn, "timeout")
        if reply.strip().upper() == "YES":
            return self._commit(txn)
        return self._abort(txn, "declined")

    def expire_txn(self, txn_id: str, now: int) -> Optional[ReplyResult]:
        """Deadline sweep for one transaction; no-op if already final."""
        txn = self.txns.get(txn_id)
        if txn is None or txn.state is not TxnState.PENDING:
            return None
        if now >= txn.expiry_deadline:
            return self._abort(txn, "timeout")
        return None

    # -- inter-bank settlement (incoming side) ------------------------------------

    def credit_external(self, account_id: str, amount: int) -> None:
        """Book funds arriving from another bank for a local account."""
        if account_id not in self.balances:
            raise ValueError(f"no account {account_id!r} at {self.name}")
        self.clearing -= amount
        self.balances[account_id] += amount


class BankActor(Actor):
    """Envelope adapter around BankServer: routing, timers, SMS dispatch.

    `provision_plan` maps usernames to TIC batch sizes delivered at start.
    A two-way gateway, when attached, takes the merchant-auth message types
    and the settlement hook; without one the bank speaks pure one-way.
    """

    def __init__(self, server: BankServer, provision_plan: Optional[Dict[str, int]] = None):
        self.server = server
        self.name = server.name
        self.role = "customer-bank"
        self.provision_plan = dict(provision_plan or {})
        self.gateway = None  # wired by the world builder for two-way runs

    # -- helpers -------------------------------------------------------------

    def _reply(self, ctx: Ctx, env: Envelope, msg_type: str,
               body: Dict[int, bytes], cookie: str = "") -> None:
        ctx.send(Envelope(
            sender=self.name, receiver=env.sender, channel=env.channel,
            msg_type=msg_type, body=body, cookie=cookie, request_id=env.request_id,
        ))

    def _note_phase(self, ctx: Ctx, session: Session) -> None:
        ctx.note(f"phase session={session.session_id} -> {session.phase.value}")

    def _send_txn_result(self, ctx: Ctx, txn: PendingTransaction, committed: bool,
                         cause: Optional[str]) -> None:
        session = self.server.sessions.get(txn.cookie)
        receiver = session.username if session else txn.cookie
        body = {
            int(F.STATUS): b"\x01" if committed else b"\x00",
            int(F.TXN_ID): txn.txn_id.encode("utf-8"),
            int(F.RESULT): b"committed" if committed else b"aborted",
        }
        if cause:
            body[int(F.REASON)] = cause.encode("utf-8")
        ctx.send(Envelope(
            sender=self.name, receiver=receiver, channel=Channel.WEB,
            msg_type="txn_result", body=body, request_id=txn.request_id,
        ))
        if session:
            self._note_phase(ctx, session)

    def _finish_txn(self, ctx: Ctx, result: ReplyResult) -> None:
        txn = result.txn
        if result.committed:
            ctx.note(f"txn-committed txn={txn.txn_id} amount={txn.order.amount} "
                     f"payee={digest16(txn.order.payee_account.encode())}")
        else:
            ctx.note(f"txn-aborted txn={txn.txn_id} cause={result.cause}")
        self._send_txn_result(ctx, txn, result.committed, result.cause)
        if result.committed and self.gateway is not None and txn.request_id:
            self.gateway.on_committed(ctx, txn)

    # -- lifecycle -------------------------------------------------------------

    def on_start(self, ctx: Ctx) -> None:
        for username, count in self.provision_plan.items():
            if count < 1:
                continue
            vault_bytes = self.server.provision_codes(username, count)
            ctx.note(f"provisioned user={username} codes={count}")
            ctx.send(Envelope(
                sender=self.name, receiver=username, channel=Channel.WEB,
                msg_type="tic_provision", body={int(F.VAULT): vault_bytes},
            ))

    def on_message(self, ctx: Ctx, env: Envelope) -> None:
        handler = {
            "login_request": self._on_login,
            "mode_select": self._on_mode_select,
            "payment_submit": self._on_submit,
            "sms_reply": self._on_sms_reply,
        }.get(env.msg_type)
        if handler is not None:
            handler(ctx, env)
            return
        if self.gateway is not None and self.gateway.handles(env.msg_type):
            self.gateway.on_message(ctx, env)
            return
        ctx.note(f"ignored msg_type={env.msg_type}")

    def on_malformed(self, ctx: Ctx, header: Header) -> None:
        # A submission that does not even parse gets the same opaque denial
        # as any other failed submission, and costs the session either way.
        ctx.note(f"malformed msg_type={header.msg_type}")
        if header.msg_type != "payment_submit":
            return
        session = self.server.sessions.get(header.cookie)
        if session is not None and session.phase is not Phase.CLOSED:
            session.advance(Phase.CLOSED)
            self._note_phase(ctx, session)
        ctx.note("submit-rejected cause=malformed-envelope")
        ctx.send(Envelope(
            sender=self.name, receiver=header.sender, channel=header.channel,
            msg_type="submit_ack", body=generic_denial_body(),
            request_id=header.request_id,
        ))

    def on_timer(self, ctx: Ctx, label: str) -> None:
        if label.startswith("sms-expire|"):
            txn_id = label.split("|", 1)[1]
            result = self.server.expire_txn(txn_id, now=ctx.now)
            if result is not None:
                self._finish_txn(ctx, result)
        elif self.gateway is not None:
            self.gateway.on_timer(ctx, label)

    # -- message handlers --------------------------------------------------------

    def _on_login(self, ctx: Ctx, env: Envelope) -> None:
        username = env.body.get(int(F.USERNAME), b"").decode("utf-8")
        password = env.body.get(int(F.PASSWORD), b"").decode("utf-8")
        result = self.server.login(username, password, now=ctx.now)
        if not result.ok:
            ctx.note(f"login-rejected user={username} cause={result.reason}")
            self._reply(ctx, env, "login_response", {
                int(F.STATUS): b"\x00",
                int(F.REASON): result.reason.encode("utf-8"),
            })
            return
        ctx.note(f"login-ok user={username} session={result.session_id}")
        session = self.server.sessions[result.cookie]
        self._note_phase(ctx, session)
        self._reply(ctx, env, "login_response", {
            int(F.STATUS): b"\x01",
            int(F.WRAPPED_KEY): result.wrapped_secret.to_bytes(),
            int(F.WELCOME): result.welcome.encode("utf-8"),
        }, cookie=result.cookie)

    def _on_mode_select(self, ctx: Ctx, env: Envelope) -> None:
        mode_name = env.body.get(int(F.MODE), b"").decode("utf-8")
        result = self.server.select_mode(env.cookie, mode_name)
        if result.ok:
            session = self.server.sessions[env.cookie]
            self._note_phase(ctx, session)
            self._reply(ctx, env, "mode_ack", {int(F.STATUS): b"\x01"}, cookie=env.cookie)
        else:
            ctx.note(f"mode-rejected cause={result.reason}")
            self._reply(ctx, env, "mode_ack", {
                int(F.STATUS): b"\x00",
                int(F.REASON): result.reason.encode("utf-8"),
            }, cookie=env.cookie)

    def _on_submit(self, ctx: Ctx, env: Envelope) -> None:
        enc_tic = env.body.get(int(F.ENC_TIC), b"")
        enc_order = env.body.get(int(F.ENC_ORDER), b"")
        result = self.server.submit_payment(
            env.cookie, enc_tic, enc_order, now=ctx.now, request_id=env.request_id,
        )
        session = self.server.sessions.get(env.cookie)
        if not result.ok:
            ctx.note(f"submit-rejected cause={result.cause}")
            if session is not None:
                self._note_phase(ctx, session)
            self._reply(ctx, env, "submit_ack", generic_denial_body(), cookie=env.cookie)
            return
        txn = self.server.txns[result.txn_id]
        record = self.server.accounts_by_id[txn.account_id]
        ctx.note(f"submit-accepted txn={txn.txn_id} session={result.session_id} "
                 f"tic={txn.tic_digest}")
        self._note_phase(ctx, session)
        self._reply(ctx, env, "submit_ack", {
            int(F.STATUS): b"\x01",
            int(F.TXN_ID): txn.txn_id.encode("utf-8"),
        }, cookie=env.cookie)
        ctx.send(Envelope(
            sender=self.name, receiver=session.username, channel=Channel.SMS,
            msg_type="sms_challenge", body={
                int(F.TXN_ID): txn.txn_id.encode("utf-8"),
                int(F.AMOUNT): txn.order.amount.to_bytes(8, "big"),
                int(F.ACCOUNT_REF): digest16(txn.order.payee_account.encode()).encode(),
                int(F.CELL): record.cell_number.encode("utf-8"),
            }, request_id=env.request_id,
        ))
        ctx.set_timer(f"sms-expire|{txn.txn_id}", delay=self.server.sms_deadline + 1)

    def _on_sms_reply(self, ctx: Ctx, env: Envelope) -> None:
        txn_id = env.body.get(int(F.TXN_ID), b"").decode("utf-8")
        decision = env.body.get(int(F.DECISION), b"").decode("utf-8")
        result = self.server.handle_sms_reply(txn_id, decision, now=ctx.now)
        if not result.ok:
            ctx.note(f"sms-reply-ignored txn={txn_id} cause={result.reason}")
            return
        self._finish_txn(ctx, result)
