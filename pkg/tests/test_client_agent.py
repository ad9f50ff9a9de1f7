"""Device-side behavior: vault handling, composition, and SMS discipline."""

from __future__ import annotations

import pytest

from ticpay.auth_server import BankActor, BankServer
from ticpay.client_agent import ClientAgent, change_password, provision_vault, unlock_and_pick
from ticpay.crypto import Pin
from ticpay.errors import IntegrityFailure
from ticpay.netsim import AdversaryScript, Simulation
from ticpay.payment import PayMode, PaymentOrder
from ticpay.tic_registry import TicRegistry
from ticpay.wire import Channel, Envelope, F

PIN = Pin.from_hex("00112233445566aa")
WRONG_PIN = Pin.from_hex("00112233445566ab")


def default_order(amount=2599):
    return PaymentOrder(
        mode=PayMode.ELECTRONIC_TRANSFER, payee_account="ACC-9914", amount=amount
    )


def build(client_kw=None, server_kw=None, provision=2, payments=None):
    server = BankServer(seed=7, **(server_kw or {}))
    server.enroll(
        username="alice",
        password="hunter2",
        pin=PIN,
        cell_number="+27-82-000-0001",
        account_id="ACC-1001",
        balance=100_000,
        vault_password="device-pass",
    )
    bank = BankActor(server, provision_plan={"alice": provision})
    kw = dict(
        name="alice",
        password="hunter2",
        pin=PIN,
        vault_password="device-pass",
        payments=payments if payments is not None else [default_order()],
    )
    kw.update(client_kw or {})
    client = ClientAgent(**kw)
    return server, bank, client


def run(actors, adversary=None, seed=5) -> Simulation:
    sim = Simulation(seed=seed, adversary=adversary)
    for actor in actors:
        sim.add_actor(actor)
    sim.run_to_quiescence()
    return sim


def notes(sim) -> list:
    return [f"{e.sender}: {e.note}" for e in sim.trace.find(kind="note")]


def sent_types(sim) -> list:
    return [e.msg_type for e in sim.trace.find(kind="send")]


# -- direct vault operations ---------------------------------------------------


def test_provision_unlock_pick_change_password():
    batch = TicRegistry().generate_tics("ACC-1001", 3, seed=b"ops")
    vault = provision_vault(batch, "first-pass")
    code, vault = unlock_and_pick(vault, "first-pass")
    assert code.value == batch.codes[0].value
    assert vault.remaining() == 2
    vault = change_password(vault, "first-pass", "second-pass")
    vault.lock()
    with pytest.raises(IntegrityFailure):
        unlock_and_pick(vault, "first-pass")
    code2, _ = unlock_and_pick(vault, "second-pass")
    assert code2.value == batch.codes[1].value


def test_provision_rejects_an_empty_batch():
    batch = TicRegistry().generate_tics("ACC-1001", 1, seed=b"ops")
    empty = type(batch)(account_id=batch.account_id, codes=(), batch_id=batch.batch_id)
    with pytest.raises(ValueError):
        provision_vault(empty, "pw")


def test_client_rejects_unknown_policies():
    with pytest.raises(ValueError):
        ClientAgent(name="a", password="p", pin=PIN, vault_password="v", reply_policy="maybe")
    with pytest.raises(ValueError):
        ClientAgent(name="a", password="p", pin=PIN, vault_password="v", pick_policy="last")


# -- end-to-end flows ------------------------------------------------------------


def test_happy_path_commits_and_spends_one_code():
    server, bank, client = build()
    sim = run([client, bank])
    assert client.outcomes == ["committed"]
    assert client.vault is not None and client.vault.remaining() == 1
    assert server.balances["ACC-1001"] == 100_000 - 2599
    log = notes(sim)
    for expected in (
        "alice: vault-received",
        "alice: session-established",
        "alice: submitted amount=2599",
        "alice: submit-accepted txn=T0001",
        "alice: sms-replied txn=T0001 decision=YES",
        "alice: result committed",
    ):
        assert any(expected in line for line in log), expected


def test_client_key_matches_server_key():
    server, bank, client = build()
    run([client, bank])
    # one session, established via the wrapped key, never sent raw
    session = next(iter(server.sessions.values()))
    assert client.session.secret_key.key_bytes == session.secret_key.key_bytes


def test_wrong_pin_stops_the_flow_before_any_submission():
    server, bank, client = build(client_kw={"pin": WRONG_PIN})
    sim = run([client, bank])
    assert client.outcomes == ["key-unwrap-failed"]
    assert "alice: key-unwrap-failed cause=IntegrityFailure" in notes(sim)
    for msg_type in ("mode_select", "payment_submit"):
        assert msg_type not in sent_types(sim)


def test_wrong_vault_password_sends_nothing():
    server, bank, client = build(client_kw={"vault_password": "not-it"})
    sim = run([client, bank])
    assert client.outcomes == ["vault-failure"]
    assert "alice: vault-failure cause=IntegrityFailure" in notes(sim)
    assert "payment_submit" not in sent_types(sim)
    assert server.registry.live_count("ACC-1001") == 2  # nothing spent


def test_bad_login_abandons_the_queue_instead_of_retrying_forever():
    server, bank, client = build(
        client_kw={"password": "wrong"},
        payments=[default_order(), default_order(700)],
    )
    sim = run([client, bank])
    assert client.outcomes == [
        "login-failed:bad-credentials",
        "login-failed:bad-credentials",
    ]
    assert sent_types(sim).count("login_request") == 2


def test_decline_policy_aborts_without_spending():
    server, bank, client = build(client_kw={"reply_policy": "no"})
    run([client, bank])
    assert client.outcomes == ["aborted"]
    assert server.balances["ACC-1001"] == 100_000
    # the code is still gone: acceptance consumed it before the decline
    assert server.registry.live_count("ACC-1001") == 1


def test_silence_times_out_server_side():
    server, bank, client = build(
        client_kw={"reply_policy": "ignore"},
        server_kw={"sms_deadline": 4},
    )
    sim = run([client, bank])
    assert client.outcomes == ["aborted"]
    log = notes(sim)
    assert any("sms-unanswered" in line for line in log)
    assert any("txn-aborted txn=T0001 cause=timeout" in line for line in log)
    assert server.balances["ACC-1001"] == 100_000


def test_spoofed_sms_prompt_is_ignored():
    server, bank, client = build()
    spoof = Envelope(
        sender="cbank",
        receiver="alice",
        channel=Channel.SMS,
        msg_type="sms_challenge",
        body={
            int(F.TXN_ID): b"T0099",
            int(F.AMOUNT): (9_999).to_bytes(8, "big"),
        },
    ).to_bytes()
    sim = run([client, bank], adversary=AdversaryScript(injections=[(3, spoof)]))
    assert "alice: sms-ignored txn=T0099" in notes(sim)
    # the genuine flow is unharmed and only one reply ever goes out
    assert client.outcomes == ["committed"]
    assert sent_types(sim).count("sms_reply") == 1


def test_unknown_message_types_are_noted_and_skipped():
    server, bank, client = build()
    stray = Envelope(
        sender="cbank", receiver="alice", channel=Channel.WEB, msg_type="marketing",
    ).to_bytes()
    sim = run([client, bank], adversary=AdversaryScript(injections=[(2, stray)]))
    assert "alice: ignored msg_type=marketing" in notes(sim)
    assert client.outcomes == ["committed"]


def test_two_queued_payments_use_two_sessions_and_two_codes():
    server, bank, client = build(payments=[default_order(), default_order(700)])
    sim = run([client, bank])
    assert client.outcomes == ["committed", "committed"]
    assert server.balances["ACC-1001"] == 100_000 - 2599 - 700
    assert client.vault.remaining() == 0
    assert sent_types(sim).count("login_request") == 2
    assert len(server.sessions) == 2


def test_exhausted_vault_fails_the_remaining_payment():
    server, bank, client = build(
        provision=1, payments=[default_order(), default_order(700)]
    )
    sim = run([client, bank])
    assert client.outcomes == ["committed", "vault-failure"]
    assert "alice: vault-failure cause=VaultEmpty" in notes(sim)
    assert server.balances["ACC-1001"] == 100_000 - 2599


def test_random_pick_policy_still_commits():
    server, bank, client = build(
        client_kw={"pick_policy": "random"}, provision=5
    )
    run([client, bank])
    assert client.outcomes == ["committed"]
    assert client.vault.remaining() == 4
