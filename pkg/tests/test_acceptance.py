"""Acceptance suite: one test per criterion, summarized at the end of the run."""

import random
import time
from itertools import product

import pytest

from evpay import agents as ag
from evpay.agents import Phase, SessionState, step_session
from evpay.channel import apply_update, close_channel, cosign, force_close, open_channel, propose_update, sign_state
from evpay.errors import BadSignature, IllegalTransition
from evpay.ledger import Kind, Ledger, View, balance_of, balances, confirmation_status, create_genesis, validate_dag
from evpay.metering import Meter, MeterReading, PriceSchedule, SupplyGroup, allocate_power, record_tick, session_total
from evpay.rng import Xoshiro256
from evpay.scenario import load_scenario
from evpay.sim import channel_transactions, replay, run, verify
from evpay.wallet import Address

from conftest import make_wallets
from corpus import CANONICAL, corpus, random_dag, replace_line
from oracles import brute_price, max_integer_level, water_fill_oracle


# 1 ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def big_ledger():
    start = time.perf_counter()
    ledger = random_dag(2024, 1000, difficulty=8)
    return ledger, time.perf_counter() - start


def test_criterion_1_ledger_suite(big_ledger):
    ledger, elapsed = big_ledger
    assert len(ledger) == 1001
    assert elapsed < 10, f"1000 attachments took {elapsed:.2f}s"
    assert validate_dag(ledger) == []

    ids = list(ledger.transactions)
    r = random.Random(1)
    for _ in range(5):
        k = r.randrange(1, len(ids))
        victim = ids[k].hex()

        bad = replace_line(ledger, k, lambda d: d.update(nonce=d["nonce"] + 1))
        assert [(f.kind, f.tx) for f in validate_dag(bad)] == [("BadPoW", victim)]

        def flip_sig(d):
            sig = bytearray.fromhex(d["signature"])
            sig[r.randrange(len(sig))] ^= 1 << r.randrange(8)
            d["signature"] = sig.hex()
        bad = replace_line(ledger, k, flip_sig)
        assert [(f.kind, f.tx) for f in validate_dag(bad)] == [("BadSignature", victim)]

        def bump(d):
            d["transfers"][0]["amount"] += 1
        bad = replace_line(ledger, k, bump)
        assert sorted((f.kind, f.tx) for f in validate_dag(bad)) == [
            ("BadSignature", victim), ("IdMismatch", victim)]

    # dangling reference: drop a line that later transactions approve
    referenced = [i for i in range(1, len(ids)) if ledger.approvers[ids[i]]]
    for k in r.sample(referenced, 5):
        lines = ledger.to_jsonl().splitlines()
        del lines[k]
        bad = Ledger.from_jsonl("\n".join(lines), 8)
        expected = sorted(("UnknownReference", a.hex()) for a in ledger.approvers[ids[k]])
        assert sorted((f.kind, f.tx) for f in validate_dag(bad)) == expected


# 2 ---------------------------------------------------------------------------

def brute_status(ledger, tx_id):
    approvers = {tx.id for tx in ledger.transactions.values() if tx_id in tx.approves}
    return View.CONFIRMED if tx_id == ledger.genesis_id or len(approvers) >= 2 else View.PENDING


def test_criterion_2_confirmation_rule():
    checked = 0
    for seed in range(40):
        ledger = random_dag(seed, 1 + (seed * 37) % 200)
        for tx_id in ledger.transactions:
            assert confirmation_status(ledger, tx_id) is brute_status(ledger, tx_id)
            checked += 1
    assert checked > 2000


# 3 ---------------------------------------------------------------------------

def test_criterion_3_channel_oracle():
    ws = make_wallets(2, "acc3")
    for seed in range(500):
        r = random.Random(seed)
        rng = Xoshiro256(seed)
        ledger = create_genesis([(w.address, 10_000) for w in ws], difficulty=0)
        deposit = r.randint(1, 2_000)
        channel = open_channel(ledger, ws[0], ws[1], deposit, rng)
        payments = [(r.randint(0, 1), r.randint(0, 300)) for _ in range(r.randint(0, 15))]
        refuse_at = r.randint(0, len(payments))  # index of the first payment never co-signed
        cosigned = []
        for n, (payer, amount) in enumerate(payments):
            if amount > channel.current.balances[payer]:
                continue
            state = propose_update(channel, ws[payer].address, amount)
            if n >= refuse_at:
                # counterparty withholds its signature; the update must not land
                with pytest.raises(BadSignature):
                    apply_update(channel, state, sign_state(ws[0], state), b"\0" * 64)
                break
            apply_update(channel, state, *cosign(state, *ws))
            cosigned.append((payer, amount))

        issuer = ws[r.randint(0, 1)]
        forced = refuse_at < len(payments) or r.random() < 0.5
        close_id = (force_close if forced else close_channel)(channel, ledger, rng, issuer)

        # oracle: replay the co-signed payments from the opening split
        split = [deposit, deposit]
        for payer, amount in cosigned:
            split[payer] -= amount
            split[1 - payer] += amount
        close = ledger[close_id]
        assert [t.amount for t in close.transfers] == split
        assert balance_of(ledger, ws[0].address) == 10_000 - deposit + split[0]
        assert balance_of(ledger, ws[1].address) == 10_000 - deposit + split[1]
        assert [tx.kind for tx in channel_transactions(ledger, channel.channel_id)] == [
            Kind.CHANNEL_OPEN, Kind.CHANNEL_CLOSE]
        assert len(ledger) == 3


# 4 ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def conserving_corpus():
    return [(seed, run(load_scenario(text))) for seed, text in corpus(50, confirm=True)]


def test_criterion_4_conservation(conserving_corpus):
    assert len(conserving_corpus) >= 50
    sessions = 0
    for seed, result in conserving_corpus:
        ledger = result.ledger
        minted = sum(t.amount for t in ledger[ledger.genesis_id].transfers)
        confirmed = balances(ledger, View.CONFIRMED)
        wallets = sum(v for a, v in confirmed.items() if a not in ledger.escrows)
        escrowed = sum(v for a, v in confirmed.items() if a in ledger.escrows)
        assert wallets == minted, f"scenario {seed}"
        assert escrowed == 0, f"scenario {seed}"
        assert all(v >= 0 for v in confirmed.values())
        sessions += len(result.report["sessions"])
    assert sessions > 50


# 5 ---------------------------------------------------------------------------

def test_criterion_5_billing_oracle():
    r = random.Random(5)
    boundary_hits = 0
    for _ in range(1000):
        steps = [(0, r.randint(0, 20))]
        for _ in range(r.randint(0, 4)):
            steps.append((steps[-1][0] + r.randint(1, 10), r.randint(0, 20)))
        schedule = PriceSchedule(tuple(steps))
        starts = {t for t, _ in steps}
        meter = Meter("s")
        tick, folded = 0, 0
        for _ in range(r.randint(0, 40)):
            tick += r.randint(0, 3)
            delta = r.randint(0, 5000)
            record_tick(meter, delta, tick, schedule)
            folded += delta * brute_price(steps, tick)
            boundary_hits += tick in starts
        assert session_total(meter) == folded
    assert boundary_hits > 500


# 6 ---------------------------------------------------------------------------

def test_criterion_6_water_filling():
    values = (0, 5, 10, 15, 20, 25)
    cases = 0
    for n in range(1, 5):
        for demands in product(values, repeat=n):
            for capacity in (10, 20, 30, 40):
                group = SupplyGroup(capacity, tuple((f"s{i}", 1000, d) for i, d in enumerate(demands)))
                got = [g for _, g in allocate_power(group)]
                assert got == water_fill_oracle(capacity, list(demands)), (capacity, demands)
                assert got == max_integer_level(capacity, list(demands))
                assert sum(got) <= capacity
                cases += 1
    assert cases == 4 * (6 + 36 + 216 + 1296)


# 7 ---------------------------------------------------------------------------

def test_criterion_7_case_study():
    scenario = load_scenario(CANONICAL)
    start = time.perf_counter()
    result = run(scenario)
    elapsed = time.perf_counter() - start
    session = result.report["sessions"][0]
    readings = result.events.of_type("MeterReading")
    assert session["final_phase"] == "Inactive"
    assert len(readings) == 80 and all(r["delta_wh"] == 1000 for r in readings)
    assert session["total_cost"] == 80_000 * 5 == 400_000

    deposit = -(-5 * 80_000 * 5 // 4)  # ceil(1.25 * E * p)
    assert session["deposit"] == deposit == 500_000
    close = next(tx for tx in result.ledger.transactions.values() if tx.kind is Kind.CHANNEL_CLOSE)
    ev, cs = scenario.wallet("ev1").address, scenario.wallet("cs1").address
    amounts = {t.recipient: t.amount for t in close.transfers}
    assert amounts[cs] - deposit == 400_000
    assert amounts[ev] == deposit - 400_000 == 100_000
    assert balance_of(result.ledger, cs) == 1_400_000
    assert balance_of(result.ledger, ev) == 600_000
    assert len(result.ledger) == 3
    assert verify(result.events.to_jsonl(), result.ledger.to_jsonl()) == []
    assert elapsed < 1, f"canonical run took {elapsed:.2f}s"


# 8 ---------------------------------------------------------------------------

def test_criterion_8_determinism():
    for seed, text in [(-1, CANONICAL)] + corpus(50):
        scenario = load_scenario(text)
        events = run(scenario).events.to_jsonl()
        assert replay(events, scenario), f"scenario {seed}"
        assert not replay(events, scenario.with_seed((scenario.seed + 1) % 2**64)), f"scenario {seed}"


# 9 ---------------------------------------------------------------------------

TABLE = {
    (Phase.IDLE, "BmsLow"): Phase.DISCOVERING,
    (Phase.DISCOVERING, "StationSelected"): Phase.AUTHENTICATING,
    (Phase.AUTHENTICATING, "AuthOk"): Phase.OPENING_CHANNEL,
    (Phase.OPENING_CHANNEL, "ChannelOpened"): Phase.CHARGING,
    (Phase.CHARGING, "MeterReadingEvent"): Phase.CHARGING,
    (Phase.CHARGING, "TargetReached"): Phase.SETTLING,
    (Phase.CHARGING, "CounterpartyRefusal"): Phase.SETTLING,
    (Phase.SETTLING, "Settled"): Phase.INACTIVE,
}
TERMINAL = {Phase.INACTIVE, Phase.ABORTED}


def random_event(r):
    reading = MeterReading("s", r.randint(0, 9), r.randint(0, 999), r.randint(0, 99), 5, 0)
    return r.choice([
        lambda: ag.BmsLow(r.randint(0, 10**6)),
        lambda: ag.StationSelected(f"cs{r.randint(0, 3)}", r.randint(0, 9)),
        lambda: ag.AuthOk(Address(bytes(r.getrandbits(8) for _ in range(32)))),
        lambda: ag.ChannelOpened(bytes(32), r.randint(1, 10**6)),
        lambda: ag.MeterReadingEvent(reading),
        lambda: ag.TargetReached(),
        lambda: ag.CounterpartyRefusal(r.choice(["station", "vehicle"])),
        lambda: ag.Settled(bytes(32)),
        lambda: ag.FatalError("fuzz"),
        lambda: "not an event",
        lambda: None,
    ])()


def test_criterion_9_fuzzing():
    r = random.Random(9)
    phases = list(Phase)
    state = SessionState("fuzz")
    transitions = illegal = 0
    for _ in range(10_000):
        if state.phase in TERMINAL and r.random() < 0.5:
            state = SessionState("fuzz", phase=r.choice(phases))
        event = random_event(r)
        name = type(event).__name__
        try:
            new, actions = step_session(state, event)
        except IllegalTransition:
            assert state.phase in TERMINAL or (
                (state.phase, name) not in TABLE and name != "FatalError")
            illegal += 1
            continue
        assert state.phase not in TERMINAL
        expected = Phase.ABORTED if name == "FatalError" else TABLE[(state.phase, name)]
        assert new.phase is expected and new.phase in phases
        assert isinstance(actions, list)
        transitions += 1
        state = new
    assert transitions > 1000 and illegal > 1000
