import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedcorr.errors import ShapeMismatch
from fedcorr.ledger import CommDelta, CommLedger


def test_delta_totals():
    d = CommDelta(uplink=[3, 4], index_overhead=2, downlink_broadcast=10, downlink_basis=5, downlink_per_client=[1, 2])
    assert d.uplink_total == 7
    assert d.downlink_total == 18
    assert d.total == 25
    # index overhead is reported but never folded into the uplink
    assert d.as_dict()["uplink_total"] == 7 and d.as_dict()["index_overhead"] == 2


def test_delta_accumulates():
    d = CommDelta.empty(2)
    d += CommDelta(uplink=[1, 2], downlink_basis=3)
    d += CommDelta(uplink=[4, 5], downlink_per_client=[6, 7], index_overhead=1)
    assert d.uplink == [5, 7]
    assert d.downlink_per_client == [6, 7]
    assert d.downlink_basis == 3 and d.index_overhead == 1


def test_delta_client_count_mismatch():
    d = CommDelta.empty(2)
    with pytest.raises(ShapeMismatch):
        d += CommDelta.empty(3)


def test_ledger_windowed_totals():
    led = CommLedger()
    for t in range(1, 4):
        led.record(t, CommDelta(uplink=[t, t], downlink_broadcast=10, downlink_basis=t, downlink_per_client=[1, 1]))
    assert led.uplink() == 12
    assert led.uplink(upto=2) == 6
    assert led.downlink(upto=1) == 13
    assert led.basis_downlink() == 6 + 6
    assert led.total() == led.uplink() + led.downlink()


rounds = st.lists(
    st.tuples(
        st.lists(st.integers(0, 10**6), min_size=3, max_size=3),
        st.integers(0, 10**6),
        st.integers(0, 10**6),
    ),
    max_size=20,
)


@given(rounds)
def test_ledger_totals_equal_sum_of_records(entries):
    led = CommLedger()
    for t, (up, bcast, basis) in enumerate(entries, start=1):
        led.record(t, CommDelta(uplink=up, downlink_broadcast=bcast, downlink_basis=basis))
    assert led.uplink() == sum(sum(u) for u, _, _ in entries)
    assert led.downlink() == sum(b + s for _, b, s in entries)
    assert led.total() == led.uplink() + led.downlink()
