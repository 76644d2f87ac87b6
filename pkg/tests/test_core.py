"""Pattern model, validation, matcher, and grammar round-trips."""

import math

import pytest
from hypothesis import assume, given, strategies as st

from beaconveil import (DEFAULT_BAND, ACCEPTED, IN_PROGRESS, REJECTED,
                        BandPlan, MatcherError, PatternError, RejectReason,
                        SecretPattern, Triplet, TxPattern, ensure_valid,
                        match_step, new_matcher, parse_pattern,
                        parse_pattern_file, pattern_space_size,
                        render_pattern, validate_pattern)


def tp(bits):
    return TxPattern(bits)


def make(pid, *trips):
    return SecretPattern(pid, tuple(
        Triplet(tp(b), ch, iv) for b, ch, iv in trips))


GOOD = make("good", ("010", 1, None), ("101", 6, 1), ("010", 6, 2), ("101", 11, 2))


class TestTxPattern:
    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            tp("01a")

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            tp("")

    def test_length(self):
        assert len(tp("0110")) == 4
        assert str(tp("0110")) == "0110"


class TestValidation:
    def test_good_pattern_passes(self):
        assert validate_pattern(GOOD).ok
        ensure_valid(GOOD)  # must not raise

    def test_single_triplet_is_too_short(self):
        p = make("p", ("01", 1, None))
        codes = {v.code for v in validate_pattern(p).violations}
        assert "bad-length" in codes

    def test_mixed_bit_lengths(self):
        p = make("p", ("01", 1, None), ("011", 1, 1))
        codes = {v.code for v in validate_pattern(p).violations}
        assert "mixed-n" in codes

    def test_all_equal_bits(self):
        p = make("p", ("00", 1, None), ("01", 1, 1))
        codes = {v.code for v in validate_pattern(p).violations}
        assert "all-equal-bits" in codes

    def test_first_triplet_must_not_carry_interval(self):
        p = make("p", ("01", 1, 1), ("10", 1, 1))
        codes = {v.code for v in validate_pattern(p).violations}
        assert "bad-first-interval" in codes

    def test_second_interval_must_be_one(self):
        p = make("p", ("01", 1, None), ("10", 1, 2))
        codes = {v.code for v in validate_pattern(p).violations}
        assert "bad-second-interval" in codes

    def test_missing_interval_after_first(self):
        p = make("p", ("01", 1, None), ("10", 1, 1), ("01", 1, None))
        codes = {v.code for v in validate_pattern(p).violations}
        assert "missing-interval" in codes

    def test_channel_out_of_band(self):
        p = make("p", ("01", 15, None), ("10", 1, 1))
        codes = {v.code for v in validate_pattern(p).violations}
        assert "channel-out-of-band" in codes
        # same pattern is fine on a wider band
        wide = BandPlan("wide", 20, 2412.0, 5.0)
        assert "channel-out-of-band" not in {
            v.code for v in validate_pattern(p, band=wide).violations}

    def test_interval_out_of_range(self):
        p = make("p", ("01", 1, None), ("10", 1, 1), ("01", 1, 17))
        codes = {v.code for v in validate_pattern(p).violations}
        assert "interval-out-of-range" in codes
        assert "interval-out-of-range" not in {
            v.code for v in validate_pattern(p, max_tu=17).violations}

    def test_ensure_valid_raises_with_position(self):
        p = make("p", ("00", 1, None), ("01", 1, 1))
        with pytest.raises(PatternError):
            ensure_valid(p)

    def test_bits_too_long(self):
        p = make("p", ("01" * 33, 1, None), ("10" * 33, 1, 1))
        codes = {v.code for v in validate_pattern(p).violations}
        assert "bad-bit-length" in codes


class TestSpaceSize:
    def test_matches_independent_product(self):
        # straight recomputation from the counting argument
        n, L, channels, max_tu = 3, 4, 14, 4
        expected = (2 ** (n * L)) * channels ** L * max_tu ** (L - 2)
        assert expected == 2517630976
        assert pattern_space_size(n, L, channels, max_tu) == expected

    def test_small_spaces(self):
        assert pattern_space_size(2, 2, 2, 2) == 64
        assert pattern_space_size(2, 2, 1, 1) == 16
        assert pattern_space_size(1, 5, 1, 1) == 32
        assert pattern_space_size(2, 3, 1, 1) == 64

    def test_exact_bigint(self):
        # must not round through floats
        assert pattern_space_size(10, 8, 14, 16) == (
            (1 << 80) * 14 ** 8 * 16 ** 6)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            pattern_space_size(0, 2, 1, 1)
        with pytest.raises(ValueError):
            pattern_space_size(2, 1, 1, 1)


class TestRejectReason:
    def test_indexed_forms(self):
        r = RejectReason("txpower", 1)
        assert r.code == "txpower@1"
        assert str(r) == "txpower mismatch at index 1"
        assert str(RejectReason("interval", 2)) == "interval mismatch at index 2"
        assert RejectReason("undecodable", 0).code == "undecodable@0"

    def test_plain_forms(self):
        assert RejectReason("replay").code == "replay"
        assert str(RejectReason("replay")) == "replayed nonce"
        assert str(RejectReason("timeout")) == "watchdog expired"


def obs(b, ch, iv):
    return Triplet(tp(b), ch, iv)


class TestMatcher:
    def test_accepts_exact_sequence(self):
        state = new_matcher([GOOD])
        for t in GOOD.triplets:
            state = match_step(state, t, [GOOD])
        assert state.status == ACCEPTED
        assert state.accepted_id == "good"

    def test_interval_ignored_on_first_triplet(self):
        state = new_matcher([GOOD])
        state = match_step(state, obs("010", 1, None), [GOOD])
        assert state.status == IN_PROGRESS

    def test_reject_reports_field_and_index(self):
        state = new_matcher([GOOD])
        state = match_step(state, GOOD.triplets[0], [GOOD])
        state = match_step(state, obs("001", 6, 1), [GOOD])
        assert state.status == REJECTED
        assert state.reason == RejectReason("txpower", 1)

    def test_mismatch_precedence_txpower_over_channel_over_interval(self):
        state = new_matcher([GOOD])
        state = match_step(state, GOOD.triplets[0], [GOOD])
        st2 = match_step(state, obs("001", 9, 2), [GOOD])
        assert st2.reason.kind == "txpower"
        st2 = match_step(state, obs("101", 9, 2), [GOOD])
        assert st2.reason.kind == "channel"
        st2 = match_step(state, obs("101", 6, 2), [GOOD])
        assert st2.reason.kind == "interval"

    def test_two_patterns_shared_prefix(self):
        a = make("a", ("01", 1, None), ("10", 2, 1))
        b = make("b", ("01", 1, None), ("10", 2, 1), ("01", 3, 2))
        store = [a, b]
        state = new_matcher(store)
        state = match_step(state, a.triplets[0], store)
        assert state.status == IN_PROGRESS
        state = match_step(state, a.triplets[1], store)
        # shortest completed pattern wins the tie
        assert state.status == ACCEPTED
        assert state.accepted_id == "a"

    def test_divergent_store_keeps_viable_branch(self):
        a = make("a", ("01", 1, None), ("10", 2, 1))
        b = make("b", ("10", 1, None), ("01", 2, 1))
        store = [a, b]
        state = new_matcher(store)
        state = match_step(state, obs("10", 1, None), store)
        assert state.status == IN_PROGRESS
        assert state.viable == frozenset({("b", 1)})
        state = match_step(state, obs("01", 2, 1), store)
        assert state.accepted_id == "b"

    def test_empty_store_is_refused(self):
        with pytest.raises(ValueError):
            new_matcher([])

    def test_all_patterns_dropped_reports_no_viable(self):
        a = make("a", ("01", 1, None), ("10", 2, 1))
        state = new_matcher([a])
        state = match_step(state, obs("10", 1, None), [a])
        assert state.status == REJECTED
        assert state.reason.kind == "txpower"

    def test_step_after_terminal_raises(self):
        a = make("a", ("01", 1, None), ("10", 2, 1))
        store = [a]
        state = new_matcher(store)
        for t in a.triplets:
            state = match_step(state, t, store)
        assert state.terminal
        with pytest.raises(MatcherError):
            match_step(state, obs("01", 1, None), store)


class TestGrammar:
    def test_parse_basic(self):
        p = parse_pattern("010@1:- 101@6:1 010@6:2 101@11:2", "fig3")
        assert p == SecretPattern("fig3", (
            Triplet(tp("010"), 1, None), Triplet(tp("101"), 6, 1),
            Triplet(tp("010"), 6, 2), Triplet(tp("101"), 11, 2)))

    def test_render_round_trip(self):
        text = "010@1:- 101@6:1 010@6:2 101@11:2"
        assert render_pattern(parse_pattern(text, "x")) == text

    def test_parse_rejects_interval_on_first(self):
        with pytest.raises(PatternError):
            parse_pattern("01@1:1 10@1:1", "x")

    def test_parse_rejects_dash_after_first(self):
        with pytest.raises(PatternError):
            parse_pattern("01@1:- 10@1:-", "x")

    def test_parse_rejects_garbage(self):
        for bad in ("", "01@1", "01:1", "01@x:-", "01@1:- 10@1:zz"):
            with pytest.raises(PatternError):
                parse_pattern(bad, "x")

    def test_parse_pattern_file(self):
        text = "01@1:- 10@2:1\n\n10@3:- 01@4:1\n"
        patterns = parse_pattern_file(text)
        assert [p.pattern_id for p in patterns] == ["line1", "line3"]
        assert patterns[1].triplets[0].channel == 3

    @given(st.data())
    def test_render_parse_inverse(self, data):
        n = data.draw(st.integers(2, 8))
        L = data.draw(st.integers(2, 5))
        trips = []
        for i in range(L):
            bits = "".join(data.draw(st.sampled_from("01")) for _ in range(n))
            assume(len(set(bits)) > 1)  # parse refuses transition-free bursts
            ch = data.draw(st.integers(1, 14))
            iv = None if i == 0 else (1 if i == 1 else data.draw(st.integers(1, 16)))
            trips.append(Triplet(tp(bits), ch, iv))
        p = SecretPattern("h", tuple(trips))
        assert parse_pattern(render_pattern(p), "h") == p
