import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eend_lab.annotation import Annotation, Segment
from eend_lab.errors import ConfigurationError, InputError, ParseError
from eend_lab.numerics.rng import Rng
from eend_lab.scoring import (DERReport, der, emit_rttm, format_der_table, parse_rttm,
                              parse_rttm_text, score_corpus)


def line(rec, onset, dur, spk):
    return f"SPEAKER {rec} 1 {onset} {dur} <NA> <NA> {spk} <NA> <NA>"


class TestRTTM:
    def test_single_line(self):
        out = parse_rttm_text(line("rec1", "0.00", "5.00", "A"))
        assert out["rec1"].segments == [Segment("A", 0.0, 5.0)]

    def test_empty(self, tmp_path):
        (tmp_path / "e.rttm").write_text("")
        assert parse_rttm(tmp_path / "e.rttm") == {}

    def test_non_speaker_lines_ignored(self):
        text = "SPKR-INFO rec1 1 <NA> <NA> <NA> unknown A <NA> <NA>\n" + line("rec1", 1, 2, "A")
        assert len(parse_rttm_text(text)["rec1"].segments) == 1

    @pytest.mark.parametrize("bad,lineno", [(line("r", 0, -1, "A"), 2),
                                            (line("r", "x", 1, "A"), 2),
                                            ("SPEAKER r 1 0.0", 2)])
    def test_errors_carry_line_number(self, bad, lineno):
        with pytest.raises(ParseError) as info:
            parse_rttm_text(line("r", 0, 1, "A") + "\n" + bad)
        assert info.value.line_number == lineno

    def test_round_half_even(self):
        text = emit_rttm({"r": Annotation("r", [Segment("A", 1.2345, 3.2345)])})
        assert text.split()[3] == "1.234"
        assert text.split()[4] == "2.000"

    def test_deterministic_bytes(self):
        anns = {"r": Annotation("r", [Segment("B", 1, 2), Segment("A", 0.5, 3)])}
        assert emit_rttm(anns) == emit_rttm(anns)
        assert emit_rttm(anns) == (line("r", "0.500", "2.500", "A") + "\n"
                                   + line("r", "1.000", "1.000", "B") + "\n")

    def test_sorted_vs_oracle(self):
        r = Rng(3)
        segs = [(f"r{r.randint(0, 2)}", round(r.uniform(0, 9), 3), f"S{r.randint(0, 3)}")
                for _ in range(40)]
        anns = {}
        for rec, onset, spk in segs:
            anns.setdefault(rec, Annotation(rec)).segments.append(Segment(spk, onset, onset + 1))
        for a in anns.values():
            r.shuffle(a.segments)
        keys = [(l.split()[1], float(l.split()[3]), l.split()[7])
                for l in emit_rttm(anns).splitlines()]
        assert keys == sorted(keys)
        assert len(keys) == 40

    @given(st.lists(st.tuples(st.sampled_from("AB"), st.integers(0, 20000),
                              st.integers(1, 5000)), max_size=10))
    @settings(max_examples=50)
    def test_round_trip_ms(self, raw):
        segs = [Segment(s, a / 1000, (a + d) / 1000) for s, a, d in raw]
        anns = {"rec": Annotation("rec", segs)} if segs else {}
        back = parse_rttm_text(emit_rttm(anns))
        if segs:
            got = sorted((s.speaker, round(s.start, 3), round(s.end, 3))
                         for s in back["rec"].segments)
            assert got == sorted((s.speaker, round(s.start, 3), round(s.end, 3)) for s in segs)
        else:
            assert back == {}


def grid_der(ref, hyp, collar):
    """1 ms brute force: per-instant counts at frame centers, every injective mapping tried."""
    end = max([s.end for s in ref.segments + hyp.segments] + [0.0])
    n = int(round(end * 1000)) + 1
    centers = (np.arange(n) + 0.5) / 1000

    def act(ann, spk):
        a = np.zeros(n, dtype=bool)
        for s in ann.segments:
            if s.speaker == spk:
                a |= (centers >= s.start) & (centers < s.end)
        return a

    scored = np.ones(n, dtype=bool)
    for s in ref.segments:
        for b in (s.start, s.end):
            scored &= ~((centers > b - collar) & (centers < b + collar))
    rs, hs = ref.speakers, hyp.speakers
    R = np.array([act(ref, s) for s in rs]).reshape(len(rs), n)[:, scored]
    H = np.array([act(hyp, s) for s in hs]).reshape(len(hs), n)[:, scored]
    nr, nh = R.sum(0), H.sum(0)
    miss = np.maximum(nr - nh, 0).sum()
    fa = np.maximum(nh - nr, 0).sum()
    best = 0
    k = min(len(rs), len(hs))
    for rsel in itertools.permutations(range(len(rs)), k):
        for hsel in itertools.combinations(range(len(hs)), k):
            best = max(best, sum(int((R[r] & H[h]).sum()) for r, h in zip(rsel, hsel)))
    conf = np.minimum(nr, nh).sum() - best
    total = nr.sum()
    return 100.0 * (miss + fa + conf) / total if total else 0.0


def random_annotation(r, rec, speakers):
    segs = []
    for spk in speakers:
        t = 0.0
        for _ in range(r.randint(1, 4)):
            t = round(t + r.uniform(0, 3), 3)
            d = round(r.uniform(0.2, 3), 3)
            segs.append(Segment(spk, t, round(t + d, 3)))
            t += d
    return Annotation(rec, segs)


class TestDER:
    def test_identity(self):
        a = Annotation("r", [Segment("A", 0, 4), Segment("B", 3, 9)])
        for c in (0.0, 0.25, 1.0):
            assert der(a, a, c).der == 0.0

    def test_hand_collar_example(self):
        rep = der(Annotation("r", [Segment("A", 0, 10)]), Annotation("r", []), 0.25)
        assert rep.scored_speech == 9.5 and rep.missed == 9.5 and rep.der == 100.0

    def test_relabeling_invariance(self):
        ref = Annotation("r", [Segment("A", 0, 4), Segment("B", 3, 9)])
        hyp = Annotation("r", [Segment("x", 0, 4.5), Segment("y", 3.2, 9)])
        renamed = Annotation("r", [Segment("q" if s.speaker == "x" else "p", s.start, s.end)
                                   for s in hyp.segments])
        assert der(ref, hyp).der == der(ref, renamed).der

    def test_negative_collar(self):
        with pytest.raises(ConfigurationError):
            der(Annotation("r"), Annotation("r"), -0.1)

    def test_overlap_is_scored(self):
        ref = Annotation("r", [Segment("A", 0, 10), Segment("B", 0, 10)])
        hyp = Annotation("r", [Segment("A", 0, 10)])
        rep = der(ref, hyp, 0.0)
        assert rep.scored_speech == 20.0 and rep.missed == 10.0

    @pytest.mark.parametrize("seed", range(25))
    def test_grid_oracle(self, seed):
        r = Rng(seed)
        ref = random_annotation(r, "r", ["A", "B"])
        hyp = random_annotation(r, "r", ["s0", "s1"])
        assert abs(der(ref, hyp, 0.25).der - grid_der(ref, hyp, 0.25)) <= 0.01

    @pytest.mark.parametrize("seed", range(5))
    def test_components_shrink_with_collar(self, seed):
        r = Rng(50 + seed)
        ref = random_annotation(r, "r", ["A", "B"])
        hyp = random_annotation(r, "r", ["s0", "s1", "s2"])
        reps = [der(ref, hyp, c) for c in (0.0, 0.1, 0.25, 0.5)]
        for a, b in zip(reps, reps[1:]):
            assert b.missed <= a.missed and b.false_alarm <= a.false_alarm
            assert b.scored_speech <= a.scored_speech

    @pytest.mark.parametrize("seed", range(5))
    def test_error_lower_bound(self, seed):
        r = Rng(90 + seed)
        ref = random_annotation(r, "r", ["A", "B"])
        hyp = random_annotation(r, "r", ["s0"])
        rep = der(ref, hyp, 0.0)
        hyp_time = sum(s.duration for s in hyp.segments)
        assert rep.missed + rep.false_alarm + rep.confusion >= \
            abs(rep.scored_speech - hyp_time) - 1e-9

    def test_hungarian_path_many_speakers(self):
        ref = Annotation("r", [Segment(f"S{i}", i, i + 1) for i in range(5)])
        hyp = Annotation("r", [Segment(f"h{4 - i}", i, i + 1) for i in range(5)])
        rep = der(ref, hyp, 0.0)
        assert rep.der == 0.0 and rep.mapping == {f"S{i}": f"h{4 - i}" for i in range(5)}


class TestCorpus:
    def test_single(self):
        ref = {"a": Annotation("a", [Segment("A", 0, 5)])}
        hyp = {"a": Annotation("a", [Segment("x", 0, 4)])}
        reports, pooled = score_corpus(ref, hyp)
        assert pooled.der == reports["a"].der

    def test_pooled_ten_percent(self):
        ref = {"a": Annotation("a", [Segment("A", 0, 10)]),
               "b": Annotation("b", [Segment("A", 0, 10)])}
        hyp = {"a": Annotation("a", [Segment("x", 0, 10)]),
               "b": Annotation("b", [Segment("x", 0, 8)])}
        _, pooled = score_corpus(ref, hyp, collar=0.0)
        assert pooled.der == pytest.approx(10.0, abs=1e-12)

    def test_component_sum_oracle(self):
        r = Rng(8)
        ref = {f"r{i}": random_annotation(r, f"r{i}", ["A", "B"]) for i in range(6)}
        hyp = {f"r{i}": random_annotation(r, f"r{i}", ["x", "y"]) for i in range(6)}
        reports, pooled = score_corpus(ref, hyp)
        errs = sum(x.missed + x.false_alarm + x.confusion for x in reports.values())
        assert pooled.der == pytest.approx(100 * errs / sum(x.scored_speech
                                                           for x in reports.values()))

    def test_mismatch(self):
        ref = {"a": Annotation("a", [Segment("A", 0, 1)]), "b": Annotation("b")}
        hyp = {"a": Annotation("a", [Segment("A", 0, 1)])}
        with pytest.raises(InputError):
            score_corpus(ref, hyp)
        reports, _ = score_corpus(ref, hyp, skip_missing=True)
        assert list(reports) == ["a"]
        with pytest.raises(InputError):
            score_corpus({"a": ref["a"]}, {"z": hyp["a"]}, skip_missing=True)

    def test_table(self):
        ref = {"a": Annotation("a", [Segment("A", 0, 10)])}
        reports, pooled = score_corpus(ref, ref)
        lines = format_der_table(reports, pooled).splitlines()
        assert lines[0] == "recording\tscored\tmiss\tfa\tconf\tder"
        assert lines[-1].startswith("ALL\t")

    def test_report_der_property(self):
        assert DERReport(10.0, 1.0, 0.5, 0.5).der == 20.0
