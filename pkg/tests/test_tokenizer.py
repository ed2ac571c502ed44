import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cxrsum.tokenizer import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    SEP_ID,
    SPECIAL_SYMBOLS,
    UNK_ID,
    BpeTokenizer,
    TokenizerError,
    train_bpe,
)

CORPUS = [
    "There is a severe opacity in the left lung.",
    "No evidence of effusion.",
    "There is a mild effusion in the right lung.",
    "Moderate cardiomegaly is present.",
    "the cat sat on the mat",
    "aaab aaab aaab",
]


class TestTrain:
    def test_single_word_first_merge(self):
        # brute force: in "aaab" pairs are (a,a) x2 and (a,b) x1
        tok = train_bpe(["aaab"], 1)
        assert tok.merge_table.merges == [("a", "a")]

    def test_zero_merges_vocab_is_alphabet_plus_specials(self):
        tok = train_bpe(["abc ba"], 0)
        assert tok.merge_table.merges == []
        assert sorted(tok.vocab.symbols[:5]) == sorted(SPECIAL_SYMBOLS)
        assert tok.vocab_size == 5 + len(set("abc") | {"▁"})

    def test_empty_corpus_rejected(self):
        with pytest.raises(TokenizerError):
            train_bpe([], 4)

    def test_deterministic(self):
        a = train_bpe(CORPUS, 64)
        b = train_bpe(CORPUS, 64)
        assert a.merge_table.merges == b.merge_table.merges
        assert a.merge_table.alphabet == b.merge_table.alphabet

    def test_tie_break_lexicographic(self):
        # "bc" and "cb" pairs both occur twice; (b,c) < (c,b)
        tok = train_bpe(["bcb cbc"], 1)
        counts_first_merge = tok.merge_table.merges[0]
        assert counts_first_merge == ("b", "c")


class TestEncodeDecode:
    def test_empty_text(self):
        tok = train_bpe(CORPUS, 16)
        assert tok.encode("") == []
        assert tok.decode([]) == ""

    def test_manual_merge_trace(self):
        tok = train_bpe(["aaab"], 1)
        assert tok.encode_symbols("aaab") == ["aa", "a", "b"]

    def test_round_trip_corpus(self):
        tok = train_bpe(CORPUS, 128)
        for text in CORPUS:
            assert tok.decode(tok.encode(text)) == text

    def test_unknown_chars_become_unk(self):
        tok = train_bpe(["abc"], 0)
        ids = tok.encode("axbZ")
        assert ids.count(UNK_ID) == 2

    def test_specials_dropped_on_decode(self):
        tok = train_bpe(CORPUS, 16)
        ids = [BOS_ID] + tok.encode("the cat") + [EOS_ID, PAD_ID]
        assert tok.decode(ids) == "the cat"

    def test_render_specials(self):
        tok = train_bpe(CORPUS, 16)
        ids = tok.encode("the") + [SEP_ID] + tok.encode(" cat")
        assert tok.decode(ids, render_specials=True) == "the<SEP> cat"

    def test_unknown_id_raises(self):
        tok = train_bpe(["ab"], 0)
        with pytest.raises(TokenizerError):
            tok.decode([10_000])

    def test_decode_encode_fixpoint_on_id_sequences(self):
        tok = train_bpe(CORPUS, 64)
        for text in CORPUS:
            ids = tok.encode(text)
            assert tok.encode(tok.decode(ids)) == ids


class TestProperties:
    @given(st.text(alphabet=sorted(set("".join(CORPUS))), max_size=80))
    @settings(max_examples=200, deadline=None)
    def test_round_trip_alphabet_text(self, text):
        tok = _CACHED[0]
        assert tok.decode(tok.encode(text)) == text

    def test_monotone_coverage(self):
        lengths = []
        for n in [0, 8, 32, 128, 256]:
            tok = train_bpe(CORPUS, n)
            lengths.append([len(tok.encode(t)) for t in CORPUS])
        for prev, nxt in zip(lengths, lengths[1:]):
            assert all(b <= a for a, b in zip(prev, nxt))


_CACHED = [train_bpe(CORPUS, 96)]


class TestFileFormat:
    def test_round_trip_via_file(self, tmp_path):
        tok = train_bpe(CORPUS, 64)
        path = tmp_path / "tok.txt"
        tok.save(path)
        loaded = BpeTokenizer.load(path)
        assert loaded.merge_table.merges == tok.merge_table.merges
        assert loaded.merge_table.alphabet == tok.merge_table.alphabet
        for text in CORPUS:
            assert loaded.encode(text) == tok.encode(text)

    def test_header_line(self, tmp_path):
        tok = train_bpe(["ab ab"], 2)
        path = tmp_path / "tok.txt"
        tok.save(path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "BPE v1"
        # marker for the space plus a, b
        assert set(lines[1].split(" ")) == {"a", "b", "▁"}

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("not a tokenizer\n")
        with pytest.raises(TokenizerError):
            BpeTokenizer.load(path)
