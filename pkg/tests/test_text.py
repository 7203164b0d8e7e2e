import numpy as np
import pytest

from stalign import autodiff as ad
from stalign.autodiff import DiffTensor
from stalign.text import (FIRST_WORD_ID, TextConfig, TextEncoder, Vocabulary, encode_text,
                          stack_tokens, tokenize)

VOCAB = Vocabulary(["severe", "lv", "dysfunction", "normal", "wall", "motion"])
CFG = TextConfig()


class TestVocabulary:
    def test_special_ids(self):
        ids = {VOCAB.pad_id, VOCAB.unk_id, VOCAB.cls_id, VOCAB.sep_id}
        assert len(ids) == 4 and max(ids) < 260

    def test_words_start_after_bytes(self):
        assert VOCAB.word_id("severe") == FIRST_WORD_ID == 260
        assert VOCAB.byte_id(0) == 4 and VOCAB.byte_id(255) == 259

    def test_build_frequency_threshold_and_order(self):
        vocab = Vocabulary.build(["b a a", "c b a", "d"], min_freq=2)
        assert vocab.tokens[FIRST_WORD_ID:] == ["a", "b"]

    def test_build_ties_alphabetical(self):
        vocab = Vocabulary.build(["z y", "y z", "x"], min_freq=1)
        assert vocab.tokens[FIRST_WORD_ID:] == ["y", "z", "x"]

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "vocab.txt"
        VOCAB.save(path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[:4] == ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
        assert lines[260] == "severe"
        assert Vocabulary.load(path).tokens == VOCAB.tokens

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "vocab.txt"
        path.write_text("hello\nworld\n", encoding="utf-8")
        with pytest.raises(ValueError):
            Vocabulary.load(path)


class TestTokenize:
    def test_empty(self):
        tok = tokenize("", VOCAB, max_len=8)
        np.testing.assert_array_equal(tok.ids, [2, 3, 0, 0, 0, 0, 0, 0])
        np.testing.assert_array_equal(tok.attention_mask, [1, 1, 0, 0, 0, 0, 0, 0])

    def test_in_vocab_words(self):
        tok = tokenize("Severe LV dysfunction", VOCAB, max_len=8)
        w = VOCAB.word_id
        np.testing.assert_array_equal(tok.ids[:5], [2, w("severe"), w("lv"), w("dysfunction"), 3])
        assert tok.length == 5

    def test_byte_fallback(self):
        tok = tokenize("lv é", VOCAB, max_len=8)
        # 'é' is two UTF-8 bytes: 0xC3 0xA9
        np.testing.assert_array_equal(tok.ids[:5], [2, VOCAB.word_id("lv"), 4 + 0xC3, 4 + 0xA9, 3])

    def test_deterministic(self):
        a = tokenize("normal wall motion, mild", VOCAB)
        b = tokenize("normal wall motion, mild", VOCAB)
        assert a.ids.tobytes() == b.ids.tobytes()

    def test_truncation_keeps_cls_and_sep(self):
        tok = tokenize("normal " * 50, VOCAB, max_len=10)
        assert tok.ids.shape == (10,)
        assert tok.ids[0] == VOCAB.cls_id and tok.ids[-1] == VOCAB.sep_id
        assert tok.length == 10

    def test_mask_marks_non_pad(self, rng):
        for text in ("", "lv", "a b c d", "xyz" * 5):
            tok = tokenize(text, VOCAB, max_len=32)
            np.testing.assert_array_equal(tok.attention_mask == 1, tok.ids != VOCAB.pad_id)


class TestEncoder:
    def setup_method(self):
        self.enc = TextEncoder(CFG, seed=0)

    def test_output_shape(self):
        assert encode_text(tokenize("severe lv dysfunction", VOCAB), self.enc).shape == (64,)

    def test_different_texts_differ(self):
        a = encode_text(tokenize("severe lv dysfunction", VOCAB), self.enc)
        b = encode_text(tokenize("normal wall motion", VOCAB), self.enc)
        assert np.linalg.norm(a - b) > 0

    def test_padding_invariance_every_layer(self):
        tok = tokenize("severe lv dysfunction", VOCAB, max_len=16)
        n = tok.length
        short = self.enc.hidden_states(tok.ids[None, :n + 1], tok.attention_mask[None, :n + 1])
        long = self.enc.hidden_states(tok.ids[None], tok.attention_mask[None])
        for s, l in zip(short, long):
            np.testing.assert_allclose(s.data[0, :n], l.data[0, :n], atol=1e-6)

    def test_stack_tokens_trims_without_changing_output(self):
        toks = [tokenize(t, VOCAB, max_len=128) for t in ("lv", "severe lv dysfunction here")]
        ids, mask = stack_tokens(toks)
        assert ids.shape[1] == max(t.length for t in toks)
        with ad.no_grad():
            batched = self.enc(ids, mask).data
        for i, t in enumerate(toks):
            np.testing.assert_allclose(batched[i], encode_text(t, self.enc), atol=1e-6)

    def test_masked_keys_get_exact_zero(self):
        tok = tokenize("lv", VOCAB, max_len=12)
        trace = []
        with ad.no_grad():
            self.enc(tok.ids[None], tok.attention_mask[None], trace=trace)
        assert len(trace) == CFG.num_layers
        pad = tok.attention_mask == 0
        for probs in trace:
            assert np.all(probs[..., pad] == 0.0)
            np.testing.assert_allclose(probs.sum(-1), 1.0, atol=1e-6)

    def test_gradient_reaches_only_present_rows(self, rng):
        tok = tokenize("severe lv", VOCAB, max_len=8)
        out = self.enc(tok.ids[None], tok.attention_mask[None])
        ad.sum(out * DiffTensor(rng.normal(size=out.shape))).backward()
        g = self.enc.token_embed.grad
        present = set(tok.ids.tolist())
        touched = {i for i in range(g.shape[0]) if np.any(g[i] != 0)}
        assert touched <= present
        assert VOCAB.word_id("severe") in touched
        assert VOCAB.word_id("normal") not in touched

    def test_too_long(self):
        enc = TextEncoder(TextConfig(max_len=8))
        with pytest.raises(ValueError, match="exceeds max_len"):
            enc(np.zeros((1, 9), dtype=np.int64), np.ones((1, 9)))

    def test_full_size_profile_config(self):
        cfg = TextConfig.full_size(vocab_size=30522)
        cfg.validate()
        assert (cfg.embed_dim, cfg.num_layers) == (768, 6)
