import numpy as np
import pytest

from stalign.config import RunConfig
from stalign.data import ViewSpec, gen_synthetic_corpus
from stalign.model import DualEncoder
from stalign.retrieval import (CorpusIndex, embed_corpus, evaluate_retrieval, load_embeddings,
                               recall_at_k, rsum, save_embeddings, true_pair_ranks)
from stalign.text import Vocabulary


def random_index(rng, n, d=8, shuffle_gallery=True):
    ids = [f"s{i}" for i in range(n)]
    v = rng.normal(size=(n, d))
    t = v + rng.normal(scale=1.5, size=(n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    order = rng.permutation(n) if shuffle_gallery else np.arange(n)
    return CorpusIndex([ids[i] for i in order], v[order].astype(np.float32), ids, t.astype(np.float32))


def full_sort_recall(index, direction, k):
    """Independent oracle: stable argsort of negated scores, then locate the true item."""
    if direction == "t2v":
        Q, q_ids, G, g_ids = index.text, index.text_ids, index.video, index.video_ids
    else:
        Q, q_ids, G, g_ids = index.video, index.video_ids, index.text, index.text_ids
    hits = 0
    for qi, sid in enumerate(q_ids):
        scores = [float(np.dot(Q[qi].astype(np.float64), G[j].astype(np.float64))) for j in range(len(g_ids))]
        order = sorted(range(len(g_ids)), key=lambda j: (-scores[j], j))
        rank = [g_ids[j] for j in order].index(sid) + 1
        hits += rank <= k
    return hits / len(q_ids)


class TestRecall:
    @pytest.mark.parametrize("seed", range(25))
    def test_matches_full_sort_oracle(self, seed):
        index = random_index(np.random.default_rng(seed), 10)
        for d in ("t2v", "v2t"):
            for k in (1, 5):
                assert recall_at_k(index, d, k) == full_sort_recall(index, d, k)

    def test_ties_break_by_gallery_position(self):
        e = np.array([[1.0, 0.0]] * 3, dtype=np.float32)
        index = CorpusIndex(["a", "b", "c"], e, ["a", "b", "c"], e)
        np.testing.assert_array_equal(true_pair_ranks(index, "t2v"), [1, 2, 3])
        assert recall_at_k(index, "t2v", 1) == pytest.approx(1 / 3)

    def test_pigeonhole(self, rng):
        index = random_index(rng, 7)
        for d in ("t2v", "v2t"):
            assert recall_at_k(index, d, 7) == 1.0
            assert recall_at_k(index, d, 50) == 1.0

    def test_orthonormal_pairs(self):
        e = np.eye(3, dtype=np.float32)
        index = CorpusIndex(["x", "y", "z"], e, ["x", "y", "z"], e)
        assert recall_at_k(index, "t2v", 1) == recall_at_k(index, "v2t", 1) == 1.0

    def test_monotone_in_k(self, rng):
        index = random_index(rng, 30)
        for d in ("t2v", "v2t"):
            r = [recall_at_k(index, d, k) for k in range(1, 31)]
            assert all(a <= b for a, b in zip(r, r[1:]))

    def test_gallery_rescaling_invariance(self, rng):
        index = random_index(rng, 20)
        scaled = CorpusIndex(index.video_ids, index.video * 3.5, index.text_ids, index.text)
        for d in ("t2v", "v2t"):
            np.testing.assert_array_equal(true_pair_ranks(index, d), true_pair_ranks(scaled, d))

    def test_missing_counterpart(self, rng):
        index = random_index(rng, 4)
        bad = CorpusIndex(index.video_ids[:3], index.video[:3], index.text_ids, index.text)
        with pytest.raises(ValueError, match="no counterpart"):
            recall_at_k(bad, "t2v", 1)
        with pytest.raises(ValueError):
            recall_at_k(index, "t2v", 0)


class TestRsum:
    def test_bounds(self):
        full = {d: {5: 1.0, 10: 1.0, 50: 1.0} for d in ("t2v", "v2t")}
        zero = {d: {5: 0.0, 10: 0.0, 50: 0.0} for d in ("t2v", "v2t")}
        assert 100 * rsum(full) == 600.0
        assert rsum(zero) == 0.0

    def test_published_row(self):
        recalls = {"t2v": {5: 0.185, 10: 0.281, 50: 0.563}, "v2t": {5: 0.181, 10: 0.275, 50: 0.564}}
        assert abs(100 * rsum(recalls) - 204.9) < 1e-6
        assert abs(100 * rsum(recalls) - 204.8) <= 0.1 + 1e-9

    def test_missing_k(self):
        with pytest.raises(ValueError, match="R@50"):
            rsum({d: {5: 1.0, 10: 1.0} for d in ("t2v", "v2t")})

    def test_report_is_six_term_sum(self, rng):
        rep = evaluate_retrieval(random_index(rng, 60))
        six = sum(rep.recalls[d][k] for d in ("t2v", "v2t") for k in (5, 10, 50))
        assert abs(rep.rsum - six) < 1e-6
        pct = rep.percent()
        assert abs(pct["rsum"] - sum(pct[d][f"r{k}"] for d in ("t2v", "v2t") for k in (5, 10, 50))) < 1e-6


class TestIndex:
    def test_validate(self, rng):
        random_index(rng, 5).validate()
        bad = CorpusIndex(["a", "a"], np.eye(2, dtype=np.float32), ["a", "b"], np.eye(2, dtype=np.float32))
        with pytest.raises(ValueError, match="duplicate"):
            bad.validate()
        with pytest.raises(ValueError, match="unit norm"):
            CorpusIndex(["a"], 2 * np.ones((1, 1), np.float32), ["a"], np.ones((1, 1), np.float32)).validate()

    def test_dump_round_trip(self, tmp_path, rng):
        index = random_index(rng, 6)
        save_embeddings(index, tmp_path / "e.jsonl")
        back = load_embeddings(tmp_path / "e.jsonl")
        assert back.video_ids == index.video_ids and back.text_ids == index.text_ids
        assert back.video.tobytes() == index.video.tobytes()
        assert back.text.tobytes() == index.text.tobytes()


@pytest.fixture(scope="module")
def small_setup():
    corpus = gen_synthetic_corpus(6, 2, seed=3)
    vocab = Vocabulary.build([s.impression for s in corpus])
    model = DualEncoder(RunConfig(), len(vocab))
    return corpus, vocab, model


class TestEmbedCorpus:
    def test_forward_pass_budget(self, small_setup):
        corpus, vocab, model = small_setup
        model.reset_counters()
        # 12 assembled frames, M=4, S=1: three offsets per study
        index = embed_corpus(corpus, model, vocab, frames=4, stride=1)
        assert model.forward_passes == {"video": 6 * 3, "text": 6}
        index.validate()

    def test_single_offset_mean_is_the_member(self, small_setup):
        corpus, vocab, model = small_setup
        spec = ViewSpec.parse("CINE_lax")
        # 6 frames, M=6: one offset
        index = embed_corpus(corpus[:2], model, vocab, spec=spec, frames=6)
        from stalign.data import assemble_video

        clips = np.stack([assemble_video(s, spec) for s in corpus[:2]])
        direct = model.embed_video(clips).data
        assert index.video.tobytes() == direct.astype(np.float32).tobytes()

    def test_multi_offset_mean(self, small_setup):
        corpus, vocab, model = small_setup
        from stalign.data import assemble_video
        from stalign.retrieval import study_clips

        index = embed_corpus(corpus[:1] + corpus[1:2], model, vocab, frames=4, stride=1)
        clips = study_clips(assemble_video(corpus[0], model.config.views()), 4, 1)
        members = model.embed_video(clips).data.astype(np.float64)
        m = members.mean(axis=0)
        np.testing.assert_allclose(index.video[0], m / np.linalg.norm(m), atol=1e-6)

    def test_identical_studies_identical_embeddings(self, small_setup):
        corpus, vocab, model = small_setup
        twin = gen_synthetic_corpus(6, 2, seed=3)[0]
        twin.study_id = "twin"
        index = embed_corpus([corpus[0], twin], model, vocab)
        assert index.video[0].tobytes() == index.video[1].tobytes()
        assert index.text[0].tobytes() == index.text[1].tobytes()

    def test_deterministic_end_to_end(self, small_setup):
        corpus, vocab, model = small_setup
        a = evaluate_retrieval(embed_corpus(corpus, model, vocab))
        b = evaluate_retrieval(embed_corpus(corpus, model, vocab))
        assert a == b

    def test_empty_corpus(self, small_setup):
        _, vocab, model = small_setup
        with pytest.raises(ValueError, match="empty"):
            embed_corpus([], model, vocab)
