"""Geometry diagnostics and retrieval scoring against brute-force oracles."""

import json
import struct

import numpy as np
import pytest
from scipy.stats import ortho_group

from conftest import topic_sentence
from oracles import alignment_reference, topk_reference, uniformity_reference

from consem.analysis import (
    AnalysisReport,
    EmbeddingSet,
    RetrievalCase,
    accuracy_at_topk,
    alignment,
    export_attention,
    load_embeddings,
    rank_candidates,
    save_embeddings,
    uniformity,
)
from consem.encoder import embed_sentences
from consem.errors import (
    ConfigError,
    ContractError,
    DataError,
    DegenerateInputError,
    FormatError,
    MetricError,
    ShapeError,
    VocabularyError,
)
from consem.text import build_vocab


def _random_cases(rng, n_cases):
    cases = []
    for _ in range(n_cases):
        pool = int(rng.integers(4, 21))
        d = int(rng.integers(3, 9))
        cases.append(
            RetrievalCase(
                claim=rng.normal(size=d),
                candidates=rng.normal(size=(pool, d)),
                gold_index=int(rng.integers(0, pool)),
            )
        )
    return cases


class TestRanking:
    def test_descending_cosine_order(self):
        order = rank_candidates(np.array([1.0, 0.0]), np.array([[0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]))
        assert order.tolist() == [1, 2, 0]

    def test_cosine_ignores_magnitude_and_ties_go_low(self):
        # Rows 0 and 1 point the same way at different lengths.
        order = rank_candidates(np.array([1.0, 0.0]), np.array([[5.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
        assert order.tolist() == [0, 1, 2]


class TestTopK:
    def test_boundary_rank(self):
        # Gold sits at rank 4 exactly: three better candidates ahead of it.
        cosines = [0.9, 0.8, 0.7, 0.6]
        candidates = np.array([[c, np.sqrt(1 - c * c)] for c in cosines])
        case = RetrievalCase(claim=np.array([1.0, 0.0]), candidates=candidates, gold_index=3)
        assert accuracy_at_topk([case], 3) == 0.0
        assert accuracy_at_topk([case], 4) == 1.0

    def test_exact_duplicate_always_found(self):
        claim = np.array([0.3, -0.7, 0.2])
        candidates = np.vstack([claim, np.eye(3)])
        case = RetrievalCase(claim=claim, candidates=candidates, gold_index=0)
        for k in (1, 2, 3, 4):
            assert accuracy_at_topk([case], k) == 1.0

    def test_monotone_in_k_and_saturates(self):
        cases = _random_cases(np.random.default_rng(3), 12)
        values = [accuracy_at_topk(cases, k) for k in range(1, 22)]
        assert all(a <= b for a, b in zip(values, values[1:]))
        assert values[-1] == 1.0

    def test_k_beyond_pool_is_clamped(self):
        cases = _random_cases(np.random.default_rng(4), 6)
        assert accuracy_at_topk(cases, 1000) == 1.0

    def test_random_cases_match_recount(self):
        rng = np.random.default_rng(5)
        cases = _random_cases(rng, 20)
        claims = [c.claim for c in cases]
        pools = [c.candidates for c in cases]
        golds = [c.gold_index for c in cases]
        for k in (1, 3, 5, 10):
            assert accuracy_at_topk(cases, k) == pytest.approx(
                topk_reference(claims, pools, golds, k), abs=1e-12
            )

    def test_validation(self):
        case = RetrievalCase(np.array([1.0, 0.0]), np.eye(2), 0)
        with pytest.raises(ConfigError):
            accuracy_at_topk([case], 0)
        with pytest.raises(MetricError):
            accuracy_at_topk([], 1)


class TestAlignment:
    def test_identical_pairs_score_zero(self):
        v = np.array([0.3, 1.2, -0.5])
        assert alignment([(v, v.copy()), (2 * v, 2 * v)]) == 0.0

    def test_orthonormal_pair_scores_two(self):
        assert alignment([(np.array([1.0, 0.0]), np.array([0.0, 1.0]))]) == pytest.approx(2.0, abs=1e-12)

    def test_random_pairs_match_recount(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            n = int(rng.integers(1, 12))
            d = int(rng.integers(2, 10))
            pairs = [(rng.normal(size=d), rng.normal(size=d)) for _ in range(n)]
            assert alignment(pairs) == pytest.approx(alignment_reference(pairs), abs=1e-9)

    def test_symmetric_in_pair_order(self):
        rng = np.random.default_rng(7)
        pairs = [(rng.normal(size=5), rng.normal(size=5)) for _ in range(8)]
        assert alignment([(b, a) for a, b in pairs]) == pytest.approx(alignment(pairs), abs=1e-12)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(8)
        pairs = [(rng.normal(size=6), rng.normal(size=6)) for _ in range(10)]
        rotation = ortho_group.rvs(dim=6, random_state=rng)
        rotated = [(rotation @ a, rotation @ b) for a, b in pairs]
        assert alignment(rotated) == pytest.approx(alignment(pairs), abs=1e-9)

    def test_validation(self):
        with pytest.raises(MetricError):
            alignment([])
        with pytest.raises(ShapeError):
            alignment([(np.array([1.0, 2.0]), np.array([1.0, 2.0, 3.0]))])
        with pytest.raises(ShapeError):
            alignment([(np.ones(2), np.ones(2)), (np.ones(3), np.ones(3))])


class TestUniformity:
    def test_identical_rows_score_zero(self):
        assert uniformity(np.tile([0.6, 0.8], (4, 1))) == pytest.approx(0.0, abs=1e-12)

    def test_two_orthogonal_unit_vectors(self):
        assert uniformity(np.eye(2)) == pytest.approx(-4.0, abs=1e-12)

    def test_random_sets_match_recount(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            n = int(rng.integers(2, 12))
            d = int(rng.integers(2, 10))
            vectors = rng.normal(size=(n, d))
            assert uniformity(vectors) == pytest.approx(uniformity_reference(vectors), abs=1e-9)

    def test_row_scale_invariance(self):
        rng = np.random.default_rng(10)
        vectors = rng.normal(size=(6, 4))
        scales = rng.uniform(0.1, 10.0, size=(6, 1))
        assert uniformity(vectors * scales) == pytest.approx(uniformity(vectors), abs=1e-9)

    def test_rotation_and_permutation_invariance(self):
        rng = np.random.default_rng(11)
        vectors = rng.normal(size=(7, 5))
        rotation = ortho_group.rvs(dim=5, random_state=rng)
        base = uniformity(vectors)
        assert uniformity(vectors @ rotation.T) == pytest.approx(base, abs=1e-9)
        assert uniformity(vectors[rng.permutation(7)]) == pytest.approx(base, abs=1e-9)

    def test_validation(self):
        with pytest.raises(MetricError):
            uniformity(np.ones((1, 3)))
        with pytest.raises(DegenerateInputError):
            uniformity(np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_accepts_embedding_set(self):
        vectors = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        wrapped = EmbeddingSet(vectors=vectors, texts=["a", "b", "c"])
        assert uniformity(wrapped) == uniformity(vectors)


class TestContainers:
    def test_embedding_set_defaults_ids(self):
        es = EmbeddingSet(vectors=np.ones((3, 2)), texts=["a", "b", "c"])
        assert es.ids == [0, 1, 2]

    def test_embedding_set_validation(self):
        with pytest.raises(ShapeError):
            EmbeddingSet(vectors=np.ones(3), texts=["a"])
        with pytest.raises(ContractError):
            EmbeddingSet(vectors=np.ones((2, 2)), texts=["a"])
        with pytest.raises(DegenerateInputError):
            EmbeddingSet(vectors=np.array([[1.0, 0.0], [0.0, 0.0]]), texts=["a", "b"])

    def test_retrieval_case_validation(self):
        with pytest.raises(ShapeError):
            RetrievalCase(claim=np.ones((2, 2)), candidates=np.ones((2, 2)), gold_index=0)
        with pytest.raises(ShapeError):
            RetrievalCase(claim=np.ones(3), candidates=np.ones((2, 2)), gold_index=0)
        with pytest.raises(ContractError):
            RetrievalCase(claim=np.ones(2), candidates=np.ones((2, 2)), gold_index=5)

    def test_report_json(self):
        report = AnalysisReport(0.5, 1.5, -2.0, {3: 0.7, 1: 0.2})
        payload = json.loads(report.to_json())
        assert payload["alignment_entailment"] == 0.5
        assert payload["accuracy_at_k"] == {"1": 0.2, "3": 0.7}
        bare = json.loads(AnalysisReport(0.5, 1.5, -2.0).to_json())
        assert bare["accuracy_at_k"] is None


class TestSaveLoad:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(12)
        es = EmbeddingSet(
            vectors=rng.normal(size=(5, 3)).astype(np.float32),
            texts=[f"sentence {i}" for i in range(5)],
            ids=[10, 11, 12, 13, 14],
        )
        path = tmp_path / "emb.bin"
        save_embeddings(path, es)
        loaded = load_embeddings(path)
        np.testing.assert_array_equal(loaded.vectors, es.vectors)
        assert loaded.texts == es.texts and loaded.ids == es.ids

    def test_sidecar_is_json_lines(self, tmp_path):
        es = EmbeddingSet(vectors=np.ones((2, 2), dtype=np.float32), texts=["first", "second"])
        save_embeddings(tmp_path / "emb.bin", es)
        lines = (tmp_path / "emb.bin.jsonl").read_text().splitlines()
        assert [json.loads(line)["text"] for line in lines] == ["first", "second"]

    def test_truncated_file_rejected(self, tmp_path):
        es = EmbeddingSet(vectors=np.ones((2, 2), dtype=np.float32), texts=["a", "b"])
        path = tmp_path / "emb.bin"
        save_embeddings(path, es)
        blob = path.read_bytes()
        for keep in (0, 5, len(blob) - 3):
            path.write_bytes(blob[:keep])
            with pytest.raises(FormatError):
                load_embeddings(path)
        path.write_bytes(blob + b"x")
        with pytest.raises(FormatError):
            load_embeddings(path)

    def test_missing_sidecar_rejected(self, tmp_path):
        es = EmbeddingSet(vectors=np.ones((2, 2), dtype=np.float32), texts=["a", "b"])
        path = tmp_path / "emb.bin"
        save_embeddings(path, es)
        (tmp_path / "emb.bin.jsonl").unlink()
        with pytest.raises(FormatError):
            load_embeddings(path)

    def test_sidecar_row_count_checked(self, tmp_path):
        es = EmbeddingSet(vectors=np.ones((2, 2), dtype=np.float32), texts=["a", "b"])
        path = tmp_path / "emb.bin"
        save_embeddings(path, es)
        (tmp_path / "emb.bin.jsonl").write_text('{"id": 0, "text": "a"}\n')
        with pytest.raises(FormatError):
            load_embeddings(path)

    def test_bad_sidecar_record_names_line(self, tmp_path):
        es = EmbeddingSet(vectors=np.ones((2, 2), dtype=np.float32), texts=["a", "b"])
        path = tmp_path / "emb.bin"
        save_embeddings(path, es)
        (tmp_path / "emb.bin.jsonl").write_text('{"id": 0, "text": "a"}\n{"id": "x"}\n')
        with pytest.raises(DataError, match=":2:"):
            load_embeddings(path)


class TestTrainedGeometry:
    def test_same_topic_pairs_align_better(self, micro_checkpoint):
        ckpt, _, vocab = micro_checkpoint
        from consem.encoder import EncoderWeights, parameter_names

        arrays = {n: ckpt.params[n] for n in parameter_names(ckpt.encoder_config)}
        weights = EncoderWeights.from_arrays(ckpt.encoder_config, arrays)
        topics = ("river", "glacier", "orchard", "harbor")
        a = embed_sentences([topic_sentence(t, 600) for t in topics], weights, ckpt.encoder_config, vocab)
        same = embed_sentences([topic_sentence(t, 601) for t in topics], weights, ckpt.encoder_config, vocab)
        other = embed_sentences(
            [topic_sentence(topics[(i + 1) % 4], 602) for i in range(4)], weights, ckpt.encoder_config, vocab
        )
        matched = alignment(list(zip(a, same)))
        mismatched = alignment(list(zip(a, other)))
        assert matched < mismatched


class TestExportAttention:
    def test_structure_and_row_sums(self, micro_checkpoint):
        ckpt, _, vocab = micro_checkpoint
        out = export_attention(ckpt, vocab, "the river report", "indeed the river")
        assert out["tokens"][0] == "[CLS]"
        assert out["tokens"].count("[SEP]") == 2
        assert "[PAD]" not in out["tokens"]
        n = len(out["tokens"])
        heads = np.array(out["heads"])
        assert heads.shape == (ckpt.encoder_config.num_heads, n, n)
        np.testing.assert_allclose(heads.sum(axis=2), 1.0, atol=1e-5)
        np.testing.assert_allclose(np.array(out["head_mean"]), heads.mean(axis=0), atol=1e-12)

    def test_wrong_vocabulary_rejected(self, micro_checkpoint):
        ckpt, _, _ = micro_checkpoint
        other = build_vocab(["completely unrelated words"])
        with pytest.raises(VocabularyError):
            export_attention(ckpt, other, "a", "b")
