import numpy as np
import pytest

from crispkit import pipeline
from crispkit.geo import assign_blocks, attach_lambda_subsets, block_of, build_split
from crispkit.synth import SynthConfig, generate
from crispkit.train import ToyEncoder


@pytest.fixture(scope="module")
def split_corpus():
    corpus = generate(
        SynthConfig(
            n_classes=8, n_observations=600, view_dim_gl=8, view_dim_a=8,
            mean_views_per_obs=2.0, seed=11,
        )
    )
    blocks = {block_of(r.lat, r.lon) for r in corpus.observations}
    rng = np.random.default_rng(2)
    manifest = build_split(corpus.observations, assign_blocks(blocks, rng))
    attach_lambda_subsets(manifest, [0.2], rng)
    return corpus, manifest


class TestAssembleExamples:
    def test_ground_view_expands_per_image(self, split_corpus):
        corpus, manifest = split_corpus
        examples = pipeline.assemble_examples(corpus, manifest, "test", "gl")
        records = {r.obs_id: r for r in corpus.observations}
        expected = sum(
            corpus.ground_views[o].shape[0]
            for o, s in manifest.obs_assignment.items()
            if s == "test" and records[o].class_id is not None
        )
        assert examples.x.shape == (expected, 8)
        assert examples.y.shape == (expected,)
        assert examples.group_id.shape == (expected,)

    def test_aerial_view_one_per_observation(self, split_corpus):
        corpus, manifest = split_corpus
        examples = pipeline.assemble_examples(corpus, manifest, "test", "a")
        n_obs = len(manifest.ids_in_split("test"))
        assert examples.x.shape == (n_obs, 8)
        assert len(set(examples.obs_ids)) == n_obs

    def test_train_split_uses_labeled_subset(self, split_corpus):
        corpus, manifest = split_corpus
        subset = manifest.lambda_subsets["0.2"]
        examples = pipeline.assemble_examples(corpus, manifest, "train", "gl", subset)
        assert set(examples.obs_ids) <= set(subset)

    def test_class_restriction_drops_outsiders(self, split_corpus):
        corpus, manifest = split_corpus
        keep = manifest.class_universe[:2]
        examples = pipeline.assemble_examples(corpus, manifest, "test", "gl", None, keep)
        assert examples.class_list == tuple(sorted(keep))
        assert set(np.unique(examples.y)) <= {0, 1}

    def test_dense_labels_match_class_list(self, split_corpus):
        corpus, manifest = split_corpus
        examples = pipeline.assemble_examples(corpus, manifest, "val", "gl")
        records = {r.obs_id: r for r in corpus.observations}
        for row, obs_id in enumerate(examples.obs_ids):
            assert examples.class_list[examples.y[row]] == records[obs_id].class_id

    def test_evaluation_class_list_is_three_way_intersection(self, split_corpus):
        corpus, manifest = split_corpus
        subset = manifest.lambda_subsets["0.2"]
        classes = pipeline.evaluation_class_list(corpus, manifest, subset)
        records = {r.obs_id: r for r in corpus.observations}
        subset_classes = {records[o].class_id for o in subset if records[o].class_id is not None}
        val_classes = {records[o].class_id for o in manifest.ids_in_split("val")}
        test_classes = {records[o].class_id for o in manifest.ids_in_split("test")}
        assert set(classes) == subset_classes & val_classes & test_classes


class TestMultiviewEmbeddings:
    def test_min_views_filter(self, split_corpus):
        corpus, _ = split_corpus
        emb, labels, n_obs = pipeline.multiview_ground_embeddings(corpus, None, min_views=3)
        eligible = [
            r for r in corpus.observations if corpus.ground_views[r.obs_id].shape[0] >= 3
        ]
        assert n_obs == len(eligible)
        assert emb.shape[0] == sum(corpus.ground_views[r.obs_id].shape[0] for r in eligible)
        assert labels.max() == n_obs - 1

    def test_encoder_embeddings_shape(self, split_corpus):
        corpus, _ = split_corpus
        enc = ToyEncoder.init(8, 8, 4, np.random.default_rng(0))
        emb, labels, _ = pipeline.multiview_ground_embeddings(corpus, enc, min_views=2)
        assert emb.shape[1] == 4
        assert emb.shape[0] == labels.shape[0]

    def test_noise_embeddings_deterministic_under_rng(self, split_corpus):
        corpus, _ = split_corpus
        a, _, _ = pipeline.multiview_ground_embeddings(
            corpus, None, 2, rng=np.random.default_rng(5)
        )
        b, _, _ = pipeline.multiview_ground_embeddings(
            corpus, None, 2, rng=np.random.default_rng(5)
        )
        np.testing.assert_array_equal(a, b)
