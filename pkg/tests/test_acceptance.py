"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines. Criterion 1 is expected to fail on exactly one leaderboard row: the
published table prints 108.20 for that row while the scoring formula over
its own printed mAPs gives 109.95 (every other row reproduces within
±0.01); the companion pin test below keeps that discrepancy stable.
"""

import json
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from fewdet.core import BBox, Detection, GroundTruthBox
from fewdet.detops import EnsembleConfig, ensemble, nms
from fewdet.domainstats import (
    ChannelStats,
    MMDConfig,
    mmd,
    style_transfer,
    vae_losses,
    warmup_alpha,
)
from fewdet.episodes import sample_episode
from fewdet.metrics import MatchConfig, challenge_score, map_score
from fewdet.protofusion import (
    FeatureCache,
    ProjectionSet,
    fuse,
    ifc_affinity,
    masked_mean,
    nearest_support,
    proto_scores,
    refine_prototypes,
    soft_mask,
    tempered_similarity,
)
from fewdet.selftrain import PseudoLabelConfig, ReplayScorer, self_train_loop

import oracles
from conftest import make_dataset, random_box, random_detections, random_eval_instance

LEADERBOARD = json.loads(
    (Path(__file__).parent / "data" / "challenge_leaderboard.json").read_text(
        encoding="utf-8"))


@contextmanager
def criterion(number: int, name: str, budget_s: float | None = None):
    start = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - start
        if budget_s is not None and elapsed >= budget_s:
            print(f"[acceptance] criterion {number} ({name}): FAIL "
                  f"(over budget: {elapsed:.2f}s >= {budget_s}s)")
            raise AssertionError(
                f"criterion {number} exceeded its runtime budget: "
                f"{elapsed:.2f}s >= {budget_s}s")
        print(f"[acceptance] criterion {number} ({name}): PASS ({elapsed:.2f}s)")
    except AssertionError:
        elapsed = time.perf_counter() - start
        print(f"[acceptance] criterion {number} ({name}): FAIL ({elapsed:.2f}s)")
        raise


def test_criterion_1_challenge_score_regression():
    rows = [r for r in LEADERBOARD["rows"] if r["regression"]]
    assert len(rows) == 13
    with criterion(1, "challenge-score regression", budget_s=1.0):
        mismatches = []
        for row in rows:
            recomputed = challenge_score(row["maps"])
            if abs(recomputed - row["printed_score"]) > 0.01:
                mismatches.append(
                    f"{row['team']}: recomputed {recomputed:.2f} "
                    f"vs printed {row['printed_score']:.2f}")
        assert not mismatches, "; ".join(mismatches)


def test_challenge_score_recomputation_pinned():
    """Pin every recomputed leaderboard value so criterion 1's single red row
    cannot drift: 12 rows reproduce their printed Score, the discrepant row
    recomputes to 109.95."""
    expected_recomputed = {"MXT": 109.95}
    for row in LEADERBOARD["rows"]:
        recomputed = challenge_score(row["maps"])
        if row["team"] in expected_recomputed:
            assert recomputed == pytest.approx(expected_recomputed[row["team"]],
                                               abs=0.01)
        elif row["regression"]:
            assert recomputed == pytest.approx(row["printed_score"], abs=0.01)


def test_criterion_2_map_oracle_equivalence():
    rng = np.random.default_rng(220)
    cfg = MatchConfig()
    with criterion(2, "mAP oracle equivalence (500 instances)", budget_s=30.0):
        for _ in range(500):
            ds, dets = random_eval_instance(rng, max_images=5, max_classes=4,
                                            max_boxes=12)
            ours = map_score(dets, ds, cfg)
            ref = oracles.oracle_map_score(dets, ds, cfg)
            assert math.isclose(ours, ref, abs_tol=1e-9), (ours, ref)


def test_criterion_3_nms_ensemble_oracle_equivalence():
    rng = np.random.default_rng(330)
    with criterion(3, "NMS/ensemble oracle equivalence (1000 images)", budget_s=10.0):
        for round_no in range(1000):
            dets = random_detections(rng, n_max=20)
            threshold = float(rng.choice([0.25, 1 / 3, 0.5, 0.75]))
            assert nms(dets, threshold) == oracles.oracle_nms(dets, threshold)
            if round_no % 2 == 0:
                det_sets = [
                    ("a", [Detection(d.image_id, d.category_id, d.bbox, d.score, "a")
                           for d in random_detections(rng, n_max=10)]),
                    ("b", [Detection(d.image_id, d.category_id, d.bbox, d.score, "b")
                           for d in random_detections(rng, n_max=10)]),
                ]
                cfg = EnsembleConfig(
                    {"a": float(rng.choice([0.5, 1.0])),
                     "b": float(rng.choice([0.75, 1.0, 1.5]))},
                    iou_threshold=threshold,
                    score_floor=float(rng.choice([0.0, 0.25])),
                )
                assert ensemble(det_sets, cfg) == oracles.oracle_ensemble(det_sets, cfg)


def test_criterion_4_prototype_math_suite():
    rng = np.random.default_rng(440)
    with criterion(4, "prototype-math oracle suite (8 ops x 200)"):
        for _ in range(200):
            dim = int(rng.integers(1, 9))

            # ifc_affinity
            nk = int(rng.integers(1, 7))
            n_classes = int(rng.integers(1, 4))
            features = rng.normal(size=(nk, dim))
            labels = np.zeros((nk, n_classes))
            for row in range(nk):
                labels[row, int(rng.integers(0, n_classes))] = 1.0
            beta = float(rng.uniform(0.1, 3.0))
            cache = FeatureCache(features, labels, beta)
            query = rng.normal(size=dim)
            affinity, logits = ifc_affinity(query, cache)
            ref_aff, ref_logits = oracles.oracle_ifc(query, features, labels, beta)
            assert np.allclose(affinity, ref_aff, atol=1e-9)
            assert np.allclose(logits, ref_logits, atol=1e-9)

            # proto_scores
            protos = rng.normal(size=(int(rng.integers(1, 6)), dim))
            sigma = float(rng.uniform(0.1, 2.0))
            assert np.allclose(
                proto_scores(query, protos, sigma),
                oracles.oracle_proto_scores(query, protos, sigma), atol=1e-9)

            # fuse
            sources = [(rng.normal(size=dim), float(rng.uniform(0, 1)))
                       for _ in range(int(rng.integers(1, 6)))]
            assert np.allclose(fuse(sources), oracles.oracle_fuse(sources), atol=1e-9)

            # tempered_similarity
            u, v = rng.normal(size=dim), rng.normal(size=dim)
            tau = float(rng.uniform(0.01, 2.0))
            assert abs(tempered_similarity(u, v, tau)
                       - oracles.oracle_tempered(u, v, tau)) <= 1e-9

            # soft_mask
            h, w = int(rng.integers(1, 7)), int(rng.integers(1, 7))
            mask = (rng.random((h, w)) < 0.5).astype(float)
            if not mask.any():
                mask[0, 0] = 1.0
            sigma_mask = float(rng.uniform(0.4, 2.5))
            assert np.allclose(soft_mask(mask, sigma_mask),
                               oracles.oracle_soft_mask(mask, sigma_mask), atol=1e-9)

            # masked_mean
            grid = rng.normal(size=(h, w, dim))
            weights = rng.uniform(0, 1, size=(h, w))
            weights[0, 0] += 0.05
            assert np.allclose(masked_mean(grid, weights),
                               oracles.oracle_masked_mean(grid, weights), atol=1e-9)

            # nearest_support
            supports = [(rng.normal(size=dim), int(rng.integers(1, 4)))
                        for _ in range(int(rng.integers(1, 7)))]
            ours_ns = nearest_support(query, supports)
            ref_ns = oracles.oracle_nearest_support(query, supports)
            assert ours_ns[0] == ref_ns[0]
            assert abs(ours_ns[1] - ref_ns[1]) <= 1e-9

            # refine_prototypes
            proj_dim = int(rng.integers(1, 9))
            nq, ns = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            f_q = rng.normal(size=(nq, dim))
            f_s = rng.normal(size=(ns, dim))
            proj = ProjectionSet(rng.normal(size=(dim, proj_dim)),
                                 rng.normal(size=(dim, proj_dim)),
                                 rng.normal(size=(dim, proj_dim)),
                                 rng.normal(size=(dim, dim)),
                                 rng.normal(size=(dim, dim)))
            alpha = float(rng.uniform(0, 1))
            assert np.allclose(
                refine_prototypes(f_q, f_s, proj, alpha, k_shot=ns),
                oracles.oracle_refine(f_q, f_s, proj, alpha), atol=1e-9)

        # tagged identities
        for _ in range(50):
            dim = int(rng.integers(2, 9))
            protos = rng.normal(size=(4, dim))
            query = rng.normal(size=dim)
            argmaxes = {
                int(np.argmax([tempered_similarity(query, p, tau) for p in protos]))
                for tau in (0.01, 0.07, 1.0, 5.0)
            }
            assert len(argmaxes) == 1

            f_q = rng.normal(size=(3, dim))
            f_s = rng.normal(size=(2, dim))
            wild = ProjectionSet(rng.normal(size=(dim, dim)),
                                 rng.normal(size=(dim, dim)),
                                 rng.normal(size=(dim, dim)),
                                 rng.normal(size=(dim, dim)),
                                 rng.normal(size=(dim, dim)))
            assert np.array_equal(
                refine_prototypes(f_q, f_s, wild, alpha=0.0, k_shot=2),
                f_s.mean(axis=0))
            ident = ProjectionSet.identity(dim)
            assert np.allclose(
                refine_prototypes(f_q, f_s, ident, alpha=1.0, k_shot=2),
                oracles.oracle_refine(f_q, f_s, ident, alpha=1.0), atol=1e-12)

            # self-match on an exactly normalizable vector: cosine is exactly 1
            row = np.zeros(dim)
            row[int(rng.integers(0, dim))] = float(rng.integers(1, 5))
            cache = FeatureCache(row[None, :], np.array([[1.0]]), beta=1.0)
            affinity, _ = ifc_affinity(row, cache)
            assert affinity[0] == 1.0


def test_criterion_5_domain_statistics():
    rng = np.random.default_rng(550)
    with criterion(5, "domain statistics"):
        for _ in range(100):
            x = rng.normal(size=(int(rng.integers(1, 9)), int(rng.integers(1, 6))))
            assert abs(mmd(x, x)) <= 1e-12
            y = rng.normal(size=(int(rng.integers(1, 9)), x.shape[1]))
            assert abs(mmd(x, y) - mmd(y, x)) <= 1e-12

        hand = 2.0 - 2.0 * math.exp(-0.5)
        assert abs(mmd(np.array([[0.0]]), np.array([[1.0]]), MMDConfig((1.0,)))
                   - hand) <= 1e-12

        x = rng.normal(size=(6, 7, 3))
        stats = ChannelStats.from_array(x)
        assert np.array_equal(style_transfer(x, stats, stats), x)

        for _ in range(1000):
            n, z = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            data = rng.normal(size=(n, 2))
            losses = vae_losses(data, data, rng.normal(size=(n, z)),
                                rng.uniform(-4, 4, size=(n, z)))
            assert losses.kl >= 0.0

        assert [warmup_alpha(t, 500) for t in (0, 250, 500, 10**6)] == \
            [0.0, 0.5, 1.0, 1.0]


def test_criterion_6_episode_protocol():
    rng = np.random.default_rng(660)
    with criterion(6, "episode protocol (200 datasets x seeds)"):
        for _ in range(200):
            n_classes = int(rng.integers(1, 5))
            n_images = int(rng.integers(2, 8))
            images = {i: (64, 64) for i in range(1, n_images + 1)}
            categories = {c: f"class_{c}" for c in range(1, n_classes + 1)}
            annotations = []
            ann_id = 1
            k = int(rng.integers(1, 4))
            for c in range(1, n_classes + 1):
                for _ in range(int(rng.integers(k, k + 5))):
                    img = int(rng.integers(1, n_images + 1))
                    x = int(rng.integers(0, 50))
                    y = int(rng.integers(0, 50))
                    annotations.append((ann_id, img, c, (x, y, x + 6, y + 6)))
                    ann_id += 1
            ds = make_dataset(images, categories, annotations)
            seed = int(rng.integers(0, 2**63))

            episode = sample_episode(ds, k, seed)
            assert all(len(ids) == k for ids in episode.support.values())
            assert set(episode.support) == set(categories)

            ann_index = ds.annotations_by_id()
            support_images = {ann_index[a].image_id
                              for ids in episode.support.values() for a in ids}
            assert support_images.isdisjoint(episode.query_image_ids)

            repeat = sample_episode(ds, k, seed)
            assert json.dumps(episode.to_json_dict()) == \
                json.dumps(repeat.to_json_dict())


def test_criterion_7_self_training_loop():
    rng = np.random.default_rng(770)
    with criterion(7, "self-training loop"):
        # scripted replay fixture, unrolled by hand:
        # t=1 adds the confident non-overlapping box (-> id 2) and drops the
        # duplicate of label 1; t=2 adds the cross-class box (-> id 3)
        initial = [GroundTruthBox(1, 1, 1, BBox(0, 0, 10, 10))]
        t1 = [Detection(1, 1, BBox(0, 0, 10, 10), 0.9),
              Detection(1, 1, BBox(40, 40, 50, 50), 0.7),
              Detection(1, 1, BBox(20, 20, 26, 26), 0.6)]  # exactly at cutoff
        t2 = [Detection(1, 2, BBox(0, 0, 10, 10), 0.61),
              Detection(1, 1, BBox(40, 40, 50, 50), 0.99)]
        cfg = PseudoLabelConfig(lambda_conf=0.6, iterations=2, dedup_iou=0.5)
        labels, trace = self_train_loop([1], ReplayScorer([t1, t2]), initial, cfg)
        assert [t.to_json_dict() for t in trace] == [
            {"iteration": 1, "added_annotation_ids": [2], "label_count": 2},
            {"iteration": 2, "added_annotation_ids": [3], "label_count": 3},
        ]
        assert [(g.annotation_id, g.category_id, g.bbox) for g in labels] == [
            (1, 1, BBox(0, 0, 10, 10)),
            (2, 1, BBox(40, 40, 50, 50)),
            (3, 2, BBox(0, 0, 10, 10)),
        ]

        # monotone label counts over randomized scorers
        for _ in range(100):
            seed = int(rng.integers(0, 2**31))

            class RandomScorer:
                def __init__(self, seed):
                    self.rng = np.random.default_rng(seed)

                def score(self, image_id, labels):
                    return [Detection(image_id, int(self.rng.integers(1, 3)),
                                      random_box(self.rng),
                                      round(float(self.rng.uniform(0, 1)), 3))
                            for _ in range(int(self.rng.integers(0, 4)))]

            start = [GroundTruthBox(1, 1, 1, BBox(0, 0, 8, 8))]
            _, rand_trace = self_train_loop(
                [1, 2], RandomScorer(seed), start,
                PseudoLabelConfig(iterations=int(rng.integers(1, 6))))
            counts = [1] + [t.label_count for t in rand_trace]
            assert all(b >= a for a, b in zip(counts, counts[1:]))

        # lambda = 1.0 is the identity: no score is strictly above 1
        class MaxScorer:
            def score(self, image_id, labels):
                return [Detection(image_id, 1, BBox(30, 30, 40, 40), 1.0)]

        same, _ = self_train_loop([1], MaxScorer(), initial,
                                  PseudoLabelConfig(lambda_conf=1.0, iterations=3))
        assert same == initial
