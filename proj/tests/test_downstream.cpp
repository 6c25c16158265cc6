#include <doctest.h>

#include <cmath>

#include "usdrl/downstream.hpp"

using namespace usdrl;
using namespace usdrl::downstream;

namespace {

Mat<double> gaussian(std::size_t n, std::size_t d, Rng& rng, double scale = 1.0) {
    Mat<double> m(n, d);
    for (auto& v : m.vec()) v = scale * rng.normal();
    return m;
}

using Videos = std::vector<std::vector<SegmentTriplet>>;

}  // namespace

TEST_CASE("linear_probe: separable, chance level, memorization, class check") {
    SUBCASE("linearly separable two-class toy reaches 1.0") {
        Rng rng(61);
        Mat<double> xtr(40, 3), xte(20, 3);
        std::vector<int> ytr(40), yte(20);
        for (std::size_t i = 0; i < 40; ++i) {
            ytr[i] = static_cast<int>(i % 2);
            xtr(i, 0) = (ytr[i] ? 4.0 : -4.0) + 0.3 * rng.normal();
            xtr(i, 1) = rng.normal();
            xtr(i, 2) = rng.normal();
        }
        for (std::size_t i = 0; i < 20; ++i) {
            yte[i] = static_cast<int>(i % 2);
            xte(i, 0) = (yte[i] ? 4.0 : -4.0) + 0.3 * rng.normal();
            xte(i, 1) = rng.normal();
            xte(i, 2) = rng.normal();
        }
        CHECK(linear_probe(xtr, ytr, xte, yte) == doctest::Approx(1.0));
    }

    SUBCASE("shuffled labels over 20 seeds hover at chance") {
        double total = 0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            Rng rng(100 + seed);
            Mat<double> xtr = gaussian(80, 8, rng);
            Mat<double> xte = gaussian(40, 8, rng);
            std::vector<int> ytr(80), yte(40);
            for (auto& y : ytr) y = static_cast<int>(rng.uniform_int(0, 3));
            for (auto& y : yte) y = static_cast<int>(rng.uniform_int(0, 3));
            total += linear_probe(xtr, ytr, xte, yte, 60, 1e-2, seed);
        }
        const double mean = total / 20.0;
        CHECK(mean > 0.15);
        CHECK(mean < 0.35);
    }

    SUBCASE("training accuracy on memorized data beats the shuffled baseline") {
        Rng rng(62);
        Mat<double> x = gaussian(30, 6, rng);
        std::vector<int> y(30);
        for (auto& v : y) v = static_cast<int>(rng.uniform_int(0, 2));
        const double self = linear_probe(x, y, x, y, 300, 1e-2, 0);
        std::vector<int> shuffled = y;
        Rng shuffler(63);
        shuffler.shuffle(shuffled.begin(), shuffled.end());
        const double baseline = linear_probe(x, y, x, shuffled, 300, 1e-2, 0);
        CHECK(self >= baseline);
    }

    SUBCASE("a test class missing from training is an error") {
        Mat<double> xtr(4, 2, 1.0), xte(2, 2, 1.0);
        CHECK_THROWS_WITH_AS(linear_probe(xtr, {0, 0, 1, 1}, xte, {1, 2}),
                             doctest::Contains("class 2"), std::runtime_error);
    }
}

TEST_CASE("knn_retrieve: exact match, cosine case, scale invariance, zero norm") {
    SUBCASE("a query equal to a gallery vector retrieves it first") {
        Mat<double> gallery(3, 2);
        gallery(0, 0) = 1; gallery(0, 1) = 0;
        gallery(1, 0) = 0; gallery(1, 1) = 1;
        gallery(2, 0) = 1; gallery(2, 1) = 1;
        Mat<double> query(1, 2);
        query(0, 0) = 0; query(0, 1) = 1;
        auto res = knn_retrieve(query, {7}, gallery, {5, 7, 9});
        CHECK(res.ranked[0][0] == 1);
        CHECK(res.top1 == 1.0);
    }

    SUBCASE("cosine hand computation picks label A") {
        Mat<double> gallery(2, 2);
        gallery(0, 0) = 0.9; gallery(0, 1) = 0.1;  // label A = 0
        gallery(1, 0) = 0.0; gallery(1, 1) = 1.0;  // label B = 1
        Mat<double> query(1, 2);
        query(0, 0) = 1; query(0, 1) = 0;
        auto res = knn_retrieve(query, {0}, gallery, {0, 1});
        CHECK(res.ranked[0][0] == 0);
        CHECK(res.top1 == 1.0);
    }

    SUBCASE("scaling all embeddings by 7 keeps every ranking") {
        Rng rng(64);
        Mat<double> gallery = gaussian(10, 5, rng);
        Mat<double> query = gaussian(4, 5, rng);
        std::vector<int> glab(10), qlab(4, 0);
        for (std::size_t i = 0; i < 10; ++i) glab[i] = static_cast<int>(i % 3);
        auto base = knn_retrieve(query, qlab, gallery, glab);
        Mat<double> g7 = gallery, q7 = query;
        for (auto& v : g7.vec()) v *= 7;
        for (auto& v : q7.vec()) v *= 7;
        auto scaled = knn_retrieve(q7, qlab, g7, glab);
        CHECK(scaled.ranked == base.ranked);
    }

    SUBCASE("zero-norm embeddings name the offending id") {
        Mat<double> gallery(2, 2, 1.0);
        Mat<double> query(1, 2, 0.0);
        std::vector<std::string> qids = {"bad_query"};
        CHECK_THROWS_WITH_AS(knn_retrieve(query, {0}, gallery, {0, 1}, &qids),
                             doctest::Contains("bad_query"), std::runtime_error);
    }
}

TEST_CASE("frame_probs: tiling, constant average, overlap oracle, short video") {
    // video whose coordinate encodes the absolute frame index; infer reads it
    auto make_video = [](std::size_t t) {
        skelio::SkeletonSequence v;
        v.frames = skelio::FrameArray(t, 1, 1, 3);
        for (std::size_t i = 0; i < t; ++i) v.frames.at(i, 0, 0, 0) = static_cast<double>(i);
        return v;
    };
    // window probability depends on the frame index parity
    auto infer = [](const skelio::SkeletonSequence& w) {
        Mat<double> p(w.frames.t, 3);
        for (std::size_t r = 0; r < w.frames.t; ++r) {
            const auto idx = static_cast<long>(std::lround(w.frames.at(r, 0, 0, 0)));
            const bool even = idx % 2 == 0;
            p(r, 0) = even ? 0.7 : 0.2;
            p(r, 1) = even ? 0.2 : 0.7;
            p(r, 2) = 0.1;
        }
        return p;
    };

    SUBCASE("stride = window tiles the outputs") {
        auto v = make_video(8);
        auto fp = frame_probs(infer, v, 4, 4);
        REQUIRE(fp.rows() == 8);
        for (std::size_t r = 0; r < 8; ++r) {
            const bool even = r % 2 == 0;
            CHECK(fp(r, 0) == doctest::Approx(even ? 0.7 : 0.2).epsilon(1e-12));
            CHECK(fp(r, 1) == doctest::Approx(even ? 0.2 : 0.7).epsilon(1e-12));
        }
    }

    SUBCASE("identical overlapping windows leave probabilities unchanged") {
        auto v = make_video(6);
        auto fp = frame_probs(infer, v, 4, 2);  // windows [0,4) and [2,6)
        for (std::size_t r = 0; r < 6; ++r) {
            const bool even = r % 2 == 0;
            CHECK(fp(r, 0) == doctest::Approx(even ? 0.7 : 0.2).epsilon(1e-9));
        }
    }

    SUBCASE("hand-averaged two-window overlap") {
        auto v = make_video(6);
        // window starting at 0 reports class 0, window starting at 2 reports class 1
        auto by_start = [](const skelio::SkeletonSequence& w) {
            Mat<double> p(w.frames.t, 3, 0.0);
            const auto start = static_cast<long>(std::lround(w.frames.at(0, 0, 0, 0)));
            for (std::size_t r = 0; r < w.frames.t; ++r) {
                p(r, 0) = start == 0 ? 0.8 : 0.4;
                p(r, 1) = start == 0 ? 0.1 : 0.5;
                p(r, 2) = 0.1;
            }
            return p;
        };
        auto fp = frame_probs(by_start, v, 4, 2);
        // frames 2..3 are covered by both windows: mean then renormalize
        CHECK(fp(0, 0) == doctest::Approx(0.8).epsilon(1e-9));
        CHECK(fp(2, 0) == doctest::Approx(0.6).epsilon(1e-9));
        CHECK(fp(2, 1) == doctest::Approx(0.3).epsilon(1e-9));
        CHECK(fp(5, 1) == doctest::Approx(0.5).epsilon(1e-9));
        for (std::size_t r = 0; r < 6; ++r) {
            double sum = 0;
            for (std::size_t c = 0; c < 3; ++c) sum += fp(r, c);
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }

    SUBCASE("a video shorter than the window uses one zero-padded window") {
        auto v = make_video(3);
        auto fp = frame_probs(infer, v, 5, 2);
        CHECK(fp.rows() == 3);  // padding frames excluded
        CHECK(fp(0, 0) == doctest::Approx(0.7).epsilon(1e-12));
    }
}

TEST_CASE("postprocess_segments: background, run merge, min length") {
    SUBCASE("all-background probabilities give an empty list") {
        Mat<double> fp(10, 3);
        for (std::size_t r = 0; r < 10; ++r) {
            fp(r, 0) = 0.1;
            fp(r, 1) = 0.1;
            fp(r, 2) = 0.8;  // background column
        }
        CHECK(postprocess_segments(fp).empty());
    }

    SUBCASE("a clean run becomes one scored triplet") {
        Mat<double> fp(20, 5, 0.0);
        for (std::size_t r = 0; r < 20; ++r) {
            const bool in_run = r >= 5 && r < 12;
            fp(r, 3) = in_run ? 0.8 : 0.05;
            fp(r, 4) = in_run ? 0.2 : 0.9;  // background
            fp(r, 0) = in_run ? 0.0 : 0.05;
        }
        auto segs = postprocess_segments(fp, 5, 9);
        REQUIRE(segs.size() == 1);
        CHECK(segs[0].start == 5);
        CHECK(segs[0].end == 12);
        CHECK(segs[0].cls == 3);
        CHECK(segs[0].score == doctest::Approx(0.8).epsilon(1e-12));
    }

    SUBCASE("runs shorter than min length are dropped") {
        Mat<double> fp(9, 3, 0.0);
        for (std::size_t r = 0; r < 9; ++r) {
            fp(r, 0) = r == 4 ? 0.9 : 0.1;
            fp(r, 2) = r == 4 ? 0.1 : 0.9;
        }
        CHECK(postprocess_segments(fp, 2, 1).empty());
        CHECK(postprocess_segments(fp, 1, 1).size() == 1);
    }
}

TEST_CASE("eval_detection_map: six hand-computed fixtures") {
    SUBCASE("fixture 1: IoU 0.8 single instance -> AP 1.0") {
        Videos gt = {{{0, 10, 0, 1.0}}};
        Videos preds = {{{0, 8, 0, 0.9}}};
        auto r = eval_detection_map(preds, gt, 0.5);
        CHECK(r.map_a == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(r.map_v == doctest::Approx(1.0).epsilon(1e-9));
    }

    SUBCASE("fixture 2: IoU 0.25 miss -> AP 0") {
        Videos gt = {{{0, 10, 0, 1.0}}};
        Videos preds = {{{5, 20, 0, 0.9}}};
        auto r = eval_detection_map(preds, gt, 0.5);
        CHECK(r.map_a == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(r.map_v == doctest::Approx(0.0).epsilon(1e-9));
    }

    SUBCASE("fixture 3: predictions identical to ground truth -> all 1.0") {
        Videos gt = {{{0, 10, 0, 1.0}, {15, 30, 1, 1.0}}, {{5, 25, 1, 1.0}}};
        Videos preds = gt;
        auto r = eval_detection_map(preds, gt, 0.5);
        CHECK(r.map_a == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(r.map_v == doctest::Approx(1.0).epsilon(1e-9));
    }

    SUBCASE("fixture 4: precision envelope with a mid-ranked false positive") {
        Videos gt = {{{0, 10, 0, 1.0}, {20, 30, 0, 1.0}}};
        Videos preds = {{{0, 9, 0, 0.9}, {40, 50, 0, 0.8}, {20, 29, 0, 0.7}}};
        // sorted: TP, FP, TP -> precision 1, 1/2, 2/3; recall 1/2, 1/2, 1
        // envelope AP = 0.5 * 1 + 0.5 * 2/3 = 5/6
        auto r = eval_detection_map(preds, gt, 0.5);
        CHECK(r.map_a == doctest::Approx(5.0 / 6.0).epsilon(1e-9));
        CHECK(r.map_v == doctest::Approx(5.0 / 6.0).epsilon(1e-9));
    }

    SUBCASE("fixture 5: class without ground truth is excluded from mAP_a") {
        Videos gt = {{{0, 10, 0, 1.0}, {20, 30, 1, 1.0}}};
        Videos preds = {{{0, 10, 0, 0.9}, {20, 30, 1, 0.8}, {40, 50, 2, 0.95}}};
        auto r = eval_detection_map(preds, gt, 0.5);
        CHECK(r.map_a == doctest::Approx(1.0).epsilon(1e-9));
        // per-video pooled AP: FP(0.95), TP(0.9), TP(0.8) -> 2/3
        CHECK(r.map_v == doctest::Approx(2.0 / 3.0).epsilon(1e-9));
    }

    SUBCASE("fixture 6: duplicate detections cannot double-claim one segment") {
        Videos gt = {{{0, 10, 0, 1.0}, {20, 30, 0, 1.0}}};
        Videos preds = {{{0, 10, 0, 0.9}, {1, 10, 0, 0.85}, {20, 30, 0, 0.8}}};
        // TP, FP (duplicate), TP -> same envelope as fixture 4: 5/6
        auto r = eval_detection_map(preds, gt, 0.5);
        CHECK(r.map_a == doctest::Approx(5.0 / 6.0).epsilon(1e-9));
    }
}

TEST_CASE("eval_detection_map: order/scale invariances and threshold monotonicity") {
    Rng rng(65);
    Videos gt(3), preds(3);
    for (std::size_t v = 0; v < 3; ++v) {
        std::size_t at = 0;
        for (int s = 0; s < 4; ++s) {
            const auto len = static_cast<std::size_t>(rng.uniform_int(5, 20));
            gt[v].push_back({at, at + len, static_cast<int>(rng.uniform_int(0, 2)), 1.0});
            at += len + static_cast<std::size_t>(rng.uniform_int(3, 10));
        }
        for (const auto& g : gt[v]) {
            // jittered prediction
            const auto shift = static_cast<std::size_t>(rng.uniform_int(0, 4));
            preds[v].push_back(
                {g.start + shift, g.end + shift, g.cls, rng.uniform(0.3, 1.0)});
            if (rng.uniform() < 0.5)
                preds[v].push_back({g.start + 30, g.end + 42, g.cls, rng.uniform(0.1, 0.9)});
        }
    }

    SUBCASE("prediction order does not matter") {
        auto base = eval_detection_map(preds, gt, 0.5);
        Videos shuffled = preds;
        Rng sh(66);
        for (auto& v : shuffled) sh.shuffle(v.begin(), v.end());
        auto r = eval_detection_map(shuffled, gt, 0.5);
        CHECK(r.map_a == doctest::Approx(base.map_a).epsilon(1e-12));
        CHECK(r.map_v == doctest::Approx(base.map_v).epsilon(1e-12));
    }

    SUBCASE("order-preserving score transforms do not matter") {
        Videos transformed = preds;
        for (auto& v : transformed)
            for (auto& p : v) p.score = 0.5 * p.score + 2.0;
        auto base = eval_detection_map(preds, gt, 0.5);
        auto r = eval_detection_map(transformed, gt, 0.5);
        CHECK(r.map_a == doctest::Approx(base.map_a).epsilon(1e-12));
    }

    SUBCASE("mAP is non-increasing in the IoU threshold") {
        double prev_a = 2.0, prev_v = 2.0;
        for (double th : {0.3, 0.4, 0.5, 0.6, 0.7}) {
            auto r = eval_detection_map(preds, gt, th);
            CHECK(r.map_a <= prev_a + 1e-12);
            CHECK(r.map_v <= prev_v + 1e-12);
            prev_a = r.map_a;
            prev_v = r.map_v;
        }
    }

    SUBCASE("threshold outside (0,1) is rejected") {
        CHECK_THROWS(eval_detection_map(preds, gt, 0.0));
        CHECK_THROWS(eval_detection_map(preds, gt, 1.0));
    }
}

TEST_CASE("eval_segmentation: six hand-computed fixtures") {
    SUBCASE("fixture 1: perfect predictions hit every maximum") {
        const std::vector<int> gt = {-1, -1, 0, 0, 0, 1, 1, -1, 2, 2};
        auto r = eval_segmentation(gt, gt);
        CHECK(r.acc == doctest::Approx(100.0));
        CHECK(r.edit == doctest::Approx(100.0));
        CHECK(r.f1_10 == doctest::Approx(100.0));
        CHECK(r.f1_25 == doctest::Approx(100.0));
        CHECK(r.f1_50 == doctest::Approx(100.0));
    }

    SUBCASE("fixture 2: dropping the middle segment costs one edit") {
        // GT segments A,B,C; prediction A,C aligned frame-wise where they overlap
        const std::vector<int> gt = {0, 0, 0, 1, 1, 1, 2, 2, 2};
        const std::vector<int> pred = {0, 0, 0, 0, 0, 2, 2, 2, 2};
        auto r = eval_segmentation(pred, gt);
        CHECK(r.edit == doctest::Approx((1.0 - 1.0 / 3.0) * 100).epsilon(1e-9));
    }

    SUBCASE("fixture 3: IoU 0.3 passes F1@10 and F1@25, fails F1@50") {
        // GT [0,10) class 0; prediction [7,20): inter 3, union 20 - wait, craft
        // exactly IoU 0.3: pred [4,14): inter 6, union 14 -> 3/7; use [6,18):
        // inter 4, union 18 -> 2/9. Instead gt [0,10), pred [7,17): inter 3,
        // union 17 -> 0.176. Take gt [0,12), pred [6,18): inter 6, union 18 ->
        // 1/3 >= 0.25, < 0.5.
        std::vector<int> gt(20, -1), pred(20, -1);
        for (int i = 0; i < 12; ++i) gt[i] = 0;
        for (int i = 6; i < 18; ++i) pred[i] = 0;
        auto r = eval_segmentation(pred, gt);
        CHECK(r.f1_10 == doctest::Approx(100.0).epsilon(1e-9));
        CHECK(r.f1_25 == doctest::Approx(100.0).epsilon(1e-9));
        CHECK(r.f1_50 == doctest::Approx(0.0).epsilon(1e-9));
    }

    SUBCASE("fixture 4: frame accuracy counts background frames") {
        const std::vector<int> gt = {-1, -1, 0, 0};
        const std::vector<int> pred = {-1, 0, 0, 0};
        auto r = eval_segmentation(pred, gt);
        CHECK(r.acc == doctest::Approx(75.0).epsilon(1e-9));
    }

    SUBCASE("fixture 5: wrong class with perfect overlap fails all F1") {
        std::vector<int> gt(10, 0), pred(10, 1);
        auto r = eval_segmentation(pred, gt);
        CHECK(r.acc == doctest::Approx(0.0));
        CHECK(r.f1_10 == doctest::Approx(0.0));
        CHECK(r.edit == doctest::Approx(0.0));  // lev([1],[0]) = 1, max len 1
    }

    SUBCASE("fixture 6: precision/recall asymmetry in F1") {
        // one GT segment, two predicted segments of the same class; the first
        // matches, the second is a false positive: P = 1/2, R = 1, F1 = 2/3
        std::vector<int> gt(20, -1), pred(20, -1);
        for (int i = 0; i < 8; ++i) gt[i] = 0;
        for (int i = 0; i < 8; ++i) pred[i] = 0;
        for (int i = 12; i < 18; ++i) pred[i] = 0;
        auto r = eval_segmentation(pred, gt);
        CHECK(r.f1_10 == doctest::Approx(100.0 * 2.0 / 3.0).epsilon(1e-9));
    }
}

TEST_CASE("predict_early: full-ratio equality, constant evidence, crossovers") {
    auto make_seq = [](std::size_t t) {
        skelio::SkeletonSequence s;
        s.frames = skelio::FrameArray(t, 1, 1, 3);
        return s;
    };

    SUBCASE("ratios outside (0,1] are rejected") {
        auto probs = [](const skelio::SkeletonSequence& s) {
            return Mat<double>(s.frames.t, 2, 0.5);
        };
        CHECK_THROWS(predict_early(probs, {make_seq(4)}, {0}, {0.0}));
        CHECK_THROWS(predict_early(probs, {make_seq(4)}, {0}, {1.5}));
    }

    SUBCASE("constant 0.9 evidence is correct at every ratio") {
        auto probs = [](const skelio::SkeletonSequence& s) {
            Mat<double> p(s.frames.t, 3, 0.05);
            for (std::size_t r = 0; r < p.rows(); ++r) p(r, 1) = 0.9;
            return p;
        };
        auto curve = predict_early(probs, {make_seq(10)}, {1},
                                   {0.1, 0.2, 0.5, 1.0});
        for (double acc : curve.accuracy) CHECK(acc == 1.0);
    }

    SUBCASE("early frames favor A, late frames favor B") {
        auto probs = [](const skelio::SkeletonSequence& s) {
            Mat<double> p(s.frames.t, 2, 0.0);
            for (std::size_t r = 0; r < p.rows(); ++r) {
                const bool early = r < 2;
                p(r, 0) = early ? 0.9 : 0.2;
                p(r, 1) = early ? 0.1 : 0.8;
            }
            return p;
        };
        auto seq = make_seq(10);
        // label B = 1: wrong at ratio 0.2 (2 frames, mean favors A), right at 1.0
        auto curve = predict_early(probs, {seq}, {1}, {0.2, 1.0});
        CHECK(curve.accuracy[0] == 0.0);
        CHECK(curve.accuracy[1] == 1.0);
        // hand check at ratio 1.0: mean_0 = (2*0.9 + 8*0.2)/10 = 0.34 < 0.66
        auto curve_a = predict_early(probs, {seq}, {0}, {0.2, 1.0});
        CHECK(curve_a.accuracy[0] == 1.0);
        CHECK(curve_a.accuracy[1] == 0.0);
    }

    SUBCASE("accuracy at ratio 1.0 equals full-sequence aggregated recognition") {
        Rng rng(67);
        std::vector<skelio::SkeletonSequence> seqs;
        std::vector<int> labels;
        std::vector<Mat<double>> tables;
        for (int i = 0; i < 12; ++i) {
            seqs.push_back(make_seq(8));
            seqs.back().id = std::to_string(i);
            labels.push_back(static_cast<int>(rng.uniform_int(0, 2)));
            Mat<double> p(8, 3);
            for (auto& v : p.vec()) v = rng.uniform();
            tables.push_back(p);
        }
        auto probs = [&](const skelio::SkeletonSequence& s) {
            return tables[static_cast<std::size_t>(std::stoi(s.id))];
        };
        auto curve = predict_early(probs, seqs, labels, {1.0});
        // independent aggregation
        std::size_t hits = 0;
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            double best = -1;
            int cls = 0;
            for (std::size_t c = 0; c < 3; ++c) {
                double s = 0;
                for (std::size_t r = 0; r < 8; ++r) s += tables[i](r, c);
                if (s > best) {
                    best = s;
                    cls = static_cast<int>(c);
                }
            }
            if (cls == labels[i]) ++hits;
        }
        CHECK(curve.accuracy[0] == doctest::Approx(static_cast<double>(hits) / 12.0));
    }
}

TEST_CASE("ensemble_logits: singleton, ties, mean oracle") {
    SUBCASE("a single model is the identity") {
        Mat<double> p(2, 3);
        p(0, 0) = 0.7; p(0, 1) = 0.2; p(0, 2) = 0.1;
        p(1, 0) = 0.1; p(1, 1) = 0.3; p(1, 2) = 0.6;
        auto pred = ensemble_logits({p});
        CHECK(pred == std::vector<int>{0, 2});
    }

    SUBCASE("opposite predictions tie toward the lower class index") {
        Mat<double> a(1, 2), b(1, 2);
        a(0, 0) = 0.6; a(0, 1) = 0.4;
        b(0, 0) = 0.4; b(0, 1) = 0.6;
        CHECK(ensemble_logits({a, b}) == std::vector<int>{0});
    }

    SUBCASE("three crafted vectors match the hand mean") {
        Mat<double> a(1, 3), b(1, 3), c(1, 3);
        a(0, 0) = 0.5; a(0, 1) = 0.3; a(0, 2) = 0.2;
        b(0, 0) = 0.1; b(0, 1) = 0.8; b(0, 2) = 0.1;
        c(0, 0) = 0.2; c(0, 1) = 0.5; c(0, 2) = 0.3;
        // means: 0.2667, 0.5333, 0.2 -> class 1
        CHECK(ensemble_logits({a, b, c}) == std::vector<int>{1});
    }

    SUBCASE("class-count mismatch is an error") {
        Mat<double> a(1, 2, 0.5), b(1, 3, 0.33);
        CHECK_THROWS(ensemble_logits({a, b}));
    }
}

TEST_CASE("stratified_sample: determinism and tiny-fraction drops") {
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) labels.push_back(i % 4);
    labels.push_back(4);  // a class with one sample

    auto a = stratified_sample(labels, 0.5, 7);
    auto b = stratified_sample(labels, 0.5, 7);
    CHECK(a == b);
    auto c = stratified_sample(labels, 0.5, 8);
    CHECK(a != c);

    // fraction 0.1 of a single-sample class rounds to zero and is dropped
    auto keep = stratified_sample(labels, 0.1, 7);
    for (std::size_t idx : keep) CHECK(labels[idx] != 4);
    // each 10-sample class contributes exactly one
    std::map<int, int> kept_per_class;
    for (std::size_t idx : keep) ++kept_per_class[labels[idx]];
    for (int k = 0; k < 4; ++k) CHECK(kept_per_class[k] == 1);

    CHECK_THROWS(stratified_sample(labels, 0.0, 1));
    CHECK_THROWS(stratified_sample(labels, 1.5, 1));
}

TEST_CASE("segments_from_labels extracts non-background runs") {
    const std::vector<int> labels = {-1, 0, 0, 1, -1, -1, 1, 1, 1};
    auto segs = segments_from_labels(labels);
    REQUIRE(segs.size() == 3);
    CHECK(segs[0].start == 1);
    CHECK(segs[0].end == 3);
    CHECK(segs[0].cls == 0);
    CHECK(segs[1].start == 3);
    CHECK(segs[1].end == 4);
    CHECK(segs[1].cls == 1);
    CHECK(segs[2].start == 6);
    CHECK(segs[2].end == 9);
}
