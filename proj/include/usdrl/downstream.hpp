#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "usdrl/parallel.hpp"
#include "usdrl/pretrain.hpp"

namespace usdrl::downstream {

// ---------------------------------------------------------------------------
// dense-prediction data types

/// Half-open frame interval with an action class and a confidence score.
struct SegmentTriplet {
    std::size_t start = 0;  // inclusive
    std::size_t end = 0;    // exclusive
    int cls = 0;            // >= 0; background never appears in triplets
    double score = 1.0;

    void validate() const {
        if (start >= end) throw std::runtime_error("SegmentTriplet: start must be < end");
        if (cls < 0) throw std::runtime_error("SegmentTriplet: class must be >= 0");
    }
};

inline double temporal_iou(const SegmentTriplet& a, const SegmentTriplet& b) {
    const double inter = static_cast<double>(std::min(a.end, b.end)) -
                         static_cast<double>(std::max(a.start, b.start));
    if (inter <= 0) return 0.0;
    const double uni = static_cast<double>(a.end - a.start) +
                       static_cast<double>(b.end - b.start) - inter;
    return inter / uni;
}

struct PredictionCurve {
    std::vector<double> ratios;
    std::vector<double> accuracy;
};

// ---------------------------------------------------------------------------
// linear probe

namespace detail {

inline int class_count(const std::vector<int>& a, const std::vector<int>& b) {
    int n = 0;
    for (int y : a) n = std::max(n, y + 1);
    for (int y : b) n = std::max(n, y + 1);
    return n;
}

/// Full-batch Adam on softmax cross-entropy for an affine head. Features are
/// standardized internally for conditioning; the standardization is folded
/// back into the returned (W, b), so the result is a plain affine map on raw
/// features.
inline std::pair<Mat<double>, Mat<double>> train_affine_head(const Mat<double>& x,
                                                             const std::vector<int>& y,
                                                             int n_classes, std::size_t epochs,
                                                             double lr, std::uint64_t seed) {
    const std::size_t n = x.rows(), d = x.cols();
    std::vector<double> mean(d, 0), inv_sd(d, 1);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) mean[c] += x(r, c);
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t c = 0; c < d; ++c) {
        double var = 0;
        for (std::size_t r = 0; r < n; ++r) {
            const double dv = x(r, c) - mean[c];
            var += dv * dv;
        }
        inv_sd[c] = 1.0 / std::sqrt(var / static_cast<double>(n) + 1e-8);
    }
    Mat<double> xs(n, d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) xs(r, c) = (x(r, c) - mean[c]) * inv_sd[c];

    std::vector<ParamDecl> decls = {
        {"head/w", d, static_cast<std::size_t>(n_classes), InitKind::FanInUniform},
        {"head/b", 1, static_cast<std::size_t>(n_classes), InitKind::FanInUniform, false, d}};
    auto params = init_params<double>(decls, seed);
    pretrain::AdamState<double> opt;
    for (std::size_t e = 0; e < epochs; ++e) {
        Graph<double> g;
        ParamLeaves<double> P(g, params);
        auto logits = g.add(g.matmul(g.constant(xs), P("head/w")), P("head/b"));
        auto loss = g.cross_entropy_mean(logits, y);
        g.backward(loss);
        std::unordered_map<std::string, Mat<double>> grads;
        P.collect_grads(grads);
        opt.update(params, grads, lr, 0.0);
    }

    // fold standardization into the affine map: (x - mu) * inv_sd * W + b
    Mat<double> w = params.at("head/w");
    Mat<double> b = params.at("head/b");
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < w.cols(); ++c) {
            const double wv = w(r, c) * inv_sd[r];
            b(0, c) -= mean[r] * wv;
            w(r, c) = wv;
        }
    return {w, b};
}

inline std::vector<int> affine_predict(const Mat<double>& x, const Mat<double>& w,
                                       const Mat<double>& b) {
    Mat<double> logits = matmul(x, w);
    std::vector<int> out(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        int best = 0;
        double bv = logits(r, 0) + b(0, 0);
        for (std::size_t c = 1; c < logits.cols(); ++c) {
            const double v = logits(r, c) + b(0, c);
            if (v > bv) {
                bv = v;
                best = static_cast<int>(c);
            }
        }
        out[r] = best;
    }
    return out;
}

inline double top1(const std::vector<int>& pred, const std::vector<int>& truth) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == truth[i]) ++hit;
    return pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace detail

/// Trains one affine layer on frozen embeddings, reports test top-1.
inline double linear_probe(const Mat<double>& train_x, const std::vector<int>& train_y,
                           const Mat<double>& test_x, const std::vector<int>& test_y,
                           std::size_t epochs = 200, double lr = 1e-2, std::uint64_t seed = 0) {
    if (train_x.rows() != train_y.size() || test_x.rows() != test_y.size())
        throw std::runtime_error("linear_probe: embedding/label count mismatch");
    std::set<int> train_classes(train_y.begin(), train_y.end());
    for (int y : test_y)
        if (!train_classes.count(y))
            throw std::runtime_error("linear_probe: class " + std::to_string(y) +
                                     " present in test but absent in train");
    const int n_classes = detail::class_count(train_y, test_y);
    auto [w, b] = detail::train_affine_head(train_x, train_y, n_classes, epochs, lr, seed);
    return detail::top1(detail::affine_predict(test_x, w, b), test_y);
}

// ---------------------------------------------------------------------------
// retrieval

struct RetrievalResult {
    double top1 = 0;
    std::vector<std::vector<std::size_t>> ranked;  // per query, gallery indices by similarity
};

/// Cosine nearest neighbor; ties break toward the lower gallery index.
inline RetrievalResult knn_retrieve(const Mat<double>& query, const std::vector<int>& query_labels,
                                    const Mat<double>& gallery,
                                    const std::vector<int>& gallery_labels,
                                    const std::vector<std::string>* query_ids = nullptr,
                                    const std::vector<std::string>* gallery_ids = nullptr) {
    if (query.cols() != gallery.cols())
        throw std::runtime_error("knn_retrieve: embedding dimension mismatch");
    auto norms = [](const Mat<double>& m, const std::vector<std::string>* ids, const char* side) {
        std::vector<double> out(m.rows());
        for (std::size_t r = 0; r < m.rows(); ++r) {
            double s = 0;
            for (std::size_t c = 0; c < m.cols(); ++c) s += m(r, c) * m(r, c);
            if (s == 0.0) {
                const std::string id = ids ? (*ids)[r] : std::to_string(r);
                throw std::runtime_error(std::string("knn_retrieve: zero-norm ") + side +
                                         " embedding '" + id + "'");
            }
            out[r] = std::sqrt(s);
        }
        return out;
    };
    const auto qn = norms(query, query_ids, "query");
    const auto gn = norms(gallery, gallery_ids, "gallery");

    RetrievalResult res;
    res.ranked.resize(query.rows());
    std::size_t hits = 0;
    for (std::size_t q = 0; q < query.rows(); ++q) {
        std::vector<double> sim(gallery.rows());
        for (std::size_t g = 0; g < gallery.rows(); ++g) {
            double dot = 0;
            for (std::size_t c = 0; c < query.cols(); ++c) dot += query(q, c) * gallery(g, c);
            sim[g] = dot / (qn[q] * gn[g]);
        }
        std::vector<std::size_t> order(gallery.rows());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
        if (!order.empty() && gallery_labels[order[0]] == query_labels[q]) ++hits;
        res.ranked[q] = std::move(order);
    }
    res.top1 = query.rows() ? static_cast<double>(hits) / static_cast<double>(query.rows()) : 0.0;
    return res;
}

// ---------------------------------------------------------------------------
// sliding-window frame probabilities

/// Runs `infer` (window -> [window_len][n_cols] per-frame probabilities) over
/// the video with the given stride, averages overlaps and renormalizes rows.
/// A tail shorter than the window gets a final window aligned to the end;
/// videos shorter than the window get one zero-padded window.
inline Mat<double> frame_probs(
    const std::function<Mat<double>(const skelio::SkeletonSequence&)>& infer,
    const skelio::SkeletonSequence& video, std::size_t window_len, std::size_t stride) {
    if (stride < 1) throw std::runtime_error("frame_probs: stride must be >= 1");
    const std::size_t t_video = video.frames.t;

    auto slice = [&](std::size_t start, std::size_t len) {
        skelio::SkeletonSequence w = video;
        w.frames = skelio::FrameArray(len, video.frames.m, video.frames.v, video.frames.c);
        const std::size_t per_frame = video.frames.m * video.frames.v * video.frames.c;
        const std::size_t avail = std::min(len, t_video - start);
        std::copy(video.frames.data.begin() + static_cast<std::ptrdiff_t>(start * per_frame),
                  video.frames.data.begin() +
                      static_cast<std::ptrdiff_t>((start + avail) * per_frame),
                  w.frames.data.begin());
        w.frame_labels.reset();
        return w;
    };

    std::vector<std::size_t> starts;
    if (t_video <= window_len) {
        starts.push_back(0);
    } else {
        for (std::size_t s = 0; s + window_len <= t_video; s += stride) starts.push_back(s);
        if (starts.back() + window_len < t_video) starts.push_back(t_video - window_len);
    }

    Mat<double> sums;
    std::vector<double> counts(t_video, 0.0);
    for (std::size_t s : starts) {
        const Mat<double> p = infer(slice(s, window_len));
        if (p.rows() != window_len)
            throw std::runtime_error("frame_probs: window inference row count mismatch");
        if (sums.empty()) sums = Mat<double>(t_video, p.cols());
        const std::size_t valid = std::min(window_len, t_video - s);  // padded tail excluded
        for (std::size_t r = 0; r < valid; ++r) {
            for (std::size_t c = 0; c < p.cols(); ++c) sums(s + r, c) += p(r, c);
            counts[s + r] += 1.0;
        }
    }
    for (std::size_t r = 0; r < t_video; ++r) {
        double row_sum = 0;
        for (std::size_t c = 0; c < sums.cols(); ++c) {
            sums(r, c) /= counts[r];
            row_sum += sums(r, c);
        }
        if (row_sum > 0)
            for (std::size_t c = 0; c < sums.cols(); ++c) sums(r, c) /= row_sum;
    }
    return sums;
}

// ---------------------------------------------------------------------------
// frame probabilities -> segments

/// Median-smooths argmax labels, merges runs of identical non-background
/// labels, scores each run by its mean class probability, and drops runs
/// shorter than min_len. The last probability column is background.
inline std::vector<SegmentTriplet> postprocess_segments(const Mat<double>& fp,
                                                        std::size_t min_len = 5,
                                                        std::size_t smooth_win = 9) {
    const std::size_t t = fp.rows();
    if (t == 0) return {};
    const int background = static_cast<int>(fp.cols()) - 1;
    std::vector<int> labels(t);
    for (std::size_t r = 0; r < t; ++r) {
        int best = 0;
        for (std::size_t c = 1; c < fp.cols(); ++c)
            if (fp(r, c) > fp(r, best)) best = static_cast<int>(c);
        labels[r] = best == background ? -1 : best;
    }
    if (smooth_win > 1) {
        std::vector<int> smoothed(t);
        const std::size_t half = smooth_win / 2;
        for (std::size_t r = 0; r < t; ++r) {
            const std::size_t lo = r >= half ? r - half : 0;
            const std::size_t hi = std::min(t, r + half + 1);
            std::vector<int> win(labels.begin() + static_cast<std::ptrdiff_t>(lo),
                                 labels.begin() + static_cast<std::ptrdiff_t>(hi));
            std::sort(win.begin(), win.end());
            smoothed[r] = win[(win.size() - 1) / 2];
        }
        labels = std::move(smoothed);
    }

    std::vector<SegmentTriplet> out;
    std::size_t run_start = 0;
    for (std::size_t r = 1; r <= t; ++r) {
        if (r == t || labels[r] != labels[run_start]) {
            const int cls = labels[run_start];
            const std::size_t len = r - run_start;
            if (cls >= 0 && len >= min_len) {
                double mean_p = 0;
                for (std::size_t i = run_start; i < r; ++i)
                    mean_p += fp(i, static_cast<std::size_t>(cls));
                out.push_back({run_start, r, cls, mean_p / static_cast<double>(len)});
            }
            run_start = r;
        }
    }
    return out;
}

/// Ground-truth segments from a frame label sequence (-1 = background).
inline std::vector<SegmentTriplet> segments_from_labels(const std::vector<int>& labels) {
    std::vector<SegmentTriplet> out;
    std::size_t run_start = 0;
    for (std::size_t r = 1; r <= labels.size(); ++r) {
        if (r == labels.size() || labels[r] != labels[run_start]) {
            if (labels[run_start] >= 0) out.push_back({run_start, r, labels[run_start], 1.0});
            run_start = r;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// temporal action detection mAP

struct DetectionResult {
    double map_a = 0;  // mean AP over classes, predictions pooled across videos
    double map_v = 0;  // mean over videos of per-video AP
};

namespace detail {

struct PooledPred {
    double score;
    std::size_t video;
    std::size_t index;  // within video, for deterministic ordering
    SegmentTriplet seg;
};

/// All-point interpolated AP from match flags sorted by descending score.
inline double average_precision(const std::vector<PooledPred>& preds,
                                const std::vector<char>& is_tp, std::size_t n_gt) {
    if (n_gt == 0) return 0.0;
    std::vector<double> precision, recall;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (is_tp[i])
            ++tp;
        else
            ++fp;
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    }
    // precision envelope
    for (std::size_t i = precision.size(); i-- > 1;)
        precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double ap = 0, prev_r = 0;
    for (std::size_t i = 0; i < precision.size(); ++i) {
        ap += (recall[i] - prev_r) * precision[i];
        prev_r = recall[i];
    }
    return ap;
}

/// Greedy score-descending matching; each prediction may claim at most one
/// unmatched ground-truth segment of its class with IoU >= threshold (best
/// IoU wins, lower GT index on ties).
inline double pooled_ap(std::vector<PooledPred> preds,
                        const std::vector<std::vector<SegmentTriplet>>& gt_by_video,
                        double iou_threshold, bool class_aware, int cls) {
    std::size_t n_gt = 0;
    std::vector<std::vector<char>> taken(gt_by_video.size());
    for (std::size_t v = 0; v < gt_by_video.size(); ++v) {
        taken[v].assign(gt_by_video[v].size(), 0);
        for (const auto& s : gt_by_video[v])
            if (!class_aware || s.cls == cls) ++n_gt;
    }
    std::stable_sort(preds.begin(), preds.end(), [](const PooledPred& a, const PooledPred& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.video != b.video) return a.video < b.video;
        return a.index < b.index;
    });
    std::vector<char> is_tp(preds.size(), 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto& p = preds[i];
        const auto& gts = gt_by_video[p.video];
        double best_iou = 0;
        std::size_t best_j = gts.size();
        for (std::size_t j = 0; j < gts.size(); ++j) {
            if (taken[p.video][j] || gts[j].cls != p.seg.cls) continue;
            const double iou = temporal_iou(p.seg, gts[j]);
            if (iou > best_iou) {
                best_iou = iou;
                best_j = j;
            }
        }
        if (best_j < gts.size() && best_iou >= iou_threshold) {
            is_tp[i] = 1;
            taken[p.video][best_j] = 1;
        }
    }
    return average_precision(preds, is_tp, n_gt);
}

}  // namespace detail

/// mAP over classes (mAP_a) and over videos (mAP_v) at one IoU threshold.
/// Classes with no ground-truth instances are excluded from mAP_a; videos with
/// no ground truth are excluded from mAP_v.
inline DetectionResult eval_detection_map(
    const std::vector<std::vector<SegmentTriplet>>& preds_by_video,
    const std::vector<std::vector<SegmentTriplet>>& gt_by_video, double iou_threshold) {
    if (iou_threshold <= 0.0 || iou_threshold >= 1.0)
        throw std::runtime_error("eval_detection_map: IoU threshold must lie in (0,1)");
    if (preds_by_video.size() != gt_by_video.size())
        throw std::runtime_error("eval_detection_map: prediction/ground-truth video count differ");
    for (const auto& vid : preds_by_video)
        for (const auto& s : vid) s.validate();
    for (const auto& vid : gt_by_video)
        for (const auto& s : vid) s.validate();

    std::set<int> classes;
    for (const auto& vid : gt_by_video)
        for (const auto& s : vid) classes.insert(s.cls);

    DetectionResult res;
    // mAP_a: pool predictions per class across videos
    double sum_ap = 0;
    for (int cls : classes) {
        std::vector<detail::PooledPred> pool;
        for (std::size_t v = 0; v < preds_by_video.size(); ++v)
            for (std::size_t i = 0; i < preds_by_video[v].size(); ++i)
                if (preds_by_video[v][i].cls == cls)
                    pool.push_back({preds_by_video[v][i].score, v, i, preds_by_video[v][i]});
        sum_ap += detail::pooled_ap(std::move(pool), gt_by_video, iou_threshold, true, cls);
    }
    res.map_a = classes.empty() ? 0.0 : sum_ap / static_cast<double>(classes.size());

    // mAP_v: per-video AP pooled over that video's classes
    double sum_v = 0;
    std::size_t n_videos = 0;
    for (std::size_t v = 0; v < gt_by_video.size(); ++v) {
        if (gt_by_video[v].empty()) continue;
        std::vector<detail::PooledPred> pool;
        for (std::size_t i = 0; i < preds_by_video[v].size(); ++i)
            pool.push_back({preds_by_video[v][i].score, 0, i, preds_by_video[v][i]});
        std::vector<std::vector<SegmentTriplet>> single = {gt_by_video[v]};
        sum_v += detail::pooled_ap(std::move(pool), single, iou_threshold, false, -1);
        ++n_videos;
    }
    res.map_v = n_videos ? sum_v / static_cast<double>(n_videos) : 0.0;
    return res;
}

// ---------------------------------------------------------------------------
// temporal action segmentation metrics

struct SegmentationResult {
    double acc = 0;     // frame accuracy, percent
    double edit = 0;    // segmental edit score, percent
    double f1_10 = 0, f1_25 = 0, f1_50 = 0;
};

namespace detail {

inline double levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::size_t> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return static_cast<double>(prev[m]);
}

/// F1 at an IoU threshold; predicted segments match greedily in order.
inline double segment_f1(const std::vector<SegmentTriplet>& pred,
                         const std::vector<SegmentTriplet>& gt, double k) {
    if (pred.empty() && gt.empty()) return 100.0;
    std::vector<char> taken(gt.size(), 0);
    std::size_t tp = 0;
    for (const auto& p : pred) {
        double best_iou = 0;
        std::size_t best_j = gt.size();
        for (std::size_t j = 0; j < gt.size(); ++j) {
            if (taken[j] || gt[j].cls != p.cls) continue;
            const double iou = temporal_iou(p, gt[j]);
            if (iou > best_iou) {
                best_iou = iou;
                best_j = j;
            }
        }
        if (best_j < gt.size() && best_iou >= k) {
            ++tp;
            taken[best_j] = 1;
        }
    }
    if (tp == 0) return 0.0;
    const double precision = static_cast<double>(tp) / static_cast<double>(pred.size());
    const double recall = static_cast<double>(tp) / static_cast<double>(gt.size());
    return 100.0 * 2.0 * precision * recall / (precision + recall);
}

}  // namespace detail

/// Frame accuracy, segmental edit score, and segmental F1 at IoU 0.10 / 0.25 /
/// 0.50. Background frames (-1) count toward accuracy but are excluded from
/// segment extraction.
inline SegmentationResult eval_segmentation(const std::vector<int>& pred,
                                            const std::vector<int>& gt) {
    if (pred.size() != gt.size())
        throw std::runtime_error("eval_segmentation: length mismatch");
    SegmentationResult res;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == gt[i]) ++hit;
    res.acc = pred.empty() ? 0.0 : 100.0 * static_cast<double>(hit) /
                                       static_cast<double>(pred.size());

    const auto pseg = segments_from_labels(pred);
    const auto gseg = segments_from_labels(gt);
    std::vector<int> pcls, gcls;
    for (const auto& s : pseg) pcls.push_back(s.cls);
    for (const auto& s : gseg) gcls.push_back(s.cls);
    const std::size_t max_len = std::max(pcls.size(), gcls.size());
    res.edit = max_len == 0
                   ? 100.0
                   : (1.0 - detail::levenshtein(pcls, gcls) / static_cast<double>(max_len)) * 100.0;

    res.f1_10 = detail::segment_f1(pseg, gseg, 0.10);
    res.f1_25 = detail::segment_f1(pseg, gseg, 0.25);
    res.f1_50 = detail::segment_f1(pseg, gseg, 0.50);
    return res;
}

// ---------------------------------------------------------------------------
// early action prediction

/// For each observation ratio, aggregates per-frame class probabilities over
/// the observed prefix by arithmetic mean and takes the argmax.
/// `frame_prob_fn` must come from a causal model: row t may only use frames
/// <= t.
inline PredictionCurve predict_early(
    const std::function<Mat<double>(const skelio::SkeletonSequence&)>& frame_prob_fn,
    const std::vector<skelio::SkeletonSequence>& seqs, const std::vector<int>& labels,
    const std::vector<double>& ratios) {
    if (seqs.size() != labels.size())
        throw std::runtime_error("predict_early: sequence/label count mismatch");
    for (double r : ratios)
        if (!(r > 0.0) || r > 1.0)
            throw std::runtime_error("predict_early: ratios must lie in (0,1]");

    PredictionCurve curve;
    curve.ratios = ratios;
    curve.accuracy.assign(ratios.size(), 0.0);
    std::vector<Mat<double>> probs(seqs.size());
    parallel_for(seqs.size(), [&](std::size_t i) { probs[i] = frame_prob_fn(seqs[i]); });

    for (std::size_t ri = 0; ri < ratios.size(); ++ri) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            const auto& p = probs[i];
            const auto n = static_cast<std::size_t>(
                std::ceil(ratios[ri] * static_cast<double>(p.rows())));
            const std::size_t lim = std::max<std::size_t>(1, std::min(n, p.rows()));
            int best = 0;
            double bv = -1;
            for (std::size_t c = 0; c < p.cols(); ++c) {
                double s = 0;
                for (std::size_t r = 0; r < lim; ++r) s += p(r, c);
                if (s > bv) {  // ties keep the lower class index
                    bv = s;
                    best = static_cast<int>(c);
                }
            }
            if (best == labels[i]) ++hits;
        }
        curve.accuracy[ri] =
            seqs.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(seqs.size());
    }
    return curve;
}

// ---------------------------------------------------------------------------
// ensemble

/// Mean of per-model class probabilities, then argmax (ties -> lower class).
inline std::vector<int> ensemble_logits(const std::vector<Mat<double>>& model_probs) {
    if (model_probs.empty()) throw std::runtime_error("ensemble_logits: no models");
    for (const auto& m : model_probs)
        if (!m.same_shape(model_probs[0]))
            throw std::runtime_error("ensemble_logits: models disagree on class count");
    const std::size_t n = model_probs[0].rows(), c = model_probs[0].cols();
    std::vector<int> out(n);
    for (std::size_t r = 0; r < n; ++r) {
        int best = 0;
        double bv = -1;
        for (std::size_t j = 0; j < c; ++j) {
            double s = 0;
            for (const auto& m : model_probs) s += m(r, j);
            s /= static_cast<double>(model_probs.size());
            if (s > bv) {
                bv = s;
                best = static_cast<int>(j);
            }
        }
        out[r] = best;
    }
    return out;
}

// ---------------------------------------------------------------------------
// model-facing evaluation plumbing

/// A loaded checkpoint ready for inference.
struct ModelHandle {
    pretrain::PretrainConfig cfg;
    ParamStore<float> params;

    static ModelHandle from_checkpoint(const pretrain::Checkpoint<float>& ck) {
        return {ck.cfg, ck.params};
    }
};

namespace detail {

template <class Real>
std::pair<Mat<Real>, Mat<Real>> fused_features(const skelio::SkeletonSequence& resampled,
                                               const pretrain::PretrainConfig& cfg,
                                               const skelio::DatasetManifest& manifest,
                                               ParamStore<Real>& params, Graph<Real>& g,
                                               ParamLeaves<Real>& P,
                                               typename Graph<Real>::N* ft_out,
                                               typename Graph<Real>::N* fs_out) {
    std::vector<typename Graph<Real>::N> ft_mods, fs_mods;
    for (const auto& mod : cfg.modalities) {
        skelio::SkeletonSequence derived;
        if (mod == "joint")
            derived = resampled;
        else if (mod == "bone")
            derived = skelio::derive_bone(resampled, manifest.edges);
        else
            derived = skelio::derive_motion(resampled);
        ft_mods.push_back(
            dste::embed_stream_g(g, P, dste::temporal_matrix<Real>(derived), "embed/t/" + mod));
        fs_mods.push_back(
            dste::embed_stream_g(g, P, dste::spatial_matrix<Real>(derived), "embed/s/" + mod));
    }
    auto ft = ft_mods.size() == 1 ? ft_mods[0] : g.mean_of(ft_mods);
    auto fs = fs_mods.size() == 1 ? fs_mods[0] : g.mean_of(fs_mods);
    *ft_out = ft;
    *fs_out = fs;
    return {ft->value, fs->value};
}

}  // namespace detail

/// Dense temporal representation [T][C_r] of one window/sequence (already at
/// the model input length).
inline Mat<double> dense_temporal(ModelHandle& model, const skelio::DatasetManifest& manifest,
                                  const skelio::SkeletonSequence& seq) {
    const auto resampled = skelio::temporal_resample(seq, model.cfg.encoder.t);
    Graph<float> g;
    ParamLeaves<float> P(g, model.params);
    typename Graph<float>::N ft = nullptr, fs = nullptr;
    detail::fused_features(resampled, model.cfg, manifest, model.params, g, P, &ft, &fs);
    auto [yt, ys] = dste::encode_g(g, P, ft, fs, model.cfg.encoder);
    (void)ys;
    return yt->value.cast<double>();
}

/// Instance embeddings [N][2*C_r] for a dataset; rows follow input order.
inline Mat<double> instance_embeddings(ModelHandle& model, const skelio::DatasetManifest& manifest,
                                       const std::vector<skelio::SkeletonSequence>& data) {
    if (data.empty()) return {};
    Mat<double> out(data.size(), 2 * model.cfg.encoder.c_r);
    parallel_for(data.size(), [&](std::size_t i) {
        const auto resampled = skelio::temporal_resample(data[i], model.cfg.encoder.t);
        Graph<float> g;
        ParamLeaves<float> P(g, model.params);
        typename Graph<float>::N ft = nullptr, fs = nullptr;
        detail::fused_features(resampled, model.cfg, manifest, model.params, g, P, &ft, &fs);
        auto [yt, ys] = dste::encode_g(g, P, ft, fs, model.cfg.encoder);
        auto h = dste::instance_embed_g(g, yt, ys);
        for (std::size_t c = 0; c < h->value.cols(); ++c)
            out(i, c) = static_cast<double>(h->value(0, c));
    });
    return out;
}

// ---------------------------------------------------------------------------
// frame-level linear head (detection / segmentation / early prediction)

struct FrameHead {
    Mat<double> w;  // [C_r][n_out]
    Mat<double> b;  // [1][n_out]
    int n_out = 0;
    bool with_background = false;  // background mapped to the last output
};

/// Trains an affine frame classifier on frozen dense features. For untrimmed
/// inputs, targets come from per-frame labels (background -> last class); for
/// trimmed inputs every frame inherits the sequence label.
inline FrameHead train_frame_head(ModelHandle& model, const skelio::DatasetManifest& manifest,
                                  const std::vector<skelio::SkeletonSequence>& train_data,
                                  bool with_background, std::size_t epochs = 120, double lr = 1e-2,
                                  std::uint64_t seed = 0) {
    const std::size_t win = model.cfg.encoder.t;
    const std::size_t stride = std::max<std::size_t>(1, win / 2);
    const int n_classes = static_cast<int>(manifest.class_names.size());
    const int n_out = with_background ? n_classes + 1 : n_classes;

    struct Piece {
        Mat<double> feats;
        std::vector<int> targets;
    };
    std::vector<std::vector<Piece>> pieces(train_data.size());
    parallel_for(train_data.size(), [&](std::size_t i) {
        const auto& seq = train_data[i];
        const std::size_t t_video = seq.frames.t;
        std::vector<std::size_t> starts;
        if (t_video <= win) {
            starts.push_back(0);
        } else {
            for (std::size_t s = 0; s + win <= t_video; s += stride) starts.push_back(s);
            if (starts.back() + win < t_video) starts.push_back(t_video - win);
        }
        for (std::size_t s : starts) {
            const std::size_t avail = std::min(win, t_video - s);
            skelio::SkeletonSequence w = seq;
            w.frames = skelio::FrameArray(win, seq.frames.m, seq.frames.v, seq.frames.c);
            const std::size_t per_frame = seq.frames.m * seq.frames.v * seq.frames.c;
            std::copy(seq.frames.data.begin() + static_cast<std::ptrdiff_t>(s * per_frame),
                      seq.frames.data.begin() + static_cast<std::ptrdiff_t>((s + avail) * per_frame),
                      w.frames.data.begin());
            w.frame_labels.reset();
            Mat<double> feats = dense_temporal(model, manifest, w);
            Piece piece;
            piece.feats = Mat<double>(avail, feats.cols());
            for (std::size_t r = 0; r < avail; ++r)
                for (std::size_t c = 0; c < feats.cols(); ++c) piece.feats(r, c) = feats(r, c);
            piece.targets.resize(avail);
            for (std::size_t r = 0; r < avail; ++r) {
                int y;
                if (seq.frame_labels) {
                    y = (*seq.frame_labels)[s + r];
                    y = y < 0 ? n_classes : y;  // background -> last output
                } else {
                    if (!seq.label)
                        throw std::runtime_error("train_frame_head: record '" + seq.id +
                                                 "' has neither frame labels nor a label");
                    y = *seq.label;
                }
                piece.targets[r] = y;
            }
            pieces[i].push_back(std::move(piece));
        }
    });

    std::size_t total_rows = 0;
    for (const auto& per_video : pieces)
        for (const auto& p : per_video) total_rows += p.feats.rows();
    Mat<double> x(total_rows, model.cfg.encoder.c_r);
    std::vector<int> y(total_rows);
    std::size_t at = 0;
    for (const auto& per_video : pieces)
        for (const auto& p : per_video) {
            for (std::size_t r = 0; r < p.feats.rows(); ++r, ++at) {
                for (std::size_t c = 0; c < p.feats.cols(); ++c) x(at, c) = p.feats(r, c);
                y[at] = p.targets[r];
            }
        }

    auto [w, b] = detail::train_affine_head(x, y, n_out, epochs, lr, seed);
    return {w, b, n_out, with_background};
}

/// Per-frame softmax probabilities of one window at the model input length.
inline Mat<double> frame_head_probs(ModelHandle& model, const skelio::DatasetManifest& manifest,
                                    const FrameHead& head, const skelio::SkeletonSequence& window) {
    Mat<double> feats = dense_temporal(model, manifest, window);
    Mat<double> logits = matmul(feats, head.w);
    Mat<double> probs(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        double mx = -1e300;
        for (std::size_t c = 0; c < logits.cols(); ++c)
            mx = std::max(mx, logits(r, c) + head.b(0, c));
        double sum = 0;
        for (std::size_t c = 0; c < logits.cols(); ++c) {
            probs(r, c) = std::exp(logits(r, c) + head.b(0, c) - mx);
            sum += probs(r, c);
        }
        for (std::size_t c = 0; c < logits.cols(); ++c) probs(r, c) /= sum;
    }
    return probs;
}

// ---------------------------------------------------------------------------
// semi-supervised fine-tuning

/// Deterministic stratified index sample; classes whose share rounds to zero
/// are dropped with a warning on stderr.
inline std::vector<std::size_t> stratified_sample(const std::vector<int>& labels, double fraction,
                                                  std::uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw std::runtime_error("stratified_sample: fraction must lie in (0,1]");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    std::vector<std::size_t> keep;
    for (auto& [cls, idx] : by_class) {
        auto n = static_cast<std::size_t>(
            std::lround(fraction * static_cast<double>(idx.size())));
        if (fraction >= 1.0) n = idx.size();
        if (n == 0) {
            std::fprintf(stderr,
                         "warning: class %d has no samples at fraction %.4f; dropped from "
                         "training\n",
                         cls, fraction);
            continue;
        }
        Rng rng(mix_seed(seed, 0x57A7, static_cast<std::uint64_t>(cls)));
        rng.shuffle(idx.begin(), idx.end());
        keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
    }
    std::sort(keep.begin(), keep.end());
    return keep;
}

/// Loads the pretrained encoder and fine-tunes it end-to-end with a linear
/// head on a labeled fraction of the train split. Reports test top-1.
inline double finetune_semi(const pretrain::Checkpoint<float>& ck,
                            const skelio::DatasetManifest& manifest,
                            const std::vector<skelio::SkeletonSequence>& train_data,
                            const std::vector<skelio::SkeletonSequence>& test_data,
                            double fraction, std::size_t epochs = 20, double lr = 5e-4,
                            std::size_t batch_size = 16, std::uint64_t seed = 0) {
    std::vector<int> train_labels;
    for (const auto& s : train_data) {
        if (!s.label) throw std::runtime_error("finetune_semi: unlabeled training record " + s.id);
        train_labels.push_back(*s.label);
    }
    const auto keep = stratified_sample(train_labels, fraction, seed);
    if (keep.empty()) throw std::runtime_error("finetune_semi: empty training subset");

    const int n_classes = static_cast<int>(manifest.class_names.size());
    ParamStore<float> params;
    for (const auto& name : ck.params.names())
        params.add(name, ck.params.at(name), ck.params.is_buffer(name));
    {
        Rng rng(mix_seed(seed, 0xF17E));
        const double bound = 1.0 / std::sqrt(static_cast<double>(2 * ck.cfg.encoder.c_r));
        Mat<float> w(2 * ck.cfg.encoder.c_r, static_cast<std::size_t>(n_classes));
        for (auto& v : w.vec()) v = static_cast<float>(rng.uniform(-bound, bound));
        Mat<float> b(1, static_cast<std::size_t>(n_classes));
        for (auto& v : b.vec()) v = static_cast<float>(rng.uniform(-bound, bound));
        params.add("head/w", std::move(w));
        params.add("head/b", std::move(b));
    }

    pretrain::AdamState<float> opt;
    Rng order_rng(mix_seed(seed, 0x0BDE));
    std::vector<std::size_t> order(keep.begin(), keep.end());
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        order_rng.shuffle(order.begin(), order.end());
        for (std::size_t b0 = 0; b0 < order.size(); b0 += batch_size) {
            const std::size_t b1 = std::min(b0 + batch_size, order.size());
            Graph<float> g;
            ParamLeaves<float> P(g, params);
            std::vector<typename Graph<float>::N> rows;
            std::vector<int> ys;
            for (std::size_t i = b0; i < b1; ++i) {
                const auto& seq = train_data[order[i]];
                const auto resampled = skelio::temporal_resample(seq, ck.cfg.encoder.t);
                typename Graph<float>::N ft = nullptr, fs = nullptr;
                detail::fused_features(resampled, ck.cfg, manifest, params, g, P, &ft, &fs);
                auto [yt, ysn] = dste::encode_g(g, P, ft, fs, ck.cfg.encoder);
                rows.push_back(dste::instance_embed_g(g, yt, ysn));
                ys.push_back(*seq.label);
            }
            auto h = g.concat_rows(rows);
            auto logits = g.add(g.matmul(h, P("head/w")), P("head/b"));
            auto loss = g.cross_entropy_mean(logits, ys);
            g.backward(loss);
            std::unordered_map<std::string, Mat<float>> grads;
            P.collect_grads(grads);
            opt.update(params, grads, lr, 0.0);
        }
    }

    // evaluate
    ModelHandle tuned{ck.cfg, params};
    Mat<double> test_h = instance_embeddings(tuned, manifest, test_data);
    Mat<double> w = params.at("head/w").cast<double>();
    Mat<double> b = params.at("head/b").cast<double>();
    std::vector<int> pred = detail::affine_predict(test_h, w, b);
    std::vector<int> truth;
    for (const auto& s : test_data) truth.push_back(s.label.value_or(-1));
    return detail::top1(pred, truth);
}

}  // namespace usdrl::downstream
