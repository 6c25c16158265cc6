#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "usdrl/config.hpp"
#include "usdrl/downstream.hpp"
#include "usdrl/pretrain.hpp"
#include "usdrl/report.hpp"

namespace usdrl::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

inline std::string join_path(const std::string& dir, const std::string& name) {
    if (dir.empty()) return name;
    return (fs::path(dir) / name).string();
}

/// Writes the report and returns the process exit code.
inline int finish(const std::string& out_dir, report::RunReport& rep, const Timer& timer) {
    rep.wall_time_s = timer.seconds();
    const std::string path = join_path(out_dir, "report.json");
    const bool finite = report::write_report(path, rep);
    std::cout << report::to_json(rep).dump(2) << "\n";
    if (!finite) {
        std::cerr << "error: report contains non-finite metrics\n";
        return 1;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// shared loading helpers

inline skelio::DatasetManifest load_manifest_checked(const std::string& path) {
    if (path.empty()) throw std::runtime_error("no dataset manifest given (--data or data.manifest)");
    if (!fs::exists(path)) throw std::runtime_error("dataset manifest not found: " + path);
    return skelio::load_manifest(path);
}

inline pretrain::Checkpoint<float> load_checkpoint_checked(const std::string& path) {
    if (path.empty()) throw std::runtime_error("no checkpoint given (--checkpoint)");
    if (!fs::exists(path)) throw std::runtime_error("checkpoint not found: " + path);
    return pretrain::load_checkpoint<float>(path);
}

inline void check_model_data_compat(const pretrain::PretrainConfig& cfg,
                                    const skelio::DatasetManifest& manifest) {
    if (cfg.encoder.v != manifest.joint_count || cfg.encoder.m != manifest.person_slots ||
        cfg.encoder.c_in != manifest.coord_dims)
        throw std::runtime_error(
            "checkpoint encoder shape (v=" + std::to_string(cfg.encoder.v) +
            ", m=" + std::to_string(cfg.encoder.m) + ", c_in=" + std::to_string(cfg.encoder.c_in) +
            ") does not match manifest (v=" + std::to_string(manifest.joint_count) +
            ", m=" + std::to_string(manifest.person_slots) +
            ", c_in=" + std::to_string(manifest.coord_dims) + ")");
}

inline std::vector<int> labels_of(const std::vector<skelio::SkeletonSequence>& data,
                                  const char* what) {
    std::vector<int> out;
    out.reserve(data.size());
    for (const auto& s : data) {
        if (!s.label)
            throw std::runtime_error(std::string(what) + ": record '" + s.id + "' has no label");
        out.push_back(*s.label);
    }
    return out;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    int classes = 4;
    int per_class = 50;
    std::size_t frames = 80;
    std::size_t joints = 15;
    std::size_t persons = 1;
    int videos = 0;  // untrimmed videos per split; 0 = skip
    int segments_per_video = 5;
    std::uint64_t seed = 1;
    std::string out_dir = "synth_data";
};

inline int cmd_synth(const SynthArgs& a) {
    Timer timer;
    fs::create_directories(a.out_dir);
    auto ds = skelio::synth_dataset(a.classes, a.per_class, a.frames, a.joints, a.persons, a.seed);
    ds.manifest.splits["train"] = "train.jsonl";
    ds.manifest.splits["test"] = "test.jsonl";
    skelio::write_split(join_path(a.out_dir, "train.jsonl"), ds.train);
    skelio::write_split(join_path(a.out_dir, "test.jsonl"), ds.test);
    if (a.videos > 0) {
        ds.manifest.splits["train_long"] = "train_long.jsonl";
        ds.manifest.splits["test_long"] = "test_long.jsonl";
        skelio::write_split(
            join_path(a.out_dir, "train_long.jsonl"),
            skelio::synth_untrimmed(ds.manifest, a.classes, a.videos, a.segments_per_video, a.seed,
                                    true));
        skelio::write_split(
            join_path(a.out_dir, "test_long.jsonl"),
            skelio::synth_untrimmed(ds.manifest, a.classes, a.videos, a.segments_per_video, a.seed,
                                    false));
    }
    skelio::write_manifest(join_path(a.out_dir, "manifest.json"), ds.manifest);

    report::RunReport rep;
    rep.command = "synth";
    rep.seed = a.seed;
    rep.config_digest = "-";
    rep.metrics = {{"train_records", ds.train.size()}, {"test_records", ds.test.size()}};
    rep.artifacts = {{"manifest", join_path(a.out_dir, "manifest.json")},
                     {"train", join_path(a.out_dir, "train.jsonl")},
                     {"test", join_path(a.out_dir, "test.jsonl")}};
    return finish(a.out_dir, rep, timer);
}

// ---------------------------------------------------------------------------
// pretrain

/// Fills encoder dims from the manifest unless the config set them explicitly.
inline void resolve_encoder_dims(config::RunConfig& cfg, const skelio::DatasetManifest& manifest) {
    if (!cfg.provided.count("encoder.v")) cfg.train.encoder.v = manifest.joint_count;
    if (!cfg.provided.count("encoder.m")) cfg.train.encoder.m = manifest.person_slots;
    if (!cfg.provided.count("encoder.c_in")) cfg.train.encoder.c_in = manifest.coord_dims;
    if (cfg.train.encoder.v != manifest.joint_count ||
        cfg.train.encoder.m != manifest.person_slots ||
        cfg.train.encoder.c_in != manifest.coord_dims)
        throw std::runtime_error("encoder dims in config conflict with the dataset manifest");
}

inline int cmd_pretrain(config::RunConfig cfg, const std::string& out_dir,
                        const std::string& resume_path = "") {
    Timer timer;
    if (!out_dir.empty()) fs::create_directories(out_dir);
    auto manifest = load_manifest_checked(cfg.data_manifest);
    resolve_encoder_dims(cfg, manifest);
    if (!out_dir.empty()) {
        if (fs::path(cfg.train.checkpoint_path).is_relative())
            cfg.train.checkpoint_path = join_path(out_dir, cfg.train.checkpoint_path);
        if (!cfg.train.log_path.empty() && fs::path(cfg.train.log_path).is_relative())
            cfg.train.log_path = join_path(out_dir, cfg.train.log_path);
    }
    cfg.train.validate();

    auto data = skelio::load_split(manifest, cfg.train_split);
    std::optional<pretrain::Checkpoint<float>> resume;
    if (!resume_path.empty()) resume = pretrain::load_checkpoint<float>(resume_path);

    std::size_t steps = 0;
    double last_loss = std::numeric_limits<double>::quiet_NaN();
    pretrain::FitHooks hooks;
    hooks.on_step = [&](std::size_t step, const mgfd::TotalBreakdown& b, double) {
        steps = step;
        last_loss = b.total;
    };
    auto ck = pretrain::fit<float>(data, manifest, cfg.train,
                                   resume ? &*resume : nullptr, hooks);

    report::RunReport rep;
    rep.command = "pretrain";
    rep.config_digest = config::config_digest(cfg);
    rep.seed = cfg.train.seed;
    rep.metrics = {{"steps", steps}, {"final_loss", last_loss}, {"epochs", cfg.train.epochs}};
    rep.artifacts = {{"checkpoint", cfg.train.checkpoint_path}, {"loss_log", cfg.train.log_path}};
    return finish(out_dir, rep, timer);
}

// ---------------------------------------------------------------------------
// eval tasks

struct EvalArgs {
    std::string checkpoint;
    std::string data_manifest;
    std::string train_split = "train";
    std::string test_split = "test";
    std::string out_dir;
    std::string preds_path;                  // detect/segment: skip inference
    std::vector<std::string> checkpoints;    // ensemble
    double iou = 0.5;
    double fraction = 0.1;
    std::size_t epochs = 0;  // 0 = task default
    double lr = 0;           // 0 = task default
    std::size_t min_len = 5;
    std::size_t smooth_win = 9;
    std::size_t stride = 0;  // 0 = window/2
    std::uint64_t seed = 0;
};

namespace detail {

struct LoadedModel {
    pretrain::Checkpoint<float> ck;
    downstream::ModelHandle model;
    skelio::DatasetManifest manifest;
};

inline LoadedModel load_for_eval(const EvalArgs& a) {
    LoadedModel lm{load_checkpoint_checked(a.checkpoint), {}, {}};
    lm.model = downstream::ModelHandle::from_checkpoint(lm.ck);
    lm.manifest = load_manifest_checked(a.data_manifest);
    check_model_data_compat(lm.ck.cfg, lm.manifest);
    return lm;
}

inline report::RunReport base_report(const std::string& command, const EvalArgs& a) {
    report::RunReport rep;
    rep.command = command;
    rep.seed = a.seed;
    rep.config_digest = "-";
    return rep;
}

/// Per-model test-set class probabilities via a linear probe on frozen
/// embeddings; shared by the recognition ensemble.
inline Mat<double> probe_probs(downstream::ModelHandle& model,
                               const skelio::DatasetManifest& manifest,
                               const std::vector<skelio::SkeletonSequence>& train_data,
                               const std::vector<skelio::SkeletonSequence>& test_data,
                               std::size_t epochs, double lr, std::uint64_t seed) {
    auto xtr = downstream::instance_embeddings(model, manifest, train_data);
    auto xte = downstream::instance_embeddings(model, manifest, test_data);
    auto ytr = labels_of(train_data, "probe");
    const int n_classes = static_cast<int>(manifest.class_names.size());
    auto [w, b] = downstream::detail::train_affine_head(xtr, ytr, n_classes, epochs, lr, seed);
    Mat<double> logits = matmul(xte, w);
    Mat<double> probs(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        double mx = -1e300;
        for (std::size_t c = 0; c < logits.cols(); ++c)
            mx = std::max(mx, logits(r, c) + b(0, c));
        double sum = 0;
        for (std::size_t c = 0; c < logits.cols(); ++c) {
            probs(r, c) = std::exp(logits(r, c) + b(0, c) - mx);
            sum += probs(r, c);
        }
        for (std::size_t c = 0; c < logits.cols(); ++c) probs(r, c) /= sum;
    }
    return probs;
}

inline std::vector<std::vector<downstream::SegmentTriplet>> read_preds_jsonl(
    const std::string& path, const std::vector<std::string>& video_ids) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open predictions file '" + path + "'");
    std::map<std::string, std::vector<downstream::SegmentTriplet>> by_id;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ": malformed JSON at line " + std::to_string(line_no) +
                                     ": " + e.what());
        }
        std::vector<downstream::SegmentTriplet> segs;
        for (const auto& t : j.at("triplets"))
            segs.push_back({t.at(0).get<std::size_t>(), t.at(1).get<std::size_t>(),
                            t.at(2).get<int>(), t.at(3).get<double>()});
        by_id[j.at("id").get<std::string>()] = std::move(segs);
    }
    std::vector<std::vector<downstream::SegmentTriplet>> out;
    for (const auto& id : video_ids) {
        auto it = by_id.find(id);
        out.push_back(it == by_id.end() ? std::vector<downstream::SegmentTriplet>{} : it->second);
    }
    return out;
}

}  // namespace detail

inline int cmd_eval_probe(const EvalArgs& a) {
    Timer timer;
    if (!a.out_dir.empty()) fs::create_directories(a.out_dir);
    auto lm = detail::load_for_eval(a);
    auto train_data = skelio::load_split(lm.manifest, a.train_split);
    auto test_data = skelio::load_split(lm.manifest, a.test_split);
    auto xtr = downstream::instance_embeddings(lm.model, lm.manifest, train_data);
    auto xte = downstream::instance_embeddings(lm.model, lm.manifest, test_data);
    const double top1 = downstream::linear_probe(
        xtr, labels_of(train_data, "probe"), xte, labels_of(test_data, "probe"),
        a.epochs ? a.epochs : 200, a.lr != 0 ? a.lr : 1e-2, a.seed);
    auto rep = detail::base_report("eval-probe", a);
    rep.metrics = {{"top1", top1}};
    return finish(a.out_dir, rep, timer);
}

inline int cmd_eval_knn(const EvalArgs& a) {
    Timer timer;
    if (!a.out_dir.empty()) fs::create_directories(a.out_dir);
    auto lm = detail::load_for_eval(a);
    auto train_data = skelio::load_split(lm.manifest, a.train_split);
    auto test_data = skelio::load_split(lm.manifest, a.test_split);
    auto gallery = downstream::instance_embeddings(lm.model, lm.manifest, train_data);
    auto query = downstream::instance_embeddings(lm.model, lm.manifest, test_data);
    std::vector<std::string> qids, gids;
    for (const auto& s : test_data) qids.push_back(s.id);
    for (const auto& s : train_data) gids.push_back(s.id);
    auto res = downstream::knn_retrieve(query, labels_of(test_data, "knn"), gallery,
                                        labels_of(train_data, "knn"), &qids, &gids);
    auto rep = detail::base_report("eval-knn", a);
    rep.metrics = {{"top1", res.top1}};
    return finish(a.out_dir, rep, timer);
}

inline int cmd_eval_semi(const EvalArgs& a) {
    Timer timer;
    if (!a.out_dir.empty()) fs::create_directories(a.out_dir);
    auto lm = detail::load_for_eval(a);
    auto train_data = skelio::load_split(lm.manifest, a.train_split);
    auto test_data = skelio::load_split(lm.manifest, a.test_split);
    const double top1 = downstream::finetune_semi(
        lm.ck, lm.manifest, train_data, test_data, a.fraction, a.epochs ? a.epochs : 20,
        a.lr != 0 ? a.lr : 5e-4, 16, a.seed);
    auto rep = detail::base_report("eval-semi", a);
    rep.metrics = {{"top1", top1}, {"fraction", a.fraction}};
    return finish(a.out_dir, rep, timer);
}

inline int cmd_eval_detect(const EvalArgs& a) {
    Timer timer;
    if (!a.out_dir.empty()) fs::create_directories(a.out_dir);
    auto lm = detail::load_for_eval(a);
    auto test_data = skelio::load_split(lm.manifest, a.test_split);

    std::vector<std::string> ids;
    std::vector<std::vector<downstream::SegmentTriplet>> gt;
    for (const auto& v : test_data) {
        if (!v.frame_labels)
            throw std::runtime_error("detect: record '" + v.id + "' has no frame labels");
        ids.push_back(v.id);
        gt.push_back(downstream::segments_from_labels(*v.frame_labels));
    }

    std::vector<std::vector<downstream::SegmentTriplet>> preds;
    std::string preds_artifact = a.preds_path;
    if (!a.preds_path.empty()) {
        preds = detail::read_preds_jsonl(a.preds_path, ids);
    } else {
        auto train_data = skelio::load_split(lm.manifest, a.train_split);
        auto head = downstream::train_frame_head(lm.model, lm.manifest, train_data,
                                                 /*with_background=*/true,
                                                 a.epochs ? a.epochs : 120,
                                                 a.lr != 0 ? a.lr : 1e-2, a.seed);
        const std::size_t win = lm.ck.cfg.encoder.t;
        const std::size_t stride = a.stride ? a.stride : std::max<std::size_t>(1, win / 2);
        preds.resize(test_data.size());
        parallel_for(test_data.size(), [&](std::size_t i) {
            auto fp = downstream::frame_probs(
                [&](const skelio::SkeletonSequence& w) {
                    return downstream::frame_head_probs(lm.model, lm.manifest, head, w);
                },
                test_data[i], win, stride);
            preds[i] = downstream::postprocess_segments(fp, a.min_len, a.smooth_win);
        });
        preds_artifact = join_path(a.out_dir, "detect_preds.jsonl");
        std::ofstream pf(preds_artifact);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            json triplets = json::array();
            for (const auto& s : preds[i])
                triplets.push_back(json::array({s.start, s.end, s.cls, s.score}));
            pf << json{{"id", ids[i]}, {"triplets", triplets}}.dump() << "\n";
        }
    }

    auto at_default = downstream::eval_detection_map(preds, gt, a.iou);
    const std::string curve_path = join_path(a.out_dir, "detect_curve.csv");
    {
        std::ofstream csv(curve_path);
        csv << "iou,map_a,map_v\n";
        for (double th : {0.3, 0.4, 0.5, 0.6, 0.7}) {
            auto r = downstream::eval_detection_map(preds, gt, th);
            csv << th << "," << r.map_a << "," << r.map_v << "\n";
        }
    }

    auto rep = detail::base_report("eval-detect", a);
    rep.metrics = {{"iou", a.iou}, {"map_a", at_default.map_a}, {"map_v", at_default.map_v}};
    rep.artifacts = {{"curve", curve_path}, {"predictions", preds_artifact}};
    return finish(a.out_dir, rep, timer);
}

inline int cmd_eval_segment(const EvalArgs& a) {
    Timer timer;
    if (!a.out_dir.empty()) fs::create_directories(a.out_dir);
    auto lm = detail::load_for_eval(a);
    auto test_data = skelio::load_split(lm.manifest, a.test_split);
    for (const auto& v : test_data)
        if (!v.frame_labels)
            throw std::runtime_error("segment: record '" + v.id + "' has no frame labels");

    std::map<std::string, std::vector<int>> pred_by_id;
    if (!a.preds_path.empty()) {
        std::ifstream in(a.preds_path);
        if (!in) throw std::runtime_error("cannot open predictions file '" + a.preds_path + "'");
        std::string line;
        while (std::getline(in, line)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            json j = json::parse(line);
            pred_by_id[j.at("id").get<std::string>()] =
                j.at("frame_labels").get<std::vector<int>>();
        }
    } else {
        auto train_data = skelio::load_split(lm.manifest, a.train_split);
        auto head = downstream::train_frame_head(lm.model, lm.manifest, train_data, true,
                                                 a.epochs ? a.epochs : 120,
                                                 a.lr != 0 ? a.lr : 1e-2, a.seed);
        const std::size_t win = lm.ck.cfg.encoder.t;
        const std::size_t stride = a.stride ? a.stride : std::max<std::size_t>(1, win / 2);
        std::vector<std::vector<int>> preds(test_data.size());
        parallel_for(test_data.size(), [&](std::size_t i) {
            auto fp = downstream::frame_probs(
                [&](const skelio::SkeletonSequence& w) {
                    return downstream::frame_head_probs(lm.model, lm.manifest, head, w);
                },
                test_data[i], win, stride);
            std::vector<int> labels(fp.rows());
            const int background = static_cast<int>(fp.cols()) - 1;
            for (std::size_t r = 0; r < fp.rows(); ++r) {
                int best = 0;
                for (std::size_t c = 1; c < fp.cols(); ++c)
                    if (fp(r, c) > fp(r, best)) best = static_cast<int>(c);
                labels[r] = best == background ? -1 : best;
            }
            preds[i] = std::move(labels);
        });
        for (std::size_t i = 0; i < test_data.size(); ++i)
            pred_by_id[test_data[i].id] = std::move(preds[i]);
    }

    double acc = 0, edit = 0, f10 = 0, f25 = 0, f50 = 0;
    for (const auto& v : test_data) {
        auto it = pred_by_id.find(v.id);
        if (it == pred_by_id.end())
            throw std::runtime_error("segment: no predictions for video '" + v.id + "'");
        auto r = downstream::eval_segmentation(it->second, *v.frame_labels);
        acc += r.acc;
        edit += r.edit;
        f10 += r.f1_10;
        f25 += r.f1_25;
        f50 += r.f1_50;
    }
    const auto n = static_cast<double>(test_data.size());
    auto rep = detail::base_report("eval-segment", a);
    rep.metrics = {{"acc", acc / n},
                   {"edit", edit / n},
                   {"f1_10", f10 / n},
                   {"f1_25", f25 / n},
                   {"f1_50", f50 / n}};
    return finish(a.out_dir, rep, timer);
}

inline int cmd_eval_predict(const EvalArgs& a) {
    Timer timer;
    if (!a.out_dir.empty()) fs::create_directories(a.out_dir);
    auto lm = detail::load_for_eval(a);
    if (!lm.ck.cfg.encoder.causal)
        throw std::runtime_error(
            "predict: checkpoint was trained without encoder.causal; early prediction needs a "
            "causal temporal stream (retrain with encoder.causal = true)");
    auto train_data = skelio::load_split(lm.manifest, a.train_split);
    auto test_data = skelio::load_split(lm.manifest, a.test_split);
    auto head = downstream::train_frame_head(lm.model, lm.manifest, train_data,
                                             /*with_background=*/false,
                                             a.epochs ? a.epochs : 120, a.lr != 0 ? a.lr : 1e-2,
                                             a.seed);
    std::vector<double> ratios;
    for (int i = 1; i <= 10; ++i) ratios.push_back(0.1 * i);
    auto curve = downstream::predict_early(
        [&](const skelio::SkeletonSequence& s) {
            return downstream::frame_head_probs(lm.model, lm.manifest, head,
                                                skelio::temporal_resample(s, lm.ck.cfg.encoder.t));
        },
        test_data, labels_of(test_data, "predict"), ratios);

    const std::string curve_path = join_path(a.out_dir, "predict_curve.csv");
    {
        std::ofstream csv(curve_path);
        csv << "ratio,accuracy\n";
        for (std::size_t i = 0; i < curve.ratios.size(); ++i)
            csv << curve.ratios[i] << "," << curve.accuracy[i] << "\n";
    }
    auto rep = detail::base_report("eval-predict", a);
    rep.metrics = {{"top1_full", curve.accuracy.back()},
                   {"top1_half", curve.accuracy[4]},
                   {"top1_fifth", curve.accuracy[1]}};
    rep.artifacts = {{"curve", curve_path}};
    return finish(a.out_dir, rep, timer);
}

inline int cmd_eval_transfer(const EvalArgs& a) {
    Timer timer;
    if (!a.out_dir.empty()) fs::create_directories(a.out_dir);
    auto lm = detail::load_for_eval(a);  // manifest here is the TARGET dataset
    auto train_data = skelio::load_split(lm.manifest, a.train_split);
    auto test_data = skelio::load_split(lm.manifest, a.test_split);
    auto xtr = downstream::instance_embeddings(lm.model, lm.manifest, train_data);
    auto xte = downstream::instance_embeddings(lm.model, lm.manifest, test_data);
    auto ytr = labels_of(train_data, "transfer");
    auto yte = labels_of(test_data, "transfer");
    const double probe = downstream::linear_probe(xtr, ytr, xte, yte, a.epochs ? a.epochs : 200,
                                                  a.lr != 0 ? a.lr : 1e-2, a.seed);
    auto knn = downstream::knn_retrieve(xte, yte, xtr, ytr);
    auto rep = detail::base_report("eval-transfer", a);
    rep.metrics = {{"probe_top1", probe}, {"knn_top1", knn.top1}};
    return finish(a.out_dir, rep, timer);
}

inline int cmd_eval_ensemble(const EvalArgs& a) {
    Timer timer;
    if (!a.out_dir.empty()) fs::create_directories(a.out_dir);
    if (a.checkpoints.empty())
        throw std::runtime_error("ensemble: pass one or more --checkpoint paths");
    auto manifest = load_manifest_checked(a.data_manifest);
    auto train_data = skelio::load_split(manifest, a.train_split);
    auto test_data = skelio::load_split(manifest, a.test_split);
    auto yte = labels_of(test_data, "ensemble");

    std::vector<Mat<double>> probs;
    for (const auto& path : a.checkpoints) {
        auto ck = pretrain::load_checkpoint<float>(path);
        check_model_data_compat(ck.cfg, manifest);
        auto model = downstream::ModelHandle::from_checkpoint(ck);
        probs.push_back(detail::probe_probs(model, manifest, train_data, test_data,
                                            a.epochs ? a.epochs : 200, a.lr != 0 ? a.lr : 1e-2,
                                            a.seed));
    }
    auto pred = downstream::ensemble_logits(probs);
    auto rep = detail::base_report("eval-ensemble", a);
    rep.metrics = {{"top1", downstream::detail::top1(pred, yte)},
                   {"models", a.checkpoints.size()}};
    return finish(a.out_dir, rep, timer);
}

// ---------------------------------------------------------------------------
// export-embeddings

inline int cmd_export_embeddings(const EvalArgs& a, const std::string& out_csv) {
    Timer timer;
    if (!a.out_dir.empty()) fs::create_directories(a.out_dir);
    auto lm = detail::load_for_eval(a);
    auto data = skelio::load_split(lm.manifest, a.test_split);
    auto emb = downstream::instance_embeddings(lm.model, lm.manifest, data);

    const std::string path = out_csv.empty() ? join_path(a.out_dir, "embeddings.csv") : out_csv;
    std::ofstream csv(path);
    if (!csv) throw std::runtime_error("cannot write embeddings CSV '" + path + "'");
    csv << "id,label";
    for (std::size_t c = 0; c < emb.cols(); ++c) csv << ",e" << c;
    csv << "\n";
    csv << std::setprecision(std::numeric_limits<float>::max_digits10);
    for (std::size_t r = 0; r < emb.rows(); ++r) {
        csv << data[r].id << "," << (data[r].label ? std::to_string(*data[r].label) : "");
        for (std::size_t c = 0; c < emb.cols(); ++c) csv << "," << static_cast<float>(emb(r, c));
        csv << "\n";
    }
    auto rep = detail::base_report("export-embeddings", a);
    rep.metrics = {{"rows", emb.rows()}, {"dims", emb.cols()}};
    rep.artifacts = {{"csv", path}};
    return finish(a.out_dir, rep, timer);
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradCheckArgs {
    double h = 1e-4;
    double tolerance = 2e-3;
    std::size_t max_entries = 64;
    std::uint64_t seed = 3;
    std::string out_dir;
};

/// Tiny-profile gradient verification on a synthetic batch.
inline int cmd_gradcheck(const GradCheckArgs& a) {
    Timer timer;
    if (!a.out_dir.empty()) fs::create_directories(a.out_dir);
    pretrain::PretrainConfig cfg;
    cfg.encoder = {3, 6, 5, 1, 8, 8, 2, 2, 2, 0.5, 3, false};
    cfg.c_p = 8;
    cfg.modalities = {"joint", "bone"};
    cfg.copies = 2;
    cfg.batch_size = 4;
    cfg.epochs = 1;
    cfg.decay_epoch = 1;
    cfg.aug = skelio::AugSpec::standard(7);
    cfg.validate();

    auto ds = skelio::synth_dataset(2, 8, 10, 5, 1, 42);
    std::vector<skelio::SkeletonSequence> batch(ds.train.begin(), ds.train.begin() + 8);
    auto copies = pretrain::make_pairs(batch, cfg.pairing, cfg.aug, cfg.copies, 1);
    auto params = init_params<double>(pretrain::declare_model_params(cfg), a.seed);
    auto rep_fd = pretrain::finite_diff_check(params, copies, cfg, ds.manifest, a.h,
                                              a.max_entries);

    std::printf("%-32s %12s %12s %8s %6s\n", "parameter", "max_rel_err", "max_abs_err",
                "checked", "kinks");
    for (const auto& e : rep_fd.per_param)
        std::printf("%-32s %12.3e %12.3e %8zu %6zu\n", e.name.c_str(), e.max_rel_err,
                    e.max_abs_err, e.checked, e.kinks);
    std::printf("max relative error: %.3e (tolerance %.1e), %zu probes, %zu kink-skipped\n",
                rep_fd.max_rel_err, a.tolerance, rep_fd.checked + rep_fd.kinks, rep_fd.kinks);

    report::RunReport rep;
    rep.command = "gradcheck";
    rep.seed = a.seed;
    rep.config_digest = "-";
    rep.metrics = {{"max_rel_err", rep_fd.max_rel_err},
                   {"tolerance", a.tolerance},
                   {"h", a.h},
                   {"checked", rep_fd.checked},
                   {"kinks", rep_fd.kinks},
                   {"pass", rep_fd.max_rel_err < a.tolerance}};
    const int code = finish(a.out_dir, rep, timer);
    if (code != 0) return code;
    return rep_fd.max_rel_err < a.tolerance ? 0 : 1;
}

}  // namespace usdrl::cli
