#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "usdrl/dste.hpp"
#include "usdrl/mgfd.hpp"
#include "usdrl/params.hpp"
#include "usdrl/rng.hpp"
#include "usdrl/serialize.hpp"
#include "usdrl/skelio.hpp"

namespace usdrl::pretrain {

using json = nlohmann::json;

enum class Pairing { AugmentOnly, MultiView };

inline std::string pairing_name(Pairing p) {
    return p == Pairing::AugmentOnly ? "augment-only" : "multi-view";
}
inline Pairing pairing_from_name(const std::string& s) {
    if (s == "augment-only") return Pairing::AugmentOnly;
    if (s == "multi-view") return Pairing::MultiView;
    throw std::runtime_error("unknown pairing strategy '" + s + "'");
}

struct PretrainConfig {
    dste::EncoderConfig encoder;
    mgfd::LossWeights loss;
    std::size_t c_p = 128;
    std::vector<std::string> modalities = {"joint", "bone", "motion"};
    Pairing pairing = Pairing::MultiView;
    std::size_t copies = 2;  // K positive copies per sample
    std::size_t batch_size = 32;
    std::size_t epochs = 30;
    double base_lr = 5e-4;
    std::size_t decay_epoch = 20;  // lr drops to base/10 from this epoch on
    double weight_decay = 1e-5;
    std::uint64_t seed = 1;
    std::size_t checkpoint_interval = 0;  // epochs between snapshots; 0 = end only
    std::string checkpoint_path = "checkpoint.bin";
    std::string log_path = "loss_log.jsonl";
    skelio::AugSpec aug = skelio::AugSpec::standard(0);

    void validate() const {
        encoder.validate();
        loss.validate();
        if (copies < 2) throw std::runtime_error("pretrain: copies (K) must be >= 2");
        if (batch_size < 2) throw std::runtime_error("pretrain: batch_size must be >= 2");
        if (decay_epoch > epochs)
            throw std::runtime_error("pretrain: decay_epoch must be <= epochs");
        if (modalities.empty()) throw std::runtime_error("pretrain: need at least one modality");
        for (const auto& m : modalities)
            if (m != "joint" && m != "bone" && m != "motion")
                throw std::runtime_error("pretrain: unknown modality '" + m + "'");
        if (c_p < 1) throw std::runtime_error("pretrain: c_p must be >= 1");
        aug.validate();
    }
};

// ---------------------------------------------------------------------------
// config <-> JSON (canonical form; also the checkpoint header payload)

inline json config_to_json(const PretrainConfig& c) {
    json j;
    j["encoder"] = {{"c_in", c.encoder.c_in},   {"t", c.encoder.t},
                    {"v", c.encoder.v},         {"m", c.encoder.m},
                    {"c_e", c.encoder.c_e},     {"c_r", c.encoder.c_r},
                    {"layers", c.encoder.layers}, {"heads", c.encoder.heads},
                    {"gap", c.encoder.gap},     {"alpha", c.encoder.alpha},
                    {"conv_kernel", c.encoder.conv_kernel}, {"causal", c.encoder.causal}};
    j["loss"] = {{"tau", c.loss.tau},       {"kappa", c.loss.kappa},
                 {"eta", c.loss.eta},       {"gamma", c.loss.gamma},
                 {"epsilon", c.loss.epsilon}, {"mu", c.loss.mu},
                 {"lambda", c.loss.lambda}, {"autocov", c.loss.autocov},
                 {"c_p", c.c_p}};
    j["train"] = {{"modalities", c.modalities},
                  {"pairing", pairing_name(c.pairing)},
                  {"copies", c.copies},
                  {"batch_size", c.batch_size},
                  {"epochs", c.epochs},
                  {"base_lr", c.base_lr},
                  {"decay_epoch", c.decay_epoch},
                  {"weight_decay", c.weight_decay},
                  {"seed", c.seed},
                  {"checkpoint_interval", c.checkpoint_interval},
                  {"checkpoint_path", c.checkpoint_path},
                  {"log_path", c.log_path}};
    j["augment"] = {{"rot_x_deg", {c.aug.rot_x_deg[0], c.aug.rot_x_deg[1]}},
                    {"rot_y_deg", {c.aug.rot_y_deg[0], c.aug.rot_y_deg[1]}},
                    {"rot_z_deg", {c.aug.rot_z_deg[0], c.aug.rot_z_deg[1]}},
                    {"shear", {c.aug.shear[0], c.aug.shear[1]}},
                    {"scale", {c.aug.scale[0], c.aug.scale[1]}},
                    {"jitter_std", c.aug.jitter_std},
                    {"crop_ratio", {c.aug.crop_ratio[0], c.aug.crop_ratio[1]}},
                    {"flip_prob", c.aug.flip_prob},
                    {"seed", c.aug.seed}};
    return j;
}

inline PretrainConfig config_from_json(const json& j) {
    PretrainConfig c;
    const auto& e = j.at("encoder");
    c.encoder.c_in = e.at("c_in");
    c.encoder.t = e.at("t");
    c.encoder.v = e.at("v");
    c.encoder.m = e.at("m");
    c.encoder.c_e = e.at("c_e");
    c.encoder.c_r = e.at("c_r");
    c.encoder.layers = e.at("layers");
    c.encoder.heads = e.at("heads");
    c.encoder.gap = e.at("gap");
    c.encoder.alpha = e.at("alpha");
    c.encoder.conv_kernel = e.at("conv_kernel");
    c.encoder.causal = e.at("causal");
    const auto& l = j.at("loss");
    c.loss.tau = l.at("tau");
    c.loss.kappa = l.at("kappa");
    c.loss.eta = l.at("eta");
    c.loss.gamma = l.at("gamma");
    c.loss.epsilon = l.at("epsilon");
    c.loss.mu = l.at("mu");
    c.loss.lambda = l.at("lambda");
    c.loss.autocov = l.at("autocov");
    c.c_p = l.at("c_p");
    const auto& t = j.at("train");
    c.modalities = t.at("modalities").get<std::vector<std::string>>();
    c.pairing = pairing_from_name(t.at("pairing"));
    c.copies = t.at("copies");
    c.batch_size = t.at("batch_size");
    c.epochs = t.at("epochs");
    c.base_lr = t.at("base_lr");
    c.decay_epoch = t.at("decay_epoch");
    c.weight_decay = t.at("weight_decay");
    c.seed = t.at("seed");
    c.checkpoint_interval = t.at("checkpoint_interval");
    c.checkpoint_path = t.at("checkpoint_path");
    c.log_path = t.at("log_path");
    const auto& a = j.at("augment");
    auto range = [&](const char* key, double out[2]) {
        out[0] = a.at(key).at(0);
        out[1] = a.at(key).at(1);
    };
    range("rot_x_deg", c.aug.rot_x_deg);
    range("rot_y_deg", c.aug.rot_y_deg);
    range("rot_z_deg", c.aug.rot_z_deg);
    range("shear", c.aug.shear);
    range("scale", c.aug.scale);
    range("crop_ratio", c.aug.crop_ratio);
    c.aug.jitter_std = a.at("jitter_std");
    c.aug.flip_prob = a.at("flip_prob");
    c.aug.seed = a.at("seed");
    return c;
}

/// Full parameter declaration: encoder plus the three projection heads.
inline std::vector<ParamDecl> declare_model_params(const PretrainConfig& cfg) {
    auto decls = dste::declare_encoder_params(cfg.encoder, cfg.modalities);
    for (auto& d : mgfd::declare_projector_params("proj/t/", cfg.encoder.c_r, cfg.c_p))
        decls.push_back(d);
    for (auto& d : mgfd::declare_projector_params("proj/s/", cfg.encoder.c_r, cfg.c_p))
        decls.push_back(d);
    for (auto& d : mgfd::declare_projector_params("proj/i/", 2 * cfg.encoder.c_r, 2 * cfg.c_p))
        decls.push_back(d);
    return decls;
}

// ---------------------------------------------------------------------------
// positive-pair construction

/// Groups records by id, preserving first-appearance order.
inline std::vector<std::vector<const skelio::SkeletonSequence*>> group_by_id(
    const std::vector<skelio::SkeletonSequence>& records) {
    std::vector<std::vector<const skelio::SkeletonSequence*>> groups;
    std::map<std::string, std::size_t> index;
    for (const auto& r : records) {
        auto it = index.find(r.id);
        if (it == index.end()) {
            index[r.id] = groups.size();
            groups.push_back({&r});
        } else {
            groups[it->second].push_back(&r);
        }
    }
    return groups;
}

/// K aligned batches of positive copies. Augment-only: K independent
/// augmentations of each record. Multi-view: copy a starts from view
/// (a mod views) of the record's id group, then gets its own augmentation.
/// Row r of every copy shares the sample id.
inline std::vector<std::vector<skelio::SkeletonSequence>> make_pairs(
    const std::vector<skelio::SkeletonSequence>& batch, Pairing strategy,
    const skelio::AugSpec& aug, std::size_t k, std::uint64_t seed_salt = 0) {
    if (k < 2) throw std::runtime_error("make_pairs: K must be >= 2");
    std::vector<std::vector<skelio::SkeletonSequence>> copies(k);

    if (strategy == Pairing::AugmentOnly) {
        for (std::size_t a = 0; a < k; ++a) {
            copies[a].reserve(batch.size());
            for (std::size_t r = 0; r < batch.size(); ++r)
                copies[a].push_back(skelio::augment_seeded(
                    batch[r], aug, mix_seed(aug.seed, seed_salt, r, a)));
        }
        return copies;
    }

    auto groups = group_by_id(batch);
    for (const auto& grp : groups)
        if (grp.size() < 2)
            throw std::runtime_error("make_pairs: sample '" + grp[0]->id +
                                     "' has a single view; multi-view pairing needs >= 2");
    for (auto& grp : groups) {
        // order views by view index for a stable assignment
        std::sort(grp.begin(), grp.end(),
                  [](const skelio::SkeletonSequence* a, const skelio::SkeletonSequence* b) {
                      return a->view.value_or(0) < b->view.value_or(0);
                  });
    }
    for (std::size_t a = 0; a < k; ++a) {
        copies[a].reserve(groups.size());
        for (std::size_t r = 0; r < groups.size(); ++r) {
            const auto& grp = groups[r];
            const auto* src = grp[a % grp.size()];
            copies[a].push_back(
                skelio::augment_seeded(*src, aug, mix_seed(aug.seed, seed_salt, r, a)));
        }
    }
    return copies;
}

/// Early fusion: elementwise mean of per-modality stream features.
template <class Real>
dste::StreamFeatures<Real> fuse_modalities(
    const std::map<std::string, dste::StreamFeatures<Real>>& by_modality) {
    if (by_modality.empty()) throw std::runtime_error("fuse_modalities: empty modality set");
    dste::StreamFeatures<Real> out;
    bool first = true;
    for (const auto& [name, sf] : by_modality) {
        if (first) {
            out = sf;
            first = false;
            continue;
        }
        if (!out.f_t.same_shape(sf.f_t) || !out.f_s.same_shape(sf.f_s))
            throw std::runtime_error("fuse_modalities: shape mismatch across modalities");
        for (std::size_t i = 0; i < out.f_t.size(); ++i) out.f_t[i] += sf.f_t[i];
        for (std::size_t i = 0; i < out.f_s.size(); ++i) out.f_s[i] += sf.f_s[i];
    }
    if (by_modality.size() > 1) {
        const Real inv = Real(1) / static_cast<Real>(by_modality.size());
        for (auto& v : out.f_t.vec()) v *= inv;
        for (auto& v : out.f_s.vec()) v *= inv;
    }
    return out;
}

// ---------------------------------------------------------------------------
// batch preparation and the full loss forward

template <class Real>
struct PreparedSample {
    std::vector<Mat<Real>> xt;  // per modality, [T][M*V*C]
    std::vector<Mat<Real>> xs;  // per modality, [M*V][T*C]
};

template <class Real>
using PreparedBatch = std::vector<std::vector<PreparedSample<Real>>>;  // [copy][row]

template <class Real>
PreparedBatch<Real> prepare_batch(const std::vector<std::vector<skelio::SkeletonSequence>>& copies,
                                  const PretrainConfig& cfg,
                                  const skelio::DatasetManifest& manifest) {
    PreparedBatch<Real> prep(copies.size());
    for (std::size_t a = 0; a < copies.size(); ++a) {
        prep[a].resize(copies[a].size());
        for (std::size_t i = 0; i < copies[a].size(); ++i) {
            const auto resampled = skelio::temporal_resample(copies[a][i], cfg.encoder.t);
            auto& slot = prep[a][i];
            for (const auto& mod : cfg.modalities) {
                skelio::SkeletonSequence derived;
                if (mod == "joint")
                    derived = resampled;
                else if (mod == "bone")
                    derived = skelio::derive_bone(resampled, manifest.edges);
                else
                    derived = skelio::derive_motion(resampled);
                slot.xt.push_back(dste::temporal_matrix<Real>(derived));
                slot.xs.push_back(dste::spatial_matrix<Real>(derived));
            }
        }
    }
    return prep;
}

/// Owns the graph of one full training objective evaluation.
template <class Real>
struct LossForward {
    std::unique_ptr<Graph<Real>> graph;
    std::unique_ptr<ParamLeaves<Real>> leaves;
    typename Graph<Real>::N total = nullptr;
    mgfd::TotalBreakdown breakdown;
};

template <class Real>
LossForward<Real> build_loss(ParamStore<Real>& params, const PreparedBatch<Real>& prep,
                             const PretrainConfig& cfg, bool update_running) {
    LossForward<Real> fwd;
    fwd.graph = std::make_unique<Graph<Real>>();
    fwd.leaves = std::make_unique<ParamLeaves<Real>>(*fwd.graph, params);
    auto& g = *fwd.graph;
    auto& P = *fwd.leaves;

    std::vector<typename Graph<Real>::N> z_inst, z_sp, z_tmp;
    for (std::size_t a = 0; a < prep.size(); ++a) {
        std::vector<typename Graph<Real>::N> ht_rows, hs_rows;
        for (const auto& sample : prep[a]) {
            std::vector<typename Graph<Real>::N> ft_mods, fs_mods;
            for (std::size_t mi = 0; mi < cfg.modalities.size(); ++mi) {
                const auto& mod = cfg.modalities[mi];
                ft_mods.push_back(dste::embed_stream_g(g, P, sample.xt[mi], "embed/t/" + mod));
                fs_mods.push_back(dste::embed_stream_g(g, P, sample.xs[mi], "embed/s/" + mod));
            }
            auto ft = ft_mods.size() == 1 ? ft_mods[0] : g.mean_of(ft_mods);
            auto fs = fs_mods.size() == 1 ? fs_mods[0] : g.mean_of(fs_mods);
            auto [yt, ys] = dste::encode_g(g, P, ft, fs, cfg.encoder);
            ht_rows.push_back(g.maxpool_rows(yt));
            hs_rows.push_back(g.maxpool_rows(ys));
        }
        auto h_t = g.concat_rows(ht_rows);  // [N][C_r]
        auto h_s = g.concat_rows(hs_rows);
        z_tmp.push_back(mgfd::projector_g(g, P, params, h_t, "proj/t/", mgfd::BnMode::Train,
                                          update_running));
        z_sp.push_back(mgfd::projector_g(g, P, params, h_s, "proj/s/", mgfd::BnMode::Train,
                                         update_running));
        z_inst.push_back(mgfd::projector_g(g, P, params, g.concat_cols(h_t, h_s), "proj/i/",
                                           mgfd::BnMode::Train, update_running));
    }
    fwd.total = mgfd::loss_total_g(g, z_inst, z_sp, z_tmp, cfg.loss, &fwd.breakdown);
    return fwd;
}

// ---------------------------------------------------------------------------
// Adam

template <class Real>
struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::size_t step = 0;
    std::map<std::string, Mat<Real>> m, v;

    void ensure(const ParamStore<Real>& params) {
        for (const auto& name : params.names()) {
            if (params.is_buffer(name)) continue;
            const auto& p = params.at(name);
            if (!m.count(name)) m[name] = Mat<Real>(p.rows(), p.cols());
            if (!v.count(name)) v[name] = Mat<Real>(p.rows(), p.cols());
        }
    }

    /// One Adam step with L2-style weight decay folded into the gradient.
    void update(ParamStore<Real>& params,
                const std::unordered_map<std::string, Mat<Real>>& grads, double lr,
                double weight_decay) {
        ensure(params);
        ++step;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        for (const auto& name : params.names()) {
            if (params.is_buffer(name)) continue;
            auto& p = params.at(name);
            auto& mm = m.at(name);
            auto& vv = v.at(name);
            auto git = grads.find(name);
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double grad =
                    (git != grads.end() ? static_cast<double>(git->second[i]) : 0.0) +
                    weight_decay * static_cast<double>(p[i]);
                const double m_new = beta1 * static_cast<double>(mm[i]) + (1.0 - beta1) * grad;
                const double v_new =
                    beta2 * static_cast<double>(vv[i]) + (1.0 - beta2) * grad * grad;
                mm[i] = static_cast<Real>(m_new);
                vv[i] = static_cast<Real>(v_new);
                const double update = lr * (m_new / bc1) / (std::sqrt(v_new / bc2) + eps);
                p[i] = static_cast<Real>(static_cast<double>(p[i]) - update);
            }
        }
    }
};

// ---------------------------------------------------------------------------
// train step

template <class Real>
mgfd::TotalBreakdown train_step(ParamStore<Real>& params, AdamState<Real>& opt,
                                const std::vector<std::vector<skelio::SkeletonSequence>>& copies,
                                const PretrainConfig& cfg,
                                const skelio::DatasetManifest& manifest, double lr) {
    auto prep = prepare_batch<Real>(copies, cfg, manifest);
    // an lr=0, wd=0 step is a pure no-op: even the BN running buffers stay put
    const bool will_update = lr != 0.0 || cfg.weight_decay != 0.0;
    auto fwd = build_loss(params, prep, cfg, /*update_running=*/will_update);

    const auto& b = fwd.breakdown;
    const double parts[] = {b.total, b.con, b.var, b.autocov, b.xcorr};
    const char* part_names[] = {"total", "con", "var", "autocov", "xcorr"};
    for (int i = 0; i < 5; ++i)
        if (!std::isfinite(parts[i]))
            throw std::runtime_error(std::string("train_step: non-finite loss term '") +
                                     part_names[i] + "'");

    if (will_update) {
        fwd.graph->backward(fwd.total);
        std::unordered_map<std::string, Mat<Real>> grads;
        fwd.leaves->collect_grads(grads);
        for (const auto& [name, grad] : grads)
            if (!grad.all_finite())
                throw std::runtime_error("train_step: non-finite gradient for '" + name + "'");
        opt.update(params, grads, lr, cfg.weight_decay);
    }
    return fwd.breakdown;
}

// ---------------------------------------------------------------------------
// checkpointing

template <class Real>
struct Checkpoint {
    PretrainConfig cfg;
    ParamStore<Real> params;
    AdamState<Real> opt;
    std::size_t step = 0;
    std::size_t next_epoch = 0;
    std::string rng_state;
};

template <class Real>
void save_checkpoint(const std::string& path, const Checkpoint<Real>& ck) {
    io::Container<Real> c;
    c.config = config_to_json(ck.cfg);
    c.config["state"] = {{"step", ck.step},
                         {"next_epoch", ck.next_epoch},
                         {"rng", ck.rng_state},
                         {"adam_step", ck.opt.step}};
    for (const auto& name : ck.params.names())
        c.arrays.emplace_back(name, ck.params.at(name));
    for (const auto& [name, mat] : ck.opt.m) c.arrays.emplace_back("opt/" + name + "/m", mat);
    for (const auto& [name, mat] : ck.opt.v) c.arrays.emplace_back("opt/" + name + "/v", mat);
    write_container(path, c);
}

template <class Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
    auto c = io::read_container<Real>(path);
    Checkpoint<Real> ck;
    ck.cfg = config_from_json(c.config);
    ck.cfg.validate();
    const auto& st = c.config.at("state");
    ck.step = st.at("step");
    ck.next_epoch = st.at("next_epoch");
    ck.rng_state = st.at("rng");
    ck.opt.step = st.at("adam_step");

    const auto decls = declare_model_params(ck.cfg);
    for (const auto& d : decls) {
        const Mat<Real>* m = c.find(d.name);
        if (!m) throw std::runtime_error("checkpoint: missing array '" + d.name + "'");
        ck.params.add(d.name, *m, d.buffer);
        if (!d.buffer) {
            const Mat<Real>* om = c.find("opt/" + d.name + "/m");
            const Mat<Real>* ov = c.find("opt/" + d.name + "/v");
            if (om) ck.opt.m[d.name] = *om;
            if (ov) ck.opt.v[d.name] = *ov;
        }
    }
    ck.params.validate_against(decls);
    return ck;
}

// ---------------------------------------------------------------------------
// fit

struct FitHooks {
    // called after every optimizer step with the logged breakdown
    std::function<void(std::size_t step, const mgfd::TotalBreakdown&, double lr)> on_step;
};

template <class Real>
Checkpoint<Real> fit(const std::vector<skelio::SkeletonSequence>& dataset,
                     const skelio::DatasetManifest& manifest, const PretrainConfig& cfg,
                     const Checkpoint<Real>* resume = nullptr, const FitHooks& hooks = {}) {
    cfg.validate();
    Checkpoint<Real> ck;
    Rng master(cfg.seed);
    if (resume) {
        ck = *resume;
        ck.cfg = cfg;
        master.load_state(ck.rng_state);
    } else {
        ck.cfg = cfg;
        ck.params = init_params<Real>(declare_model_params(cfg), cfg.seed);
    }

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path, resume ? std::ios::app : std::ios::out);
        if (!log) throw std::runtime_error("fit: cannot open log file '" + cfg.log_path + "'");
    }

    // row units: records (augment-only) or id groups (multi-view)
    std::vector<std::vector<const skelio::SkeletonSequence*>> groups;
    if (cfg.pairing == Pairing::MultiView) {
        groups = group_by_id(dataset);
    } else {
        for (const auto& r : dataset) groups.push_back({&r});
    }
    if (groups.empty()) throw std::runtime_error("fit: empty dataset");

    for (std::size_t epoch = ck.next_epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = epoch < cfg.decay_epoch ? cfg.base_lr : cfg.base_lr / 10.0;
        std::vector<std::size_t> order(groups.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        master.shuffle(order.begin(), order.end());

        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            const std::size_t b1 = std::min(b0 + cfg.batch_size, order.size());
            if (b1 - b0 < 2) continue;  // batch statistics need at least 2 rows
            std::vector<skelio::SkeletonSequence> batch;
            for (std::size_t i = b0; i < b1; ++i)
                for (const auto* rec : groups[order[i]]) batch.push_back(*rec);
            const std::uint64_t salt = mix_seed(cfg.seed, 0xBA7C, epoch, b0);
            auto copies = make_pairs(batch, cfg.pairing, cfg.aug, cfg.copies, salt);
            auto breakdown = train_step(ck.params, ck.opt, copies, cfg, manifest, lr);
            ++ck.step;
            if (log)
                log << json{{"step", ck.step},
                            {"total", breakdown.total},
                            {"fd_instance", breakdown.fd_instance},
                            {"fd_spatial", breakdown.fd_spatial},
                            {"fd_temporal", breakdown.fd_temporal},
                            {"con", breakdown.con},
                            {"var", breakdown.var},
                            {"autocov", breakdown.autocov},
                            {"xcorr", breakdown.xcorr},
                            {"lr", lr}}
                           .dump()
                    << "\n";
            if (hooks.on_step) hooks.on_step(ck.step, breakdown, lr);
        }

        ck.next_epoch = epoch + 1;
        ck.rng_state = master.save_state();
        if (cfg.checkpoint_interval > 0 && (epoch + 1) % cfg.checkpoint_interval == 0 &&
            !cfg.checkpoint_path.empty())
            save_checkpoint(cfg.checkpoint_path, ck);
    }
    ck.next_epoch = cfg.epochs;
    ck.rng_state = master.save_state();
    if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, ck);
    return ck;
}

// ---------------------------------------------------------------------------
// finite-difference gradient verification

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0;
    double max_abs_err = 0;
    std::size_t checked = 0;
    std::size_t kinks = 0;  // probes straddling a ReLU/argmax boundary
};

struct GradCheckReport {
    double max_rel_err = 0;
    std::size_t checked = 0;
    std::size_t kinks = 0;
    std::vector<GradCheckEntry> per_param;
};

template <class F>
double central_diff(F&& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Compares analytic gradients of the full objective against central
/// differences, subsampling large arrays. Probes whose +-h evaluations land in
/// different piecewise-linear regions (a ReLU or argmax flipped inside the
/// window) are counted as kinks and excluded: a central difference across a
/// kink does not estimate the derivative. Runs in the precision of the given
/// store; double is the intended instantiation.
template <class Real>
GradCheckReport finite_diff_check(ParamStore<Real>& params,
                                  const std::vector<std::vector<skelio::SkeletonSequence>>& copies,
                                  const PretrainConfig& cfg,
                                  const skelio::DatasetManifest& manifest, double h,
                                  std::size_t max_entries_per_array = 64) {
    const auto prep = prepare_batch<Real>(copies, cfg, manifest);
    auto loss_value = [&](std::uint64_t* pattern) {
        auto fwd = build_loss(params, prep, cfg, /*update_running=*/false);
        if (pattern) *pattern = fwd.graph->activation_pattern();
        return static_cast<double>(fwd.total->value(0, 0));
    };

    auto fwd = build_loss(params, prep, cfg, /*update_running=*/false);
    fwd.graph->backward(fwd.total);
    std::unordered_map<std::string, Mat<Real>> grads;
    fwd.leaves->collect_grads(grads);

    GradCheckReport report;
    for (const auto& name : params.names()) {
        if (params.is_buffer(name)) continue;
        auto& p = params.at(name);
        const auto git = grads.find(name);
        GradCheckEntry entry;
        entry.name = name;
        const std::size_t n = p.size();
        const std::size_t n_check = std::min(n, max_entries_per_array);
        for (std::size_t j = 0; j < n_check; ++j) {
            const std::size_t idx = j * n / n_check;
            const Real saved = p[idx];
            std::uint64_t pat_plus = 0, pat_minus = 0;
            p[idx] = static_cast<Real>(static_cast<double>(saved) + h);
            const double lp = loss_value(&pat_plus);
            p[idx] = static_cast<Real>(static_cast<double>(saved) - h);
            const double lm = loss_value(&pat_minus);
            p[idx] = saved;
            if (pat_plus != pat_minus) {
                ++entry.kinks;
                continue;
            }
            const double fd = (lp - lm) / (2.0 * h);
            const double an = git != grads.end() ? static_cast<double>(git->second[idx]) : 0.0;
            const double abs_err = std::abs(an - fd);
            entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
            if (std::max(std::abs(an), std::abs(fd)) > 1e-6) {
                const double rel = abs_err / std::max(std::abs(an), std::abs(fd));
                entry.max_rel_err = std::max(entry.max_rel_err, rel);
            }
            ++entry.checked;
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.checked += entry.checked;
        report.kinks += entry.kinks;
        report.per_param.push_back(std::move(entry));
    }
    return report;
}

}  // namespace usdrl::pretrain
