#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "usdrl/autograd.hpp"
#include "usdrl/params.hpp"
#include "usdrl/skelio.hpp"
#include "usdrl/tensor.hpp"

namespace usdrl::dste {

struct EncoderConfig {
    std::size_t c_in = 3, t = 64, v = 25, m = 2;
    std::size_t c_e = 64, c_r = 64;
    std::size_t layers = 2, heads = 4;
    std::size_t gap = 4;
    double alpha = 0.5;  // CA weight; DSA weight is beta()
    std::size_t conv_kernel = 3;
    bool causal = false;

    double beta() const { return 1.0 - alpha; }
    std::size_t temporal_len() const { return t; }
    std::size_t spatial_len() const { return m * v; }

    void validate() const {
        if (c_in != 2 && c_in != 3) throw std::runtime_error("encoder: c_in must be 2 or 3");
        if (t < 1 || v < 1 || m < 1) throw std::runtime_error("encoder: t, v, m must be >= 1");
        if (layers < 1) throw std::runtime_error("encoder: layers must be >= 1");
        if (gap < 1) throw std::runtime_error("encoder: gap must be >= 1");
        if (heads < 1 || c_e % heads != 0 || c_r % heads != 0)
            throw std::runtime_error("encoder: c_e and c_r must be divisible by heads");
        if (alpha < 0.0 || alpha > 1.0)
            throw std::runtime_error("encoder: alpha must lie in [0,1]");
        if (conv_kernel < 1 || conv_kernel % 2 == 0)
            throw std::runtime_error("encoder: conv_kernel must be odd");
    }
};

template <class Real>
struct StreamFeatures {
    Mat<Real> f_t;  // [T][C]
    Mat<Real> f_s;  // [M*V][C]
};

// ---------------------------------------------------------------------------
// input flattening: X_t rows = frames, X_s rows = person-joint pairs

template <class Real>
Mat<Real> temporal_matrix(const skelio::SkeletonSequence& seq) {
    const auto& f = seq.frames;
    Mat<Real> x(f.t, f.m * f.v * f.c);
    for (std::size_t ti = 0; ti < f.t; ++ti)
        for (std::size_t mi = 0; mi < f.m; ++mi)
            for (std::size_t vi = 0; vi < f.v; ++vi)
                for (std::size_t ci = 0; ci < f.c; ++ci)
                    x(ti, (mi * f.v + vi) * f.c + ci) =
                        static_cast<Real>(f.at(ti, mi, vi, ci));
    return x;
}

template <class Real>
Mat<Real> spatial_matrix(const skelio::SkeletonSequence& seq) {
    const auto& f = seq.frames;
    Mat<Real> x(f.m * f.v, f.t * f.c);
    for (std::size_t mi = 0; mi < f.m; ++mi)
        for (std::size_t vi = 0; vi < f.v; ++vi)
            for (std::size_t ti = 0; ti < f.t; ++ti)
                for (std::size_t ci = 0; ci < f.c; ++ci)
                    x(mi * f.v + vi, ti * f.c + ci) = static_cast<Real>(f.at(ti, mi, vi, ci));
    return x;
}

// ---------------------------------------------------------------------------
// parameter declarations

namespace detail {

inline void declare_sa(std::vector<ParamDecl>& out, const std::string& prefix, std::size_t d_in,
                       std::size_t d_out) {
    out.push_back({prefix + "ln_g", 1, d_in, InitKind::One});
    out.push_back({prefix + "ln_b", 1, d_in, InitKind::Zero});
    for (const char* w : {"wq", "wk", "wv"})
        out.push_back({prefix + w, d_in, d_out, InitKind::FanInUniform});
    for (const char* b : {"bq", "bk", "bv"})
        out.push_back({prefix + b, 1, d_out, InitKind::FanInUniform, false, d_in});
    out.push_back({prefix + "wo", d_out, d_out, InitKind::FanInUniform});
    out.push_back({prefix + "bo", 1, d_out, InitKind::FanInUniform, false, d_out});
}

inline void declare_ffn(std::vector<ParamDecl>& out, const std::string& prefix, std::size_t d,
                        std::size_t hidden) {
    out.push_back({prefix + "w1", d, hidden, InitKind::FanInUniform});
    out.push_back({prefix + "b1", 1, hidden, InitKind::FanInUniform, false, d});
    out.push_back({prefix + "w2", hidden, d, InitKind::FanInUniform});
    out.push_back({prefix + "b2", 1, d, InitKind::FanInUniform, false, hidden});
}

}  // namespace detail

inline std::vector<ParamDecl> declare_encoder_params(const EncoderConfig& cfg,
                                                     const std::vector<std::string>& modalities) {
    cfg.validate();
    std::vector<ParamDecl> out;
    for (const auto& mod : modalities) {
        out.push_back({"embed/t/" + mod + "/w", cfg.m * cfg.v * cfg.c_in, cfg.c_e,
                       InitKind::FanInUniform});
        out.push_back({"embed/t/" + mod + "/b", 1, cfg.c_e, InitKind::FanInUniform, false,
                       cfg.m * cfg.v * cfg.c_in});
        out.push_back({"embed/s/" + mod + "/w", cfg.t * cfg.c_in, cfg.c_e,
                       InitKind::FanInUniform});
        out.push_back({"embed/s/" + mod + "/b", 1, cfg.c_e, InitKind::FanInUniform, false,
                       cfg.t * cfg.c_in});
    }
    for (const char* st : {"t", "s"}) {
        const std::size_t len = st[0] == 't' ? cfg.temporal_len() : cfg.spatial_len();
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            const std::size_t d_in = l == 0 ? cfg.c_e : cfg.c_r;
            const std::string p =
                "enc/" + std::string(st) + "/l" + std::to_string(l) + "/";
            out.push_back({p + "dsa/w1", len, len, InitKind::FanInUniform});
            out.push_back({p + "dsa/w2", len, len, InitKind::FanInUniform});
            detail::declare_sa(out, p + "dsa/sa/", d_in, cfg.c_r);
            detail::declare_ffn(out, p + "dsa/ffn/", cfg.c_r, 2 * cfg.c_r);
            out.push_back({p + "ca/conv_k", cfg.conv_kernel, d_in, InitKind::FanInUniform});
            detail::declare_sa(out, p + "ca/sa/", d_in, cfg.c_r);
            detail::declare_ffn(out, p + "ca/ffn/", cfg.c_r, 2 * cfg.c_r);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// graph builders

namespace detail {

constexpr double kLayerNormEps = 1e-5;

template <class Real>
typename Graph<Real>::N layer_norm_rows(Graph<Real>& g, typename Graph<Real>::N x,
                                        typename Graph<Real>::N gain,
                                        typename Graph<Real>::N bias) {
    const std::size_t d = x->value.cols();
    auto ones = g.constant(Mat<Real>(d, 1, Real(1) / static_cast<Real>(d)));
    auto mean = g.matmul(x, ones);                       // [L][1]
    auto centered = g.sub(x, mean);
    auto var = g.matmul(g.mul(centered, centered), ones);  // biased row variance
    auto denom = g.sqrt_e(g.add_scalar(var, static_cast<Real>(kLayerNormEps)));
    auto normed = g.div(centered, denom);
    return g.add(g.mul(normed, gain), bias);
}

/// Pre-LN multi-head self-attention: MHA(LN(x)). Maps [L][D_in] -> [L][C_r].
template <class Real>
typename Graph<Real>::N sa_block(Graph<Real>& g, ParamLeaves<Real>& P,
                                 typename Graph<Real>::N x, const std::string& prefix,
                                 std::size_t heads, bool causal) {
    auto xn = layer_norm_rows(g, x, P(prefix + "ln_g"), P(prefix + "ln_b"));
    auto q = g.add(g.matmul(xn, P(prefix + "wq")), P(prefix + "bq"));
    auto k = g.add(g.matmul(xn, P(prefix + "wk")), P(prefix + "bk"));
    auto v = g.add(g.matmul(xn, P(prefix + "wv")), P(prefix + "bv"));
    const std::size_t c_r = q->value.cols();
    const std::size_t d_head = c_r / heads;
    typename Graph<Real>::N concat = nullptr;
    for (std::size_t h = 0; h < heads; ++h) {
        auto qh = g.slice_cols(q, h * d_head, (h + 1) * d_head);
        auto kh = g.slice_cols(k, h * d_head, (h + 1) * d_head);
        auto vh = g.slice_cols(v, h * d_head, (h + 1) * d_head);
        auto scores = g.scale(g.matmul(qh, g.transpose(kh)),
                              static_cast<Real>(1.0 / std::sqrt(static_cast<double>(d_head))));
        auto probs = g.softmax_rows(scores, causal);
        auto oh = g.matmul(probs, vh);
        concat = concat ? g.concat_cols(concat, oh) : oh;
    }
    return g.add(g.matmul(concat, P(prefix + "wo")), P(prefix + "bo"));
}

template <class Real>
typename Graph<Real>::N ffn_block(Graph<Real>& g, ParamLeaves<Real>& P,
                                  typename Graph<Real>::N x, const std::string& prefix) {
    auto h = g.relu(g.add(g.matmul(x, P(prefix + "w1")), P(prefix + "b1")));
    return g.add(g.matmul(h, P(prefix + "w2")), P(prefix + "b2"));
}

template <class Real>
Mat<Real> causal_mix_mask(std::size_t len) {
    // (F1 W)[., j] mixes input positions i; zero the i > j entries
    Mat<Real> m(len, len, Real(0));
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = i; j < len; ++j) m(i, j) = Real(1);
    return m;
}

}  // namespace detail

template <class Real>
typename Graph<Real>::N embed_stream_g(Graph<Real>& g, ParamLeaves<Real>& P, const Mat<Real>& x,
                                       const std::string& prefix) {
    auto xn = g.constant(x);
    return g.add(g.matmul(xn, P(prefix + "/w")), P(prefix + "/b"));
}

template <class Real>
typename Graph<Real>::N dsa_forward_g(Graph<Real>& g, ParamLeaves<Real>& P,
                                      typename Graph<Real>::N f, const std::string& prefix,
                                      std::size_t gap, std::size_t heads, bool causal) {
    const std::size_t len = f->value.rows();
    auto w1 = P(prefix + "/w1");
    auto w2 = P(prefix + "/w2");
    if (causal) {
        auto tri = g.constant(detail::causal_mix_mask<Real>(len));
        w1 = g.mul(w1, tri);
        w2 = g.mul(w2, tri);
    }
    auto f1 = g.transpose(f);                                   // [D][L]
    auto fh = g.add(g.matmul(g.relu(g.matmul(f1, w1)), w2), f1);
    auto fhp = g.transpose(fh);                                 // [L][D]

    Mat<Real> mask(len, 1, Real(0)), inv(len, 1, Real(1));
    for (std::size_t i = 0; i < len; i += gap) {
        mask(i, 0) = Real(1);
        inv(i, 0) = Real(0);
    }
    auto fm = g.add(g.mul(fhp, g.constant(mask)), g.mul(f, g.constant(inv)));

    auto branch_m = detail::ffn_block(g, P, detail::sa_block(g, P, fm, prefix + "/sa/", heads, causal),
                                      prefix + "/ffn/");
    auto branch_p = detail::ffn_block(g, P, detail::sa_block(g, P, f, prefix + "/sa/", heads, causal),
                                      prefix + "/ffn/");
    return g.add(branch_m, branch_p);
}

template <class Real>
typename Graph<Real>::N ca_forward_g(Graph<Real>& g, ParamLeaves<Real>& P,
                                     typename Graph<Real>::N f, const std::string& prefix,
                                     std::size_t heads, bool causal) {
    auto conv = g.conv1d_depthwise(f, P(prefix + "/conv_k"), causal);
    auto x = g.add(conv, f);
    return detail::ffn_block(g, P, detail::sa_block(g, P, x, prefix + "/sa/", heads, causal),
                             prefix + "/ffn/");
}

/// Weighted CA/DSA sum. alpha in {0,1} short-circuits to the single branch so
/// the reduction is bit-exact.
template <class Real>
typename Graph<Real>::N layer_forward_g(Graph<Real>& g, ParamLeaves<Real>& P,
                                        typename Graph<Real>::N f, const std::string& prefix,
                                        const EncoderConfig& cfg, bool causal) {
    if (cfg.alpha == 1.0) return ca_forward_g(g, P, f, prefix + "/ca", cfg.heads, causal);
    if (cfg.alpha == 0.0) return dsa_forward_g(g, P, f, prefix + "/dsa", cfg.gap, cfg.heads, causal);
    auto ca = ca_forward_g(g, P, f, prefix + "/ca", cfg.heads, causal);
    auto dsa = dsa_forward_g(g, P, f, prefix + "/dsa", cfg.gap, cfg.heads, causal);
    return g.add(g.scale(ca, static_cast<Real>(cfg.alpha)),
                 g.scale(dsa, static_cast<Real>(cfg.beta())));
}

/// Stacks cfg.layers blocks per stream. The causal variant restricts the
/// temporal stream only; the spatial stream has no time axis.
template <class Real>
std::pair<typename Graph<Real>::N, typename Graph<Real>::N> encode_g(
    Graph<Real>& g, ParamLeaves<Real>& P, typename Graph<Real>::N f_t,
    typename Graph<Real>::N f_s, const EncoderConfig& cfg) {
    auto y_t = f_t;
    auto y_s = f_s;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        y_t = layer_forward_g(g, P, y_t, "enc/t/l" + std::to_string(l), cfg, cfg.causal);
        y_s = layer_forward_g(g, P, y_s, "enc/s/l" + std::to_string(l), cfg, false);
    }
    return {y_t, y_s};
}

/// h = concat(columnwise max of y_t, columnwise max of y_s), temporal half
/// first -> [1][2*C_r].
template <class Real>
typename Graph<Real>::N instance_embed_g(Graph<Real>& g, typename Graph<Real>::N y_t,
                                         typename Graph<Real>::N y_s) {
    return g.concat_cols(g.maxpool_rows(y_t), g.maxpool_rows(y_s));
}

// ---------------------------------------------------------------------------
// value-level operations (build a throwaway graph, return the values)

template <class Real>
StreamFeatures<Real> embed(const skelio::SkeletonSequence& seq, const EncoderConfig& cfg,
                           ParamStore<Real>& params, const std::string& modality = "joint") {
    const auto& f = seq.frames;
    if (f.t != cfg.t || f.m != cfg.m || f.v != cfg.v || f.c != cfg.c_in)
        throw std::runtime_error("embed: sequence shape does not match encoder config");
    Graph<Real> g;
    ParamLeaves<Real> P(g, params);
    auto ft = embed_stream_g(g, P, temporal_matrix<Real>(seq), "embed/t/" + modality);
    auto fs = embed_stream_g(g, P, spatial_matrix<Real>(seq), "embed/s/" + modality);
    return {ft->value, fs->value};
}

template <class Real>
Mat<Real> dsa_forward(const Mat<Real>& f, ParamStore<Real>& params, std::size_t gap,
                      std::size_t heads, bool causal, const std::string& prefix = "enc/t/l0/dsa") {
    Graph<Real> g;
    ParamLeaves<Real> P(g, params);
    return dsa_forward_g(g, P, g.constant(f), prefix, gap, heads, causal)->value;
}

template <class Real>
Mat<Real> ca_forward(const Mat<Real>& f, ParamStore<Real>& params, std::size_t heads, bool causal,
                     const std::string& prefix = "enc/t/l0/ca") {
    Graph<Real> g;
    ParamLeaves<Real> P(g, params);
    return ca_forward_g(g, P, g.constant(f), prefix, heads, causal)->value;
}

template <class Real>
Mat<Real> layer_forward(const Mat<Real>& f, ParamStore<Real>& params, const EncoderConfig& cfg,
                        bool causal = false, const std::string& prefix = "enc/t/l0") {
    Graph<Real> g;
    ParamLeaves<Real> P(g, params);
    return layer_forward_g(g, P, g.constant(f), prefix, cfg, causal)->value;
}

template <class Real>
std::pair<Mat<Real>, Mat<Real>> encode(const skelio::SkeletonSequence& seq,
                                       const EncoderConfig& cfg, ParamStore<Real>& params,
                                       const std::string& modality = "joint") {
    const auto& f = seq.frames;
    if (f.t != cfg.t || f.m != cfg.m || f.v != cfg.v || f.c != cfg.c_in)
        throw std::runtime_error("encode: sequence shape does not match encoder config");
    Graph<Real> g;
    ParamLeaves<Real> P(g, params);
    auto ft = embed_stream_g(g, P, temporal_matrix<Real>(seq), "embed/t/" + modality);
    auto fs = embed_stream_g(g, P, spatial_matrix<Real>(seq), "embed/s/" + modality);
    auto [yt, ys] = encode_g(g, P, ft, fs, cfg);
    return {yt->value, ys->value};
}

template <class Real>
std::pair<Mat<Real>, Mat<Real>> encode_features(const Mat<Real>& f_t, const Mat<Real>& f_s,
                                                const EncoderConfig& cfg,
                                                ParamStore<Real>& params) {
    Graph<Real> g;
    ParamLeaves<Real> P(g, params);
    auto [yt, ys] = encode_g(g, P, g.constant(f_t), g.constant(f_s), cfg);
    return {yt->value, ys->value};
}

template <class Real>
Mat<Real> instance_embed(const Mat<Real>& y_t, const Mat<Real>& y_s) {
    Graph<Real> g;
    return instance_embed_g(g, g.constant(y_t), g.constant(y_s))->value;
}

}  // namespace usdrl::dste
