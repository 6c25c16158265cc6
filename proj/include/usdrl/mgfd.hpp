#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "usdrl/autograd.hpp"
#include "usdrl/params.hpp"
#include "usdrl/tensor.hpp"

namespace usdrl::mgfd {

struct LossWeights {
    double tau = 0.5;      // spatial/temporal domain weight
    double kappa = 5.0;    // similarity weight
    double eta = 5e-4;     // cosine-invariance weight
    double gamma = 1.0;    // variance floor
    double epsilon = 1e-4; // variance stabilizer
    double mu = 1.0;       // variance term weight
    double lambda = 1e-3;  // cross-correlation weight
    double autocov = 1.0;  // auto-covariance term weight (1 = standard form)

    void validate() const {
        const double all[] = {tau, kappa, eta, gamma, epsilon, mu, lambda, autocov};
        for (double v : all)
            if (!(v >= 0) || !std::isfinite(v))
                throw std::runtime_error("LossWeights: weights must be finite and >= 0");
        if (epsilon <= 0) throw std::runtime_error("LossWeights: epsilon must be > 0");
    }
};

template <class Real>
struct ProjectionSet {
    Mat<Real> z_t;  // [N][C_p]
    Mat<Real> z_s;  // [N][C_p]
    Mat<Real> z;    // [N][2*C_p]
};

enum class BnMode { Train, Eval, Bypass };

// ---------------------------------------------------------------------------
// projector

inline std::vector<ParamDecl> declare_projector_params(const std::string& prefix, std::size_t in,
                                                       std::size_t out) {
    std::vector<ParamDecl> d;
    d.push_back({prefix + "l1/w", in, out, InitKind::FanInUniform});
    d.push_back({prefix + "l1/b", 1, out, InitKind::FanInUniform, false, in});
    d.push_back({prefix + "bn1/g", 1, out, InitKind::One});
    d.push_back({prefix + "bn1/b", 1, out, InitKind::Zero});
    d.push_back({prefix + "bn1/rm", 1, out, InitKind::Zero, true});
    d.push_back({prefix + "bn1/rv", 1, out, InitKind::One, true});
    d.push_back({prefix + "l2/w", out, out, InitKind::FanInUniform});
    d.push_back({prefix + "l2/b", 1, out, InitKind::FanInUniform, false, out});
    d.push_back({prefix + "bn2/g", 1, out, InitKind::One});
    d.push_back({prefix + "bn2/b", 1, out, InitKind::Zero});
    d.push_back({prefix + "bn2/rm", 1, out, InitKind::Zero, true});
    d.push_back({prefix + "bn2/rv", 1, out, InitKind::One, true});
    d.push_back({prefix + "l3/w", out, out, InitKind::FanInUniform});
    d.push_back({prefix + "l3/b", 1, out, InitKind::FanInUniform, false, out});
    return d;
}

namespace detail {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

template <class Real>
typename Graph<Real>::N batch_norm_cols(Graph<Real>& g, ParamLeaves<Real>& P,
                                        ParamStore<Real>& store, typename Graph<Real>::N x,
                                        const std::string& prefix, BnMode mode,
                                        bool update_running) {
    if (mode == BnMode::Bypass) return x;
    const std::size_t n = x->value.rows();
    auto gain = P(prefix + "g");
    auto bias = P(prefix + "b");
    if (mode == BnMode::Eval) {
        auto rm = P(prefix + "rm");
        auto rv = P(prefix + "rv");
        auto denom = g.sqrt_e(g.add_scalar(rv, static_cast<Real>(kBnEps)));
        return g.add(g.mul(g.div(g.sub(x, rm), denom), gain), bias);
    }
    auto ones = g.constant(Mat<Real>(1, n, Real(1) / static_cast<Real>(n)));
    auto mean = g.matmul(ones, x);  // [1][H]
    auto centered = g.sub(x, mean);
    auto var = g.matmul(ones, g.mul(centered, centered));  // biased
    auto denom = g.sqrt_e(g.add_scalar(var, static_cast<Real>(kBnEps)));
    auto normed = g.div(centered, denom);

    if (update_running) {
        // running statistics track the unbiased batch variance
        auto& rm = store.at(prefix + "rm");
        auto& rv = store.at(prefix + "rv");
        const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
        for (std::size_t j = 0; j < rm.cols(); ++j) {
            rm(0, j) = static_cast<Real>((1.0 - kBnMomentum) * rm(0, j) +
                                         kBnMomentum * mean->value(0, j));
            rv(0, j) = static_cast<Real>((1.0 - kBnMomentum) * rv(0, j) +
                                         kBnMomentum * unbias * var->value(0, j));
        }
    }
    return g.add(g.mul(normed, gain), bias);
}

}  // namespace detail

/// Three-layer projection head: linear/BN/ReLU twice, then a linear layer.
template <class Real>
typename Graph<Real>::N projector_g(Graph<Real>& g, ParamLeaves<Real>& P, ParamStore<Real>& store,
                                    typename Graph<Real>::N h, const std::string& prefix,
                                    BnMode mode, bool update_running = true) {
    auto x = g.add(g.matmul(h, P(prefix + "l1/w")), P(prefix + "l1/b"));
    x = g.relu(detail::batch_norm_cols(g, P, store, x, prefix + "bn1/", mode, update_running));
    x = g.add(g.matmul(x, P(prefix + "l2/w")), P(prefix + "l2/b"));
    x = g.relu(detail::batch_norm_cols(g, P, store, x, prefix + "bn2/", mode, update_running));
    return g.add(g.matmul(x, P(prefix + "l3/w")), P(prefix + "l3/b"));
}

/// Z_t = P_t(h_t), Z_s = P_s(h_s), Z = P_i(concat(h_t, h_s)).
template <class Real>
ProjectionSet<Real> project(const Mat<Real>& h_t, const Mat<Real>& h_s, ParamStore<Real>& store,
                            BnMode mode = BnMode::Train, bool update_running = true) {
    if (h_t.rows() != h_s.rows()) throw std::runtime_error("project: batch size mismatch");
    if (h_t.rows() < 2) throw std::runtime_error("project: batch statistics need N >= 2");
    Graph<Real> g;
    ParamLeaves<Real> P(g, store);
    auto ht = g.constant(h_t);
    auto hs = g.constant(h_s);
    ProjectionSet<Real> out;
    out.z_t = projector_g(g, P, store, ht, "proj/t/", mode, update_running)->value;
    out.z_s = projector_g(g, P, store, hs, "proj/s/", mode, update_running)->value;
    out.z = projector_g(g, P, store, g.concat_cols(ht, hs), "proj/i/", mode, update_running)->value;
    return out;
}

// ---------------------------------------------------------------------------
// decorrelation loss terms (graph builders; every term is differentiable)

namespace detail {

template <class Real>
typename Graph<Real>::N row_sq_norm(Graph<Real>& g, typename Graph<Real>::N z) {
    auto ones = g.constant(Mat<Real>(z->value.cols(), 1, Real(1)));
    return g.matmul(g.mul(z, z), ones);  // [N][1]
}

template <class Real>
typename Graph<Real>::N center_cols(Graph<Real>& g, typename Graph<Real>::N z) {
    const std::size_t n = z->value.rows();
    auto ones = g.constant(Mat<Real>(1, n, Real(1) / static_cast<Real>(n)));
    return g.sub(z, g.matmul(ones, z));
}

template <class Real>
typename Graph<Real>::N offdiag_sq_sum(Graph<Real>& g, typename Graph<Real>::N m) {
    const std::size_t d = m->value.rows();
    Mat<Real> ident(d, d, Real(0));
    for (std::size_t i = 0; i < d; ++i) ident(i, i) = Real(1);
    auto sq = g.mul(m, m);
    return g.sub(g.sum_all(sq), g.sum_all(g.mul(sq, g.constant(ident))));
}

}  // namespace detail

/// Intra-sample consistency over K positive copies: per sample, kappa times
/// the distance to the copy mean plus eta times (1 - cosine) across copy
/// pairs; averaged over samples and copies.
template <class Real>
typename Graph<Real>::N loss_con_node(Graph<Real>& g,
                                      const std::vector<typename Graph<Real>::N>& zs,
                                      double kappa, double eta) {
    const std::size_t k = zs.size();
    if (k < 2) throw std::runtime_error("loss_con: need at least 2 copies");
    const std::size_t n = zs[0]->value.rows();
    for (auto z : zs)
        if (!z->value.same_shape(zs[0]->value))
            throw std::runtime_error("loss_con: copy shape mismatch");

    auto zbar = g.mean_of(std::vector<typename Graph<Real>::N>(zs.begin(), zs.end()));
    std::vector<typename Graph<Real>::N> normed(k, nullptr);
    if (eta != 0) {
        for (std::size_t a = 0; a < k; ++a) {
            auto sq = detail::row_sq_norm(g, zs[a]);
            for (std::size_t r = 0; r < n; ++r)
                if (sq->value(r, 0) == Real(0))
                    throw std::runtime_error("loss_con: zero-norm row " + std::to_string(r) +
                                             " in normalization");
            normed[a] = g.div(zs[a], g.sqrt_e(sq));
        }
    }

    typename Graph<Real>::N acc = nullptr;
    auto accumulate = [&](typename Graph<Real>::N term) { acc = acc ? g.add(acc, term) : term; };
    for (std::size_t a = 0; a < k; ++a) {
        if (kappa != 0) {
            auto diff = g.sub(zs[a], zbar);
            accumulate(g.scale(g.sqrt_e(detail::row_sq_norm(g, diff)),
                               static_cast<Real>(kappa)));
        }
        if (eta != 0) {
            auto ones = g.constant(Mat<Real>(zs[a]->value.cols(), 1, Real(1)));
            for (std::size_t b = 0; b < k; ++b) {
                if (b == a) continue;
                auto cos = g.matmul(g.mul(normed[a], normed[b]), ones);
                auto one_minus = g.add_scalar(g.scale(cos, Real(-1)), Real(1));
                accumulate(g.scale(one_minus, static_cast<Real>(eta)));
            }
        }
    }
    if (acc == nullptr) return g.scalar(Real(0));
    return g.scale(g.sum_all(acc),
                   Real(1) / static_cast<Real>(k) / static_cast<Real>(n));
}

/// Hinge on the per-dimension standard deviation (unbiased column variance).
template <class Real>
typename Graph<Real>::N term_variance_g(Graph<Real>& g, typename Graph<Real>::N z, double gamma,
                                        double epsilon) {
    const std::size_t n = z->value.rows(), d = z->value.cols();
    if (n < 2) throw std::runtime_error("term_variance: need N >= 2");
    auto centered = detail::center_cols(g, z);
    auto ones = g.constant(Mat<Real>(1, n, Real(1)));
    auto var = g.scale(g.matmul(ones, g.mul(centered, centered)),
                       Real(1) / static_cast<Real>(n - 1));  // [1][D]
    auto sd = g.sqrt_e(g.add_scalar(var, static_cast<Real>(epsilon)));
    auto hinge = g.relu(g.add_scalar(g.scale(sd, Real(-1)), static_cast<Real>(gamma)));
    return g.scale(g.sum_all(hinge), Real(1) / static_cast<Real>(d));
}

/// Mean squared off-diagonal of the unbiased covariance matrix.
template <class Real>
typename Graph<Real>::N term_autocov_g(Graph<Real>& g, typename Graph<Real>::N z) {
    const std::size_t n = z->value.rows(), d = z->value.cols();
    if (n < 2) throw std::runtime_error("term_autocov: need N >= 2");
    auto centered = detail::center_cols(g, z);
    auto cov = g.scale(g.matmul(g.transpose(centered), centered),
                       Real(1) / static_cast<Real>(n - 1));
    return g.scale(detail::offdiag_sq_sum(g, cov), Real(1) / static_cast<Real>(d));
}

/// Squared off-diagonal sum of the cross-correlation matrix between two
/// copies; columns are batch mean-centered then scaled to unit norm.
template <class Real>
typename Graph<Real>::N term_xcorr_g(Graph<Real>& g, typename Graph<Real>::N za,
                                     typename Graph<Real>::N zb) {
    if (!za->value.same_shape(zb->value)) throw std::runtime_error("term_xcorr: shape mismatch");
    const std::size_t n = za->value.rows();
    if (n < 2) throw std::runtime_error("term_xcorr: need N >= 2");
    auto ones = g.constant(Mat<Real>(1, n, Real(1)));
    auto normalize = [&](typename Graph<Real>::N z) {
        auto centered = detail::center_cols(g, z);
        auto sq = g.matmul(ones, g.mul(centered, centered));  // [1][D]
        for (std::size_t j = 0; j < sq->value.cols(); ++j)
            if (sq->value(0, j) == Real(0))
                throw std::runtime_error("term_xcorr: zero-norm column " + std::to_string(j) +
                                         " after centering (collapsed dimension)");
        return g.div(centered, g.sqrt_e(sq));
    };
    auto xa = normalize(za);
    auto xb = normalize(zb);
    auto xcorr = g.matmul(g.transpose(xa), xb);
    return detail::offdiag_sq_sum(g, xcorr);
}

template <class Real>
typename Graph<Real>::N loss_sep_g(Graph<Real>& g, const std::vector<typename Graph<Real>::N>& zs,
                                   const LossWeights& w) {
    if (zs.empty()) throw std::runtime_error("loss_sep: need at least one copy");
    typename Graph<Real>::N acc = nullptr;
    auto accumulate = [&](typename Graph<Real>::N term) { acc = acc ? g.add(acc, term) : term; };
    for (std::size_t a = 0; a < zs.size(); ++a) {
        if (w.mu != 0)
            accumulate(g.scale(term_variance_g(g, zs[a], w.gamma, w.epsilon),
                               static_cast<Real>(w.mu)));
        if (w.autocov != 0)
            accumulate(g.scale(term_autocov_g(g, zs[a]), static_cast<Real>(w.autocov)));
        if (w.lambda != 0)
            for (std::size_t b = a + 1; b < zs.size(); ++b)
                accumulate(g.scale(term_xcorr_g(g, zs[a], zs[b]), static_cast<Real>(w.lambda)));
    }
    return acc ? acc : g.scalar(Real(0));
}

template <class Real>
typename Graph<Real>::N loss_fd_g(Graph<Real>& g, const std::vector<typename Graph<Real>::N>& zs,
                                  const LossWeights& w) {
    return g.add(loss_con_node(g, zs, w.kappa, w.eta), loss_sep_g(g, zs, w));
}

struct TotalBreakdown {
    double total = 0;
    double fd_instance = 0, fd_spatial = 0, fd_temporal = 0;
    double con = 0, var = 0, autocov = 0, xcorr = 0;  // tau-weighted contributions
};

/// Eq.-level total: instance-domain decorrelation plus tau-weighted spatial
/// and temporal domains. The breakdown reports tau-weighted per-term
/// contributions, so con + var + autocov + xcorr == total.
template <class Real>
typename Graph<Real>::N loss_total_g(Graph<Real>& g,
                                     const std::vector<typename Graph<Real>::N>& z_inst,
                                     const std::vector<typename Graph<Real>::N>& z_sp,
                                     const std::vector<typename Graph<Real>::N>& z_tmp,
                                     const LossWeights& w, TotalBreakdown* breakdown = nullptr) {
    w.validate();
    auto domain = [&](const std::vector<typename Graph<Real>::N>& zs, double domain_w,
                      double* fd_sink) {
        auto con = loss_con_node(g, zs, w.kappa, w.eta);
        typename Graph<Real>::N var = nullptr, ac = nullptr, xc = nullptr;
        typename Graph<Real>::N acc = con;
        for (std::size_t a = 0; a < zs.size(); ++a) {
            if (w.mu != 0) {
                auto t = g.scale(term_variance_g(g, zs[a], w.gamma, w.epsilon),
                                 static_cast<Real>(w.mu));
                var = var ? g.add(var, t) : t;
            }
            if (w.autocov != 0) {
                auto t = g.scale(term_autocov_g(g, zs[a]), static_cast<Real>(w.autocov));
                ac = ac ? g.add(ac, t) : t;
            }
            if (w.lambda != 0)
                for (std::size_t b = a + 1; b < zs.size(); ++b) {
                    auto t = g.scale(term_xcorr_g(g, zs[a], zs[b]), static_cast<Real>(w.lambda));
                    xc = xc ? g.add(xc, t) : t;
                }
        }
        for (auto* t : {&var, &ac, &xc})
            if (*t) acc = g.add(acc, *t);
        if (breakdown) {
            const double fd = static_cast<double>(acc->value(0, 0));
            if (fd_sink) *fd_sink = fd;
            breakdown->con += domain_w * static_cast<double>(con->value(0, 0));
            if (var) breakdown->var += domain_w * static_cast<double>(var->value(0, 0));
            if (ac) breakdown->autocov += domain_w * static_cast<double>(ac->value(0, 0));
            if (xc) breakdown->xcorr += domain_w * static_cast<double>(xc->value(0, 0));
        }
        return acc;
    };

    auto total = domain(z_inst, 1.0, breakdown ? &breakdown->fd_instance : nullptr);
    if (w.tau != 0) {
        auto sp = domain(z_sp, w.tau, breakdown ? &breakdown->fd_spatial : nullptr);
        auto tmp = domain(z_tmp, w.tau, breakdown ? &breakdown->fd_temporal : nullptr);
        total = g.add(total, g.scale(g.add(sp, tmp), static_cast<Real>(w.tau)));
    } else if (breakdown) {
        // still report the unweighted domain values for logging
        Graph<Real> side;
        std::vector<typename Graph<Real>::N> sp, tmp;
        for (auto z : z_sp) sp.push_back(side.constant(z->value));
        for (auto z : z_tmp) tmp.push_back(side.constant(z->value));
        breakdown->fd_spatial =
            static_cast<double>(loss_fd_g(side, sp, w)->value(0, 0));
        breakdown->fd_temporal =
            static_cast<double>(loss_fd_g(side, tmp, w)->value(0, 0));
    }
    if (breakdown) breakdown->total = static_cast<double>(total->value(0, 0));
    return total;
}

// ---------------------------------------------------------------------------
// value-level wrappers

template <class Real>
double loss_con(const std::vector<Mat<Real>>& zs, double kappa, double eta) {
    Graph<Real> g;
    std::vector<typename Graph<Real>::N> nodes;
    for (const auto& z : zs) nodes.push_back(g.constant(z));
    return static_cast<double>(loss_con_node(g, nodes, kappa, eta)->value(0, 0));
}

template <class Real>
double term_variance(const Mat<Real>& z, double gamma, double epsilon) {
    Graph<Real> g;
    return static_cast<double>(term_variance_g(g, g.constant(z), gamma, epsilon)->value(0, 0));
}

template <class Real>
double term_autocov(const Mat<Real>& z) {
    Graph<Real> g;
    return static_cast<double>(term_autocov_g(g, g.constant(z))->value(0, 0));
}

template <class Real>
double term_xcorr(const Mat<Real>& za, const Mat<Real>& zb) {
    Graph<Real> g;
    return static_cast<double>(term_xcorr_g(g, g.constant(za), g.constant(zb))->value(0, 0));
}

template <class Real>
double loss_sep(const std::vector<Mat<Real>>& zs, const LossWeights& w) {
    Graph<Real> g;
    std::vector<typename Graph<Real>::N> nodes;
    for (const auto& z : zs) nodes.push_back(g.constant(z));
    return static_cast<double>(loss_sep_g(g, nodes, w)->value(0, 0));
}

template <class Real>
double loss_fd(const std::vector<Mat<Real>>& zs, const LossWeights& w) {
    Graph<Real> g;
    std::vector<typename Graph<Real>::N> nodes;
    for (const auto& z : zs) nodes.push_back(g.constant(z));
    return static_cast<double>(loss_fd_g(g, nodes, w)->value(0, 0));
}

template <class Real>
TotalBreakdown loss_total(const std::vector<ProjectionSet<Real>>& sets, const LossWeights& w) {
    Graph<Real> g;
    std::vector<typename Graph<Real>::N> zi, zs, zt;
    for (const auto& s : sets) {
        zi.push_back(g.constant(s.z));
        zs.push_back(g.constant(s.z_s));
        zt.push_back(g.constant(s.z_t));
    }
    TotalBreakdown b;
    loss_total_g(g, zi, zs, zt, w, &b);
    return b;
}

}  // namespace usdrl::mgfd
