// Straight-line scalar reference implementations of every decorrelation loss
// term. Plain double loops over nested vectors, kept independent of the
// library's matrix and graph code on purpose: these are the ground truth the
// implementation is checked against.
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "usdrl/mgfd.hpp"

namespace oracles {

using Rows = std::vector<std::vector<double>>;  // [N][D]

inline double oracle_loss_con(const std::vector<Rows>& zs, double kappa, double eta) {
    const std::size_t k = zs.size();
    const std::size_t n = zs[0].size();
    const std::size_t d = zs[0][0].size();
    double total = 0;
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t row = 0; row < n; ++row) {
            // kappa * || z_a - mean_over_copies ||
            double sq = 0;
            for (std::size_t j = 0; j < d; ++j) {
                double mean = 0;
                for (std::size_t b = 0; b < k; ++b) mean += zs[b][row][j];
                mean /= static_cast<double>(k);
                const double diff = zs[a][row][j] - mean;
                sq += diff * diff;
            }
            double expr = kappa * std::sqrt(sq);
            // eta * sum over other copies of (1 - cosine)
            if (eta != 0) {
                for (std::size_t b = 0; b < k; ++b) {
                    if (b == a) continue;
                    double dot = 0, na = 0, nb = 0;
                    for (std::size_t j = 0; j < d; ++j) {
                        dot += zs[a][row][j] * zs[b][row][j];
                        na += zs[a][row][j] * zs[a][row][j];
                        nb += zs[b][row][j] * zs[b][row][j];
                    }
                    expr += eta * (1.0 - dot / (std::sqrt(na) * std::sqrt(nb)));
                }
            }
            total += expr;
        }
    }
    return total / static_cast<double>(k) / static_cast<double>(n);
}

inline double oracle_variance(const Rows& z, double gamma, double epsilon) {
    const std::size_t n = z.size(), d = z[0].size();
    double total = 0;
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0;
        for (std::size_t i = 0; i < n; ++i) mean += z[i][j];
        mean /= static_cast<double>(n);
        double var = 0;
        for (std::size_t i = 0; i < n; ++i) var += (z[i][j] - mean) * (z[i][j] - mean);
        var /= static_cast<double>(n - 1);
        const double hinge = gamma - std::sqrt(var + epsilon);
        total += hinge > 0 ? hinge : 0;
    }
    return total / static_cast<double>(d);
}

inline double oracle_autocov(const Rows& z) {
    const std::size_t n = z.size(), d = z[0].size();
    std::vector<double> mean(d, 0);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < n; ++i) mean[j] += z[i][j];
        mean[j] /= static_cast<double>(n);
    }
    double total = 0;
    for (std::size_t p = 0; p < d; ++p)
        for (std::size_t q = 0; q < d; ++q) {
            if (p == q) continue;
            double cov = 0;
            for (std::size_t i = 0; i < n; ++i)
                cov += (z[i][p] - mean[p]) * (z[i][q] - mean[q]);
            cov /= static_cast<double>(n - 1);
            total += cov * cov;
        }
    return total / static_cast<double>(d);
}

inline double oracle_xcorr(const Rows& za, const Rows& zb) {
    const std::size_t n = za.size(), d = za[0].size();
    auto standardized = [&](const Rows& z) {
        Rows out(n, std::vector<double>(d));
        for (std::size_t j = 0; j < d; ++j) {
            double mean = 0;
            for (std::size_t i = 0; i < n; ++i) mean += z[i][j];
            mean /= static_cast<double>(n);
            double norm = 0;
            for (std::size_t i = 0; i < n; ++i) norm += (z[i][j] - mean) * (z[i][j] - mean);
            norm = std::sqrt(norm);
            for (std::size_t i = 0; i < n; ++i) out[i][j] = (z[i][j] - mean) / norm;
        }
        return out;
    };
    const Rows a = standardized(za);
    const Rows b = standardized(zb);
    double total = 0;
    for (std::size_t p = 0; p < d; ++p)
        for (std::size_t q = 0; q < d; ++q) {
            if (p == q) continue;
            double x = 0;
            for (std::size_t i = 0; i < n; ++i) x += a[i][p] * b[i][q];
            total += x * x;
        }
    return total;
}

inline double oracle_loss_sep(const std::vector<Rows>& zs, const usdrl::mgfd::LossWeights& w) {
    double total = 0;
    for (std::size_t a = 0; a < zs.size(); ++a) {
        total += w.mu * oracle_variance(zs[a], w.gamma, w.epsilon);
        total += w.autocov * oracle_autocov(zs[a]);
        for (std::size_t b = a + 1; b < zs.size(); ++b)
            total += w.lambda * oracle_xcorr(zs[a], zs[b]);
    }
    return total;
}

inline double oracle_loss_fd(const std::vector<Rows>& zs, const usdrl::mgfd::LossWeights& w) {
    return oracle_loss_con(zs, w.kappa, w.eta) + oracle_loss_sep(zs, w);
}

inline double oracle_loss_total(const std::vector<Rows>& z_inst, const std::vector<Rows>& z_sp,
                                const std::vector<Rows>& z_tmp,
                                const usdrl::mgfd::LossWeights& w) {
    return oracle_loss_fd(z_inst, w) +
           w.tau * (oracle_loss_fd(z_sp, w) + oracle_loss_fd(z_tmp, w));
}

// conversions for driving the library API from oracle-shaped data

inline usdrl::Mat<double> to_mat(const Rows& rows) {
    usdrl::Mat<double> m(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[0].size(); ++j) m(i, j) = rows[i][j];
    return m;
}

inline Rows random_rows(std::size_t n, std::size_t d, usdrl::Rng& rng, double scale = 1.0) {
    Rows out(n, std::vector<double>(d));
    for (auto& row : out)
        for (auto& v : row) v = scale * rng.normal();
    return out;
}

}  // namespace oracles
