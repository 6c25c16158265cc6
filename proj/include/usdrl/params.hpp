#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "usdrl/autograd.hpp"
#include "usdrl/rng.hpp"
#include "usdrl/tensor.hpp"

namespace usdrl {

enum class InitKind { FanInUniform, Zero, One };

struct ParamDecl {
    std::string name;
    std::size_t rows = 0, cols = 0;
    InitKind init = InitKind::FanInUniform;
    bool buffer = false;   // buffers are tracked state, not optimized
    std::size_t fan = 0;   // fan-in for init scaling; 0 = use rows
};

/// Named, shaped learnable arrays. Insertion order is preserved so iteration,
/// serialization and optimizer state stay aligned.
template <class Real>
class ParamStore {
public:
    void add(const std::string& name, Mat<Real> value, bool buffer = false) {
        if (index_.count(name)) throw std::runtime_error("ParamStore: duplicate name " + name);
        index_[name] = entries_.size();
        entries_.push_back(Entry{name, std::move(value), buffer});
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Mat<Real>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::runtime_error("ParamStore: unknown name " + name);
        return entries_[it->second].value;
    }
    const Mat<Real>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::runtime_error("ParamStore: unknown name " + name);
        return entries_[it->second].value;
    }

    bool is_buffer(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::runtime_error("ParamStore: unknown name " + name);
        return entries_[it->second].buffer;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.name);
        return out;
    }

    std::size_t count() const { return entries_.size(); }
    std::size_t total_values() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }

    void validate_against(const std::vector<ParamDecl>& decls) const {
        if (decls.size() != entries_.size())
            throw std::runtime_error("ParamStore: declared " + std::to_string(decls.size()) +
                                     " arrays, store holds " + std::to_string(entries_.size()));
        for (const auto& d : decls) {
            const auto& m = at(d.name);
            if (m.rows() != d.rows || m.cols() != d.cols)
                throw std::runtime_error("ParamStore: '" + d.name + "' has shape [" +
                                         std::to_string(m.rows()) + "][" +
                                         std::to_string(m.cols()) + "], declared [" +
                                         std::to_string(d.rows) + "][" + std::to_string(d.cols) +
                                         "]");
            if (!m.all_finite())
                throw std::runtime_error("ParamStore: '" + d.name + "' holds non-finite values");
        }
    }

    template <class Other>
    ParamStore<Other> cast() const {
        ParamStore<Other> out;
        for (const auto& e : entries_)
            out.add(e.name, e.value.template cast<Other>(), e.buffer);
        return out;
    }

private:
    struct Entry {
        std::string name;
        Mat<Real> value;
        bool buffer;
    };
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<Entry> entries_;
};

/// Fills a store from declarations. Seeding is per-name, so the values of one
/// array do not depend on declaration order.
template <class Real>
ParamStore<Real> init_params(const std::vector<ParamDecl>& decls, std::uint64_t seed) {
    ParamStore<Real> store;
    for (const auto& d : decls) {
        Mat<Real> m(d.rows, d.cols);
        switch (d.init) {
            case InitKind::Zero: break;
            case InitKind::One: m.fill(Real(1)); break;
            case InitKind::FanInUniform: {
                Rng rng(mix_seed(seed, hash_name(d.name)));
                const double fan = static_cast<double>(d.fan ? d.fan : d.rows);
                const double bound = 1.0 / std::sqrt(fan);
                for (auto& v : m.vec()) v = static_cast<Real>(rng.uniform(-bound, bound));
                break;
            }
        }
        store.add(d.name, std::move(m), d.buffer);
    }
    return store;
}

/// Per-graph cache of parameter leaves so each array appears exactly once in
/// a graph (gradient accumulation relies on this).
template <class Real>
class ParamLeaves {
public:
    ParamLeaves(Graph<Real>& g, ParamStore<Real>& store) : g_(&g), store_(&store) {}

    typename Graph<Real>::N operator()(const std::string& name) {
        auto it = leaves_.find(name);
        if (it != leaves_.end()) return it->second;
        const bool buffer = store_->is_buffer(name);
        auto leaf = g_->leaf(store_->at(name), /*needs_grad=*/!buffer, name);
        leaves_[name] = leaf;
        return leaf;
    }

    /// Accumulated parameter gradients after backward, keyed by name.
    /// Buffers are skipped.
    void collect_grads(std::unordered_map<std::string, Mat<Real>>& sink) const {
        for (const auto& [name, node] : leaves_) {
            if (store_->is_buffer(name)) continue;
            auto it = sink.find(name);
            if (it == sink.end()) {
                sink.emplace(name, node->grad);
            } else {
                for (std::size_t i = 0; i < node->grad.size(); ++i) it->second[i] += node->grad[i];
            }
        }
    }

private:
    Graph<Real>* g_;
    ParamStore<Real>* store_;
    std::unordered_map<std::string, typename Graph<Real>::N> leaves_;
};

}  // namespace usdrl
