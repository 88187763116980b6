#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mcl/ops.hpp"

namespace mcl {

/// Which (query level, target level) pairs carry positives.
enum class MatchMode {
    ToLargest,       // (a) every level targets the full-resolution view
    SameLevel,       // (b) counterpart level
    AdjacentLevels,  // (c) |q - t| <= 1
    DenseAll,        // (d) all pairs
};

inline char mode_letter(MatchMode m) {
    switch (m) {
        case MatchMode::ToLargest: return 'a';
        case MatchMode::SameLevel: return 'b';
        case MatchMode::AdjacentLevels: return 'c';
        case MatchMode::DenseAll: return 'd';
    }
    return '?';
}

inline MatchMode parse_mode(const std::string& s) {
    if (s == "a") return MatchMode::ToLargest;
    if (s == "b") return MatchMode::SameLevel;
    if (s == "c") return MatchMode::AdjacentLevels;
    if (s == "d") return MatchMode::DenseAll;
    throw std::invalid_argument("unknown match mode '" + s + "' (expected a, b, c or d)");
}

struct LossConfig {
    double tau = 0.2;
    MatchMode mode = MatchMode::ToLargest;
    std::vector<double> level_weights;  // empty: 1 / 2^(i+1) for query level i
    bool symmetric = true;
    bool adjacent_include_self = true;

    double weight(int level) const {
        if (!level_weights.empty()) return level_weights.at(static_cast<std::size_t>(level));
        return 1.0 / static_cast<double>(std::size_t{1} << (level + 1));
    }

    void validate() const {
        if (!(tau > 0)) throw std::invalid_argument("LossConfig: tau must be > 0");
        for (double w : level_weights)
            if (!(w > 0)) throw std::invalid_argument("LossConfig: level weights must be positive");
    }
};

/// Level 0 is the full-resolution (s = 0) view. Pairs come ordered by
/// query level, then target level.
inline std::vector<std::pair<int, int>> pair_levels(MatchMode mode, int S, bool adjacent_include_self = true) {
    if (S < 1) throw std::invalid_argument("pair_levels: S must be >= 1");
    std::vector<std::pair<int, int>> out;
    for (int q = 0; q < S; ++q) {
        for (int t = 0; t < S; ++t) {
            bool keep = false;
            switch (mode) {
                case MatchMode::ToLargest: keep = t == 0; break;
                case MatchMode::SameLevel: keep = t == q; break;
                case MatchMode::AdjacentLevels:
                    keep = std::abs(q - t) <= 1 && (adjacent_include_self || q != t || S == 1);
                    break;
                case MatchMode::DenseAll: keep = true; break;
            }
            if (keep) out.emplace_back(q, t);
        }
    }
    return out;
}

/// -log(exp(u.v+/tau) / (exp(u.v+/tau) + sum exp(u.v-/tau))) for one query
/// u [D], positive v_pos [D] and negatives v_negs [K, D]. With K = 0 the
/// value is 0 and `degenerate` is set.
template <class T>
Var<T> info_nce(Var<T> u, Var<T> v_pos, Var<T> v_negs, T tau, bool* degenerate = nullptr) {
    detail::require(tau > 0, "info_nce: tau must be > 0");
    const std::size_t D = u.value().size();
    detail::require(v_pos.value().size() == D, "info_nce: positive dimension mismatch");
    detail::require(v_negs.shape().size() == 2 && v_negs.shape()[1] == D, "info_nce: negatives must be [K, D]");
    if (degenerate) *degenerate = v_negs.shape()[0] == 0;
    Var<T> targets = concat_rows<T>({reshape(v_pos, {1, D}), v_negs});
    Var<T> logits = scale(matmul(reshape(u, {1, D}), targets, true), T(1) / tau);
    return softmax_cross_entropy(logits, {0});
}

/// Mean InfoNCE of query rows U [B, D] against target rows V [B, D]; row b
/// of V is the positive of row b of U and the other rows are its negatives.
template <class T>
Var<T> level_pair_loss(Var<T> U, Var<T> V, T tau) {
    detail::require(U.shape().size() == 2 && U.shape() == V.shape(), "level_pair_loss: U and V must both be [B, D]");
    const std::size_t B = U.shape()[0];
    if (B < 2) throw std::invalid_argument("level_pair_loss: need B >= 2 for negatives, got B=" + std::to_string(B));
    std::vector<int> labels(B);
    for (std::size_t b = 0; b < B; ++b) labels[b] = static_cast<int>(b);
    return softmax_cross_entropy(scale(matmul(U, V, true), T(1) / tau), labels);
}

/// Per-level latents; an invalid Var marks a level that was not produced.
template <class T>
struct LatentSet {
    std::vector<Var<T>> levels;
};

template <class T>
struct LossBreakdown {
    Var<T> total;
    std::vector<double> per_level;  // unweighted sum of the terms whose query level is i
    double pos_cos = 0;             // mean u.v+ over every term
    double neg_cos = 0;             // mean u.v- over every term
};

/// L = L_u + L_v, L_u = sum_{(q,t)} w(q) * level_pair_loss(U1[q], V2[t]) and
/// L_v the same with the views swapped.
template <class T>
LossBreakdown<T> total_loss(const LatentSet<T>& U1, const LatentSet<T>& V1, const LatentSet<T>& U2,
                            const LatentSet<T>& V2, const LossConfig& cfg, int S) {
    cfg.validate();
    const auto pairs = pair_levels(cfg.mode, S, cfg.adjacent_include_self);
    auto fetch = [](const LatentSet<T>& set, int level, const char* which) {
        if (level >= static_cast<int>(set.levels.size()) || !set.levels[static_cast<std::size_t>(level)].valid())
            throw std::invalid_argument(std::string("total_loss: level ") + std::to_string(level) + " missing from " + which);
        return set.levels[static_cast<std::size_t>(level)];
    };
    LossBreakdown<T> out;
    out.per_level.assign(static_cast<std::size_t>(S), 0.0);
    std::vector<Var<T>> terms;
    std::vector<T> weights;
    double pos = 0, neg = 0;
    std::size_t nterms = 0;
    auto add_term = [&](Var<T> U, Var<T> V, int q) {
        Var<T> l = level_pair_loss(U, V, static_cast<T>(cfg.tau));
        terms.push_back(l);
        weights.push_back(static_cast<T>(cfg.weight(q)));
        out.per_level[static_cast<std::size_t>(q)] += static_cast<double>(l.value()[0]);
        const Tensor<T>& u = U.value();
        const Tensor<T>& v = V.value();
        const std::size_t B = u.dim(0), D = u.dim(1);
        double p = 0, n = 0;
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = 0; j < B; ++j) {
                double d = 0;
                for (std::size_t k = 0; k < D; ++k) d += static_cast<double>(u.at(i, k)) * static_cast<double>(v.at(j, k));
                (i == j ? p : n) += d;
            }
        pos += p / static_cast<double>(B);
        neg += n / static_cast<double>(B * (B - 1));
        ++nterms;
    };
    for (auto [q, t] : pairs) add_term(fetch(U1, q, "U1"), fetch(V2, t, "V2"), q);
    if (cfg.symmetric)
        for (auto [q, t] : pairs) add_term(fetch(U2, q, "U2"), fetch(V1, t, "V1"), q);
    out.total = weighted_sum(terms, weights);
    out.pos_cos = pos / static_cast<double>(nterms);
    out.neg_cos = neg / static_cast<double>(nterms);
    return out;
}

}  // namespace mcl
