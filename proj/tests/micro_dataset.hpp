#pragma once

// A 20-sequence, 2-frame dataset whose 40 image embeddings sit in three tight
// orthogonal groups, with brute-force reimplementations of every score.

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include <Eigen/Core>

#include "trove/evalkit.hpp"
#include "trove/syndata.hpp"
#include "trove/trove.hpp"

namespace micro {

inline constexpr int kSeqs = 20;
inline constexpr int kLen = 2;
inline constexpr int kImages = kSeqs * kLen;

// Hand cluster of each image: 0 = feature group, 1 = plain, 2 = plain second frame.
inline int hand_cluster(int image) {
    const int s = image / kLen, f = image % kLen;
    const bool feature_seq = s == 0 || s == 4 || s == 8 || s == 12 || s == 1 || s == 5 || s == 9 || s == 2;
    if (f == 0) return feature_seq ? 0 : 1;
    return s % 2 == 0 ? 2 : 1;
}

inline int label_of(int s) { return s % 4; }

inline int predicted_of(int s) {
    if (s == 0 || s == 4 || s == 8) return 1;  // North with the feature, called South
    if (s == 6) return 3;
    if (s == 19) return 0;
    return label_of(s);
}

inline Eigen::MatrixXd embeddings() {
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(4, kImages);
    for (int i = 0; i < kImages; ++i) {
        e(hand_cluster(i), i) = 1.0;
        e(3, i) = 0.01 * (i % 5);
    }
    return e;
}

inline trove::SplitAnalysis analysis() {
    trove::SplitAnalysis a;
    a.seq_len = kLen;
    a.dynamic_logits.resize(trove::kNumClasses, kSeqs);
    a.static_logits.resize(trove::kNumClasses, kImages);
    for (int s = 0; s < kSeqs; ++s) {
        a.labels.push_back(label_of(s));
        a.sequence_ids.push_back(static_cast<std::uint32_t>(s));
        for (int c = 0; c < trove::kNumClasses; ++c)
            a.dynamic_logits(c, s) = c == predicted_of(s) ? 2.0f + 0.25f * (s % 3) : 0.5f * ((s + c) % 3);
    }
    for (int i = 0; i < kImages; ++i)
        for (int c = 0; c < trove::kNumClasses; ++c) {
            float v = 0.25f * ((i + 2 * c) % 5);
            if (hand_cluster(i) == 0 && c == 1) v += 1.5f;
            a.static_logits(c, i) = v;
        }
    a.static_embeddings = embeddings().cast<float>();
    a.sequence_embeddings = Eigen::MatrixXf::Ones(4, kSeqs);
    return a;
}

inline trove::Split split() {
    trove::Split sp;
    sp.name = "micro";
    for (int s = 0; s < kSeqs; ++s) {
        trove::SequenceSample q;
        q.id = static_cast<std::uint32_t>(s);
        q.label = trove::label_from_index(label_of(s));
        for (int f = 0; f < kLen; ++f) q.feature_flags.push_back(hand_cluster(s * kLen + f) == 0);
        sp.sequences.push_back(q);
    }
    return sp;
}

// Maps report cluster ids to hand groups; empty when the partitions differ.
inline std::map<int, int> cluster_to_hand(const std::vector<int>& assignment) {
    std::map<int, int> m;
    for (int i = 0; i < kImages; ++i) {
        auto [it, fresh] = m.emplace(assignment[i], hand_cluster(i));
        if (!fresh && it->second != hand_cluster(i)) return {};
    }
    return m.size() == 3 ? m : std::map<int, int>{};
}

inline double softmax_at(const Eigen::MatrixXf& logits, int col, int cls, double t) {
    double mx = -1e300;
    for (int c = 0; c < logits.rows(); ++c) mx = std::max(mx, logits(c, col) / t);
    double z = 0;
    for (int c = 0; c < logits.rows(); ++c) z += std::exp(logits(c, col) / t - mx);
    return std::exp(logits(cls, col) / t - mx) / z;
}

struct OracleScore {
    bool defined = false;
    double ecs = 0, sbs = 0;
};

// ECS and SBS for images carrying group id `g` under `groups`.
inline OracleScore oracle_scores(const trove::SplitAnalysis& a, const std::vector<int>& groups, int g, int y, double t) {
    int with_n = 0, with_ok = 0, without_n = 0, without_ok = 0;
    double sbs_sum = 0;
    int wrong = 0;
    for (int s = 0; s < kSeqs; ++s) {
        if (a.labels[s] != y) continue;
        bool touch = false;
        for (int f = 0; f < kLen; ++f) touch |= groups[s * kLen + f] == g;
        int pred = 0;
        a.dynamic_logits.col(s).maxCoeff(&pred);
        (touch ? with_n : without_n) += 1;
        (touch ? with_ok : without_ok) += pred == y;
        if (pred == y) continue;
        for (int f = 0; f < kLen; ++f)
            if (groups[s * kLen + f] == g) {
                sbs_sum += softmax_at(a.static_logits, s * kLen + f, pred, t);
                ++wrong;
            }
    }
    OracleScore o;
    if (with_n == 0 || without_n == 0 || wrong == 0) return o;
    o.defined = true;
    o.ecs = static_cast<double>(without_ok) / without_n - static_cast<double>(with_ok) / with_n;
    o.sbs = sbs_sum / wrong;
    return o;
}

// Chi-square over the 2x2 (South vs other) x (feature vs none) sequence table.
inline double oracle_cramers_v(const trove::Split& sp) {
    double n[2][2] = {{0, 0}, {0, 0}};
    for (const auto& q : sp.sequences) n[q.label == trove::MotionLabel::South ? 0 : 1][q.has_feature() ? 0 : 1] += 1;
    const double total = n[0][0] + n[0][1] + n[1][0] + n[1][1];
    double chi = 0;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            const double e = (n[i][0] + n[i][1]) * (n[0][j] + n[1][j]) / total;
            chi += (n[i][j] - e) * (n[i][j] - e) / e;
        }
    return std::sqrt(chi / total);
}

inline double oracle_precision(const std::vector<int>& ids, const std::vector<std::uint8_t>& truth, int k) {
    const int m = std::min<int>(k, static_cast<int>(ids.size()));
    if (m == 0) return 0.0;
    int hits = 0;
    for (int i = 0; i < m; ++i) hits += truth[ids[i]];
    return static_cast<double>(hits) / m;
}

}  // namespace micro
