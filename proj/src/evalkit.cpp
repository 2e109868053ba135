#include "trove/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

namespace trove {

void RankedList::validate() const {
    std::unordered_set<int> seen;
    for (int id : ids)
        if (!seen.insert(id).second) throw Error("ranked list '" + method + "' repeats image " + std::to_string(id));
}

PrecisionResult precision_at_k(const RankedList& list, std::span<const std::uint8_t> truth, int k) {
    if (k < 1) throw Error("precision_at_k: k must be >= 1");
    PrecisionResult r;
    r.truncated = static_cast<std::size_t>(k) > list.ids.size();
    r.k = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(k), list.ids.size()));
    if (r.k == 0) return r;
    int hits = 0;
    for (int i = 0; i < r.k; ++i) {
        const int id = list.ids[static_cast<std::size_t>(i)];
        if (id < 0 || static_cast<std::size_t>(id) >= truth.size()) throw Error("precision_at_k: image id out of range");
        hits += truth[static_cast<std::size_t>(id)] != 0;
    }
    r.value = static_cast<double>(hits) / r.k;
    return r;
}

PrecisionResult r_precision(const RankedList& list, std::span<const std::uint8_t> truth) {
    const auto flagged = std::count_if(truth.begin(), truth.end(), [](auto f) { return f != 0; });
    if (flagged == 0) throw Error("r_precision: no flagged images");
    return precision_at_k(list, truth, static_cast<int>(flagged));
}

std::vector<std::uint8_t> image_truth(const Split& split) {
    std::vector<std::uint8_t> out;
    for (const auto& s : split.sequences) out.insert(out.end(), s.feature_flags.begin(), s.feature_flags.end());
    return out;
}

RankedList baseline_confidence(const SplitAnalysis& a) {
    const auto n = static_cast<Eigen::Index>(a.images());
    std::vector<double> conf(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto p = softmax(a.static_logits.col(i).cast<double>(), 1.0);
        conf[static_cast<std::size_t>(i)] = *std::max_element(p.begin(), p.end());
    }
    RankedList list{std::vector<int>(static_cast<std::size_t>(n)), "confidence"};
    std::iota(list.ids.begin(), list.ids.end(), 0);
    std::stable_sort(list.ids.begin(), list.ids.end(), [&](int x, int y) {
        return conf[static_cast<std::size_t>(x)] > conf[static_cast<std::size_t>(y)];
    });
    return list;
}

RankedList baseline_random(std::size_t images, std::uint64_t seed) {
    RankedList list{std::vector<int>(images), "random"};
    std::iota(list.ids.begin(), list.ids.end(), 0);
    Rng rng(seed);
    // Explicit Fisher-Yates: std::shuffle's draw sequence is implementation-defined.
    for (std::size_t i = images; i > 1; --i) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
        std::swap(list.ids[i - 1], list.ids[j]);
    }
    return list;
}

bool gate_passes(double task_gap, double image_gap, double sequence_gap) {
    return task_gap >= kGateThreshold && image_gap > kGateThreshold && sequence_gap > kGateThreshold;
}

TaskGate gate_task(const DatasetConfig& cfg, const TrainConfig& train_cfg) {
    DatasetConfig clean = cfg;
    clean.feature.kind = FeatureKind::None;
    const Dataset ds = generate_dataset(clean);

    const ModelConfig temporal_cfg = default_model_config(clean, true, derive_seed(train_cfg.seed, 11));
    const ModelConfig control_cfg = default_model_config(clean, false, derive_seed(train_cfg.seed, 13));
    const TemporalModel probe(temporal_cfg);
    const auto train_bank = build_feature_bank(probe.featurizer(), ds, ds.train);
    const auto val_bank = build_feature_bank(probe.featurizer(), ds, ds.val);
    const auto test_bank = build_feature_bank(probe.featurizer(), ds, ds.test);

    TaskGate g;
    g.temporal_accuracy = accuracy(train_on_features(temporal_cfg, train_bank, val_bank, train_cfg), test_bank);
    g.control_accuracy = accuracy(train_on_features(control_cfg, train_bank, val_bank, train_cfg), test_bank);
    g.gap = 100.0 * (g.temporal_accuracy - g.control_accuracy);
    g.pass = g.gap >= kGateThreshold;
    return g;
}

namespace {

double gap_pct(int clean_hit, int clean_n, int flag_hit, int flag_n) {
    if (clean_n == 0 || flag_n == 0) return std::numeric_limits<double>::quiet_NaN();
    return 100.0 * (static_cast<double>(clean_hit) / clean_n - static_cast<double>(flag_hit) / flag_n);
}

}  // namespace

GateResult gate_model(const SplitAnalysis& a, const Split& split, double task_gap) {
    if (split.size() != a.sequences()) throw Error("gate_model: split does not match the analysis");
    struct Tally {
        int img_clean = 0, img_clean_hit = 0, img_flag = 0, img_flag_hit = 0;
        int seq_clean = 0, seq_clean_hit = 0, seq_flag = 0, seq_flag_hit = 0;
    };
    std::array<Tally, kNumClasses> t{};
    for (std::size_t i = 0; i < split.size(); ++i) {
        const auto& s = split.sequences[i];
        const int y = index_of(s.label);
        auto& c = t[static_cast<std::size_t>(y)];
        const bool seq_hit = a.predicted(i) == y;
        if (s.has_feature()) {
            ++c.seq_flag;
            c.seq_flag_hit += seq_hit;
        } else {
            ++c.seq_clean;
            c.seq_clean_hit += seq_hit;
        }
        for (int f = 0; f < a.seq_len; ++f) {
            const auto id = static_cast<Eigen::Index>(i) * a.seq_len + f;
            const bool hit = argmax_column(a.static_logits, id) == y;
            if (s.feature_flags[static_cast<std::size_t>(f)]) {
                ++c.img_flag;
                c.img_flag_hit += hit;
            } else {
                ++c.img_clean;
                c.img_clean_hit += hit;
            }
        }
    }

    GateResult g;
    g.task_gap = task_gap;
    for (int y = 0; y < kNumClasses; ++y) {
        const auto& c = t[static_cast<std::size_t>(y)];
        auto& out = g.per_class[static_cast<std::size_t>(y)];
        out.image_gap = gap_pct(c.img_clean_hit, c.img_clean, c.img_flag_hit, c.img_flag);
        out.sequence_gap = gap_pct(c.seq_clean_hit, c.seq_clean, c.seq_flag_hit, c.seq_flag);
        out.flagged_sequences = c.seq_flag;
        out.clean_sequences = c.seq_clean;
    }

    const auto rank = [&](int y) {
        const auto& c = g.per_class[static_cast<std::size_t>(y)];
        const bool clears = c.image_gap > kGateThreshold && c.sequence_gap > kGateThreshold;
        return std::pair{clears ? 1 : 0, c.sequence_gap};
    };
    for (int y = 0; y < kNumClasses; ++y) {
        if (y == index_of(kBiasClass)) continue;
        const auto& c = g.per_class[static_cast<std::size_t>(y)];
        if (std::isnan(c.image_gap) || std::isnan(c.sequence_gap)) continue;
        if (g.affected_class < 0 || rank(y) > rank(g.affected_class)) g.affected_class = y;
    }
    if (g.affected_class >= 0) {
        const auto& c = g.per_class[static_cast<std::size_t>(g.affected_class)];
        g.image_gap = c.image_gap;
        g.sequence_gap = c.sequence_gap;
        g.pass = gate_passes(task_gap, g.image_gap, g.sequence_gap);
    }
    return g;
}

}  // namespace trove
