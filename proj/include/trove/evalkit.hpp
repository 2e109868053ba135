#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trove/model.hpp"
#include "trove/syndata.hpp"
#include "trove/trove.hpp"

namespace trove {

struct RankedList {
    std::vector<int> ids;
    std::string method;

    /// Throws on a duplicate id.
    void validate() const;
};

struct PrecisionResult {
    double value = 0.0;
    int k = 0;               // cutoff actually used
    bool truncated = false;  // list shorter than the requested k
};

/// Fraction of the first k ids whose truth flag is set. A list shorter than k
/// is scored over its full length and flagged as truncated; an empty list scores 0.
PrecisionResult precision_at_k(const RankedList& list, std::span<const std::uint8_t> truth, int k);

/// precision_at_k with k equal to the number of flagged images.
PrecisionResult r_precision(const RankedList& list, std::span<const std::uint8_t> truth);

/// Per-image feature flags in image-id order (sequence * seq_len + frame).
std::vector<std::uint8_t> image_truth(const Split& split);

/// All images sorted by descending max static softmax probability (T = 1), ties by id.
RankedList baseline_confidence(const SplitAnalysis& a);

/// Seeded uniform permutation of all image ids.
RankedList baseline_random(std::size_t images, std::uint64_t seed);

struct TaskGate {
    double temporal_accuracy = 0.0;
    double control_accuracy = 0.0;
    double gap = 0.0;  // percentage points
    bool pass = false;
};

/// Trains a temporal and a single-frame model on the feature-free version of
/// `cfg` and compares their test accuracy.
TaskGate gate_task(const DatasetConfig& cfg, const TrainConfig& train_cfg);

struct ClassGap {
    double image_gap = 0.0;     // percentage points; NaN when a side is empty
    double sequence_gap = 0.0;  // percentage points; NaN when a side is empty
    int flagged_sequences = 0;
    int clean_sequences = 0;
};

struct GateResult {
    double task_gap = 0.0;
    double image_gap = 0.0;
    double sequence_gap = 0.0;
    int affected_class = -1;  // -1 when no class has both gaps defined
    std::array<ClassGap, kNumClasses> per_class{};
    bool pass = false;
};

constexpr double kGateThreshold = 20.0;

bool gate_passes(double task_gap, double image_gap, double sequence_gap);

/// Bias gaps on a biased split. The affected class is chosen among non-bias
/// classes: those clearing both thresholds first, then the largest sequence gap.
GateResult gate_model(const SplitAnalysis& a, const Split& split, double task_gap);

}  // namespace trove
