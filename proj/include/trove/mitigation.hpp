#pragma once

// Per-cluster class-embedding adjustments for a frozen model. A prompt adds
// a learned context vector to each class embedding; sequences with a frame
// in a prompted cluster are scored against the adjusted embeddings.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "trove/clustering.hpp"
#include "trove/model.hpp"
#include "trove/trove.hpp"

namespace trove {

struct ClusterPrompt {
    int cluster = 0;
    double trove_score = 0.0;
    Eigen::MatrixXf context;  // embed_dim x kNumClasses
    int member_sequences = 0;
    double base_accuracy = 0.0;   // member accuracy before fitting
    double fit_accuracy = 0.0;    // member accuracy of the kept checkpoint
    int best_epoch = 0;           // 0 = zero context kept
};

struct PromptOptions {
    int epochs = 20;
    double learning_rate = 0.002;
    double momentum = 0.9;
    int batch_size = 32;
    int min_members = 10;
    bool class_balanced = true;
    std::uint64_t seed = 0;
};

/// Unit-normalized columns of class_embeddings + context.
Eigen::MatrixXf prompted_class_embeddings(const Eigen::MatrixXf& class_embeddings, const Eigen::MatrixXf& context);

/// Indices of sequences with at least one frame assigned to `cluster`.
std::vector<std::size_t> member_sequences(std::span<const int> image_cluster, int seq_len, std::size_t sequences,
                                          int cluster);

struct PromptFit {
    std::optional<ClusterPrompt> prompt;
    std::string skip_reason;
};

/// Fits a prompt on the member sequences of `cluster` within an analyzed split
/// whose images carry the cluster assignment `image_cluster`. The checkpoint
/// with the best member accuracy is kept, starting from the zero context.
PromptFit learn_cluster_prompt(const TemporalModel& model, const SplitAnalysis& a, std::span<const int> image_cluster,
                               int cluster, double trove_score, const PromptOptions& opt);

/// Cross-entropy of cosine logits against prompted class embeddings and its
/// gradient with respect to the context. Exposed for gradient checks.
double prompt_loss_and_gradient(const TemporalModel& model, const Eigen::MatrixXf& embeddings,
                                std::span<const int> labels, std::span<const double> weights,
                                const Eigen::MatrixXf& context, Eigen::MatrixXf* grad);

struct PromptSet {
    std::vector<ClusterPrompt> prompts;  // descending trove_score
    std::vector<std::pair<int, std::string>> skipped;
};

/// Fits prompts for the report's top-k clusters on the split the report was built from.
PromptSet learn_prompts(const TemporalModel& model, const SplitAnalysis& discovery, const BiasReport& report,
                        int top_k, const PromptOptions& opt);

struct RoutedPrediction {
    Eigen::MatrixXf logits;      // kNumClasses x N
    std::vector<int> prompt;     // index into PromptSet::prompts, -1 for the base path
};

/// Routes each sequence by nearest-centroid assignment of its frames' static
/// embeddings; the highest-scoring matching prompt wins.
RoutedPrediction route_predict(const TemporalModel& model, const PromptSet& prompts, const ClusterModel& clusters,
                               const SplitAnalysis& a);

struct SubsetAccuracy {
    int count = 0;
    double base = 0.0;
    double mitigated = 0.0;
};

struct MitigationTable {
    int affected_class = -1;
    SubsetAccuracy overall;            // sequences touching a prompted cluster
    SubsetAccuracy label;              // ... with label = affected class
    SubsetAccuracy label_with_feature; // ... that also carry the planted feature
    SubsetAccuracy all;                // entire split
    int prompts = 0;
};

MitigationTable evaluate_mitigation(const TemporalModel& model, const PromptSet& prompts, const ClusterModel& clusters,
                                    const SplitAnalysis& a, const Split& split, int affected_class);

void save_prompts(const PromptSet& prompts, const std::filesystem::path& file);
PromptSet load_prompts(const std::filesystem::path& file);

/// Default prompt file stored beside a model checkpoint.
std::filesystem::path prompts_path_for(const std::filesystem::path& model_file);

}  // namespace trove
