#pragma once

// Discovery of error-inducing static feature biases: image-level embeddings
// from static (replicated-frame) sequences are clustered, and every
// (cluster, class) pair is scored by how much cluster membership hurts
// accuracy on the class (error contribution) plus how confidently the
// static sequences alone predict the wrong label (static bias).

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "trove/clustering.hpp"
#include "trove/common.hpp"
#include "trove/model.hpp"

namespace trove {

/// Model outputs over one split. Image id = sequence index * seq_len + frame.
struct SplitAnalysis {
    int seq_len = 0;
    std::vector<int> labels;                // per sequence
    std::vector<std::uint32_t> sequence_ids;
    Eigen::MatrixXf dynamic_logits;         // kNumClasses x N
    Eigen::MatrixXf sequence_embeddings;    // embed_dim x N
    Eigen::MatrixXf static_embeddings;      // embed_dim x N*seq_len
    Eigen::MatrixXf static_logits;          // kNumClasses x N*seq_len

    std::size_t sequences() const { return labels.size(); }
    std::size_t images() const { return static_cast<std::size_t>(static_logits.cols()); }
    int predicted(std::size_t seq) const;
};

SplitAnalysis analyze_split(const TemporalModel& model, const FeatureBank& bank);

struct ImageRef {
    std::uint32_t sequence = 0;  // index within the split
    int frame = 0;
};

struct ImageEmbeddings {
    Eigen::MatrixXd embeddings;  // dim x images
    std::vector<ImageRef> index;
};

ImageEmbeddings extract_image_embeddings(const TemporalModel& model, const FeatureBank& bank);

struct Temperature {
    double value = 1.0;
};

double mean_nll(const Eigen::MatrixXd& logits, std::span<const int> labels, double temperature);

/// Golden-section search for the NLL-minimizing temperature in [0.05, 20]
/// to 1e-3. Constant logits make the NLL flat; the lower bound is returned.
Temperature fit_temperature(const Eigen::MatrixXd& logits, std::span<const int> labels);

std::array<double, kNumClasses> softmax(const Eigen::Ref<const Eigen::VectorXd>& logits, double temperature = 1.0);

struct PredictionRecord {
    std::uint32_t sequence_id = 0;
    int label = 0;
    int predicted = 0;
    Logits dynamic_logits{};
    std::vector<Logits> static_logits;                          // per frame, raw
    std::vector<std::array<double, kNumClasses>> static_probs;  // per frame, calibrated
    std::vector<int> image_ids;
};

std::vector<PredictionRecord> build_records(const SplitAnalysis& a, Temperature t);

struct ScoreOutcome {
    std::optional<double> value;
    std::string skip_reason;
    int with_count = 0;     // ECS: label-y sequences touching the cluster; SBS: |C_wrong|
    int without_count = 0;  // ECS: label-y sequences not touching the cluster
};

/// acc(label y, no image in cluster) - acc(label y, >= 1 image in cluster).
ScoreOutcome compute_ecs(std::span<const PredictionRecord> records, std::span<const int> image_cluster, int cluster,
                         int y);

/// Mean calibrated static probability at the parent's wrong prediction over
/// cluster images whose parent has label y and is mispredicted.
ScoreOutcome compute_sbs(std::span<const PredictionRecord> records, std::span<const int> image_cluster, int cluster,
                         int y, Temperature t);

enum class RankingMode { Full, SbsOnly };
std::string_view ranking_mode_name(RankingMode m);

struct BiasCandidate {
    int cluster = 0;
    int label = 0;
    double ecs = 0.0;
    double sbs = 0.0;
    double trove_score = 0.0;  // ecs + sbs
    int cluster_images = 0;
    int wrong_images = 0;
    int sequences_with = 0;
    int sequences_without = 0;
    std::vector<int> members;  // image ids, nearest to the centroid first
};

struct SkippedCandidate {
    int cluster = 0;
    int label = 0;
    std::string reason;
};

struct DiscoverOptions {
    std::vector<int> k_range = default_k_range();
    std::uint64_t seed = 0;
    int max_silhouette_points = 2000;
    int kmeans_restarts = 5;  // k-means++ seedings per k; the lowest inertia is kept
    double ecs_threshold = 0.1;
    double sbs_threshold = 1.0 / kNumClasses;
    RankingMode mode = RankingMode::Full;
};

struct BiasReport {
    RankingMode mode = RankingMode::Full;
    std::array<std::vector<BiasCandidate>, kNumClasses> per_class;
    std::vector<BiasCandidate> scored;  // every scorable pair before filtering
    std::vector<SkippedCandidate> skipped;
    ClusterModel clusters;
    Temperature temperature;
    double silhouette = 0.0;
    std::vector<std::pair<int, double>> k_scores;
    bool silhouette_subsampled = false;
    int silhouette_points = 0;
    double ecs_threshold = 0.1;
    double sbs_threshold = 0.25;
    nlohmann::json provenance = nlohmann::json::object();
};

/// Embedding-level entry point: accepts externally produced image embeddings
/// (dim x N*seq_len) with the matching analysis of dynamic/static logits.
BiasReport discover_from_analysis(const SplitAnalysis& a, const Eigen::MatrixXd& image_embeddings,
                                  const DiscoverOptions& opt);

BiasReport discover(const TemporalModel& model, const FeatureBank& validation, const DiscoverOptions& opt);

/// Re-filters and re-sorts the scored pairs of a report under another mode.
BiasReport with_ranking(const BiasReport& report, RankingMode mode);

std::vector<int> rank_images(const BiasReport& report, int y);

/// Distinct clusters ordered by their best candidate score across classes.
std::vector<std::pair<int, double>> top_clusters(const BiasReport& report, int top_k);

nlohmann::json to_json(const BiasReport& report);
void save_report(const BiasReport& report, const SplitAnalysis& a, const std::filesystem::path& dir);
BiasReport load_report(const std::filesystem::path& dir);

}  // namespace trove
