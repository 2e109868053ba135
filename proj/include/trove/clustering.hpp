#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace trove {

struct ClusterModel {
    Eigen::MatrixXd centroids;     // dim x k, unit columns
    std::vector<int> assignment;   // one cluster id per input column
    std::vector<double> similarity;  // cosine to the assigned centroid
    int k = 0;
    int requested_k = 0;
    double inertia = 0.0;          // mean cosine distance to the assigned centroid
    std::vector<double> objective_history;  // inertia after every assignment step
    int iterations = 0;
    bool degenerate = false;       // fewer than requested_k non-empty clusters remained

    /// Nearest-centroid assignment of unit or non-unit columns.
    std::vector<int> assign(const Eigen::MatrixXd& points) const;
};

/// Unit-normalizes columns; throws on a zero column.
Eigen::MatrixXd normalize_embeddings(const Eigen::MatrixXd& points);

/// k-means++ seeding with squared cosine distance.
Eigen::MatrixXd kmeanspp_init(const Eigen::MatrixXd& unit_points, int k, std::uint64_t seed);

/// Lloyd iterations on the sphere from given initial centroids.
ClusterModel spherical_kmeans_from(const Eigen::MatrixXd& unit_points, Eigen::MatrixXd centroids, int max_iter = 300);

ClusterModel spherical_kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int max_iter = 300);

/// Mean silhouette with cosine distance; singletons contribute 0.
double silhouette(const Eigen::MatrixXd& points, std::span<const int> assignment);

struct KSelection {
    ClusterModel model;
    std::vector<std::pair<int, double>> scores;  // (k, silhouette) per fitted k
    double best_silhouette = 0.0;
    bool subsampled = false;
    int silhouette_points = 0;
};

/// Fits every k (best inertia over `restarts` seedings) and keeps the model with
/// the highest silhouette, preferring the smaller k when scores agree within 1e-12.
KSelection select_k(const Eigen::MatrixXd& points, std::span<const int> k_range, std::uint64_t seed,
                    int max_silhouette_points = 2000, int restarts = 1);

std::vector<int> default_k_range();

void save_cluster_model(const ClusterModel& m, const std::filesystem::path& dir);
ClusterModel load_cluster_model(const std::filesystem::path& dir);

}  // namespace trove
