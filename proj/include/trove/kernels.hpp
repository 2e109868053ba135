#pragma once

// Data-parallel inner loops. Each OpenMP kernel has a plain serial
// reference with the same contract, kept for tests and benchmarks.
// Every output element is computed independently of thread count.

#include <span>

#include <Eigen/Core>

#include "trove/image.hpp"

namespace trove::kernels {

/// Block-mean downsampling by `factor` into H/f * W/f * 3 values (row, col, channel order).
void downsample(const ImageGrid& img, int factor, std::span<float> out);

/// out.col(i) = projection * downsample(images[i]).
void project_images(const Eigen::MatrixXf& projection, int factor, std::span<const ImageGrid> images,
                    Eigen::Ref<Eigen::MatrixXf> out);
void project_images_serial(const Eigen::MatrixXf& projection, int factor, std::span<const ImageGrid> images,
                           Eigen::Ref<Eigen::MatrixXf> out);

/// For unit columns of `points` and `centroids`, labels[i] = argmax_j cos(points_i, centroids_j)
/// (lowest index on ties) and sims[i] the maximal cosine.
void assign_nearest(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids, std::span<int> labels,
                    std::span<double> sims);
void assign_nearest_serial(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids,
                           std::span<int> labels, std::span<double> sims);

/// Per-point silhouette value with cosine distance 1 - <x_i, x_j> over unit columns.
/// Points alone in their cluster get 0.
void silhouette_values(const Eigen::MatrixXd& points, std::span<const int> labels, int k, std::span<double> out);
void silhouette_values_serial(const Eigen::MatrixXd& points, std::span<const int> labels, int k,
                              std::span<double> out);

}  // namespace trove::kernels
