#include "trove/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "trove/common.hpp"

namespace trove::kernels {

void downsample(const ImageGrid& img, int factor, std::span<float> out) {
    const int oh = img.height() / factor, ow = img.width() / factor;
    if (static_cast<int>(out.size()) != oh * ow * ImageGrid::kChannels)
        throw Error("downsample: output size mismatch");
    const float inv = 1.0f / static_cast<float>(factor * factor);
    const auto px = img.data();
    for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c)
            for (int ch = 0; ch < ImageGrid::kChannels; ++ch) {
                float acc = 0.f;
                for (int dr = 0; dr < factor; ++dr)
                    for (int dc = 0; dc < factor; ++dc)
                        acc += px[((static_cast<std::size_t>(r) * factor + dr) * img.width() + c * factor + dc) *
                                      ImageGrid::kChannels + ch];
                out[(static_cast<std::size_t>(r) * ow + c) * ImageGrid::kChannels + ch] = acc * inv;
            }
}

void project_images(const Eigen::MatrixXf& projection, int factor, std::span<const ImageGrid> images,
                    Eigen::Ref<Eigen::MatrixXf> out) {
    const auto n = static_cast<Eigen::Index>(images.size());
    if (out.cols() != n || out.rows() != projection.rows()) throw Error("project_images: output shape mismatch");
#pragma omp parallel
    {
        Eigen::VectorXf small(projection.cols());
#pragma omp for schedule(static)
        for (Eigen::Index i = 0; i < n; ++i) {
            downsample(images[i], factor, std::span(small.data(), static_cast<std::size_t>(small.size())));
            out.col(i).noalias() = projection * small;
        }
    }
}

void project_images_serial(const Eigen::MatrixXf& projection, int factor, std::span<const ImageGrid> images,
                           Eigen::Ref<Eigen::MatrixXf> out) {
    std::vector<float> small(projection.cols());
    for (std::size_t i = 0; i < images.size(); ++i) {
        downsample(images[i], factor, small);
        for (Eigen::Index r = 0; r < projection.rows(); ++r) {
            double acc = 0.0;
            for (Eigen::Index c = 0; c < projection.cols(); ++c) acc += double(projection(r, c)) * small[c];
            out(r, static_cast<Eigen::Index>(i)) = static_cast<float>(acc);
        }
    }
}

void assign_nearest(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids, std::span<int> labels,
                    std::span<double> sims) {
    const Eigen::Index n = points.cols();
#pragma omp parallel
    {
        Eigen::VectorXd s(centroids.cols());
#pragma omp for schedule(static)
        for (Eigen::Index i = 0; i < n; ++i) {
            s.noalias() = centroids.transpose() * points.col(i);
            Eigen::Index best = 0;
            for (Eigen::Index j = 1; j < s.size(); ++j)
                if (s[j] > s[best]) best = j;
            labels[i] = static_cast<int>(best);
            sims[i] = s[best];
        }
    }
}

void assign_nearest_serial(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids,
                           std::span<int> labels, std::span<double> sims) {
    for (Eigen::Index i = 0; i < points.cols(); ++i) {
        int best = -1;
        double best_sim = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < centroids.cols(); ++j) {
            double dot = 0.0;
            for (Eigen::Index d = 0; d < points.rows(); ++d) dot += points(d, i) * centroids(d, j);
            if (dot > best_sim) {
                best_sim = dot;
                best = static_cast<int>(j);
            }
        }
        labels[i] = best;
        sims[i] = best_sim;
    }
}

namespace {

double silhouette_from_sums(std::span<const double> sum, std::span<const int> counts, int own) {
    if (counts[own] <= 1) return 0.0;
    const double a = sum[own] / (counts[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sum.size(); ++c)
        if (static_cast<int>(c) != own && counts[c] > 0) b = std::min(b, sum[c] / counts[c]);
    if (!std::isfinite(b)) return 0.0;
    const double m = std::max(a, b);
    return m > 0.0 ? (b - a) / m : 0.0;
}

std::vector<int> cluster_counts(std::span<const int> labels, int k) {
    std::vector<int> counts(k, 0);
    for (int l : labels) {
        if (l < 0 || l >= k) throw Error("silhouette: label out of range");
        ++counts[l];
    }
    return counts;
}

}  // namespace

void silhouette_values(const Eigen::MatrixXd& points, std::span<const int> labels, int k, std::span<double> out) {
    const auto counts = cluster_counts(labels, k);
    const Eigen::Index n = points.cols();
#pragma omp parallel
    {
        Eigen::VectorXd dots(n);
        std::vector<double> sum(k);
#pragma omp for schedule(dynamic, 64)
        for (Eigen::Index i = 0; i < n; ++i) {
            dots.noalias() = points.transpose() * points.col(i);
            std::fill(sum.begin(), sum.end(), 0.0);
            for (Eigen::Index j = 0; j < n; ++j)
                if (j != i) sum[labels[j]] += 1.0 - dots[j];
            out[i] = silhouette_from_sums(sum, counts, labels[i]);
        }
    }
}

void silhouette_values_serial(const Eigen::MatrixXd& points, std::span<const int> labels, int k,
                              std::span<double> out) {
    const auto counts = cluster_counts(labels, k);
    std::vector<double> sum(k);
    for (Eigen::Index i = 0; i < points.cols(); ++i) {
        std::fill(sum.begin(), sum.end(), 0.0);
        for (Eigen::Index j = 0; j < points.cols(); ++j) {
            if (j == i) continue;
            double dot = 0.0;
            for (Eigen::Index d = 0; d < points.rows(); ++d) dot += points(d, i) * points(d, j);
            sum[labels[j]] += 1.0 - dot;
        }
        out[i] = silhouette_from_sums(sum, counts, labels[i]);
    }
}

}  // namespace trove::kernels
