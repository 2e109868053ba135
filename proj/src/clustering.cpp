#include "trove/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "trove/common.hpp"
#include "trove/kernels.hpp"
#include "trove/tensor_io.hpp"

namespace trove {

Eigen::MatrixXd normalize_embeddings(const Eigen::MatrixXd& points) {
    Eigen::MatrixXd out(points.rows(), points.cols());
    for (Eigen::Index i = 0; i < points.cols(); ++i) {
        const double n = points.col(i).norm();
        if (!(n > 0.0) || !std::isfinite(n)) throw Error("clustering: zero-norm or non-finite embedding at column " + std::to_string(i));
        out.col(i) = points.col(i) / n;
    }
    return out;
}

std::vector<int> ClusterModel::assign(const Eigen::MatrixXd& points) const {
    const Eigen::MatrixXd unit = normalize_embeddings(points);
    std::vector<int> labels(unit.cols());
    std::vector<double> sims(unit.cols());
    kernels::assign_nearest(unit, centroids, labels, sims);
    return labels;
}

Eigen::MatrixXd kmeanspp_init(const Eigen::MatrixXd& x, int k, std::uint64_t seed) {
    const Eigen::Index n = x.cols();
    if (k < 1 || k > n) throw Error("kmeans++: need 1 <= k <= n");
    Rng rng(seed);
    Eigen::MatrixXd centroids(x.rows(), k);
    const auto first = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
    centroids.col(0) = x.col(first);
    Eigen::VectorXd best_dist = (1.0 - (x.transpose() * x.col(first)).array()).max(0.0).matrix();
    for (int c = 1; c < k; ++c) {
        const Eigen::VectorXd w = best_dist.array().square();
        const double total = w.sum();
        Eigen::Index pick = 0;
        if (total > 0.0) {
            double u = std::uniform_real_distribution<double>(0.0, total)(rng);
            for (pick = 0; pick < n - 1; ++pick) {
                u -= w[pick];
                if (u < 0.0) break;
            }
            while (w[pick] <= 0.0 && pick > 0) --pick;  // guard against landing on a zero-weight tail
        } else {
            pick = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
        }
        centroids.col(c) = x.col(pick);
        const Eigen::VectorXd d = (1.0 - (x.transpose() * x.col(pick)).array()).max(0.0).matrix();
        best_dist = best_dist.cwiseMin(d);
    }
    return centroids;
}

namespace {

double mean_distance(std::span<const double> sims) {
    double s = 0.0;
    for (double v : sims) s += 1.0 - v;
    return sims.empty() ? 0.0 : s / static_cast<double>(sims.size());
}

}  // namespace

ClusterModel spherical_kmeans_from(const Eigen::MatrixXd& x, Eigen::MatrixXd centroids, int max_iter) {
    const Eigen::Index n = x.cols();
    const int k = static_cast<int>(centroids.cols());
    ClusterModel m;
    m.requested_k = k;
    std::vector<int> labels(n, -1), prev;
    std::vector<double> sims(n);

    for (int it = 0; it < max_iter; ++it) {
        kernels::assign_nearest(x, centroids, labels, sims);
        m.objective_history.push_back(mean_distance(sims));
        m.iterations = it + 1;
        if (labels == prev) break;

        // Centroid update: renormalized member sums.
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(x.rows(), k);
        std::vector<int> counts(k, 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.col(labels[i]) += x.col(i);
            ++counts[labels[i]];
        }
        // Empty clusters take the farthest point of a cluster with >= 2 members.
        std::vector<char> used(n, 0);
        for (int c = 0; c < k; ++c) {
            if (counts[c] > 0) continue;
            Eigen::Index far = -1;
            for (Eigen::Index i = 0; i < n; ++i)
                if (!used[i] && counts[labels[i]] >= 2 && (far < 0 || sims[i] < sims[far])) far = i;
            if (far < 0 || 1.0 - sims[far] <= 1e-12) continue;  // nothing distinct left to seed from
            used[far] = 1;
            sums.col(c) = x.col(far);
            counts[c] = 1;
        }
        for (int c = 0; c < k; ++c) {
            const double norm = sums.col(c).norm();
            if (counts[c] > 0 && norm > 0.0) centroids.col(c) = sums.col(c) / norm;
        }
        prev = labels;
    }

    // Compact away clusters that stayed empty.
    std::vector<int> counts(k, 0);
    for (int l : labels) ++counts[l];
    std::vector<int> remap(k, -1);
    int kept = 0;
    for (int c = 0; c < k; ++c)
        if (counts[c] > 0) remap[c] = kept++;
    m.centroids.resize(x.rows(), kept);
    for (int c = 0; c < k; ++c)
        if (remap[c] >= 0) m.centroids.col(remap[c]) = centroids.col(c);
    for (int& l : labels) l = remap[l];
    m.k = kept;
    m.degenerate = kept < k;
    m.assignment = std::move(labels);
    m.similarity = std::move(sims);
    m.inertia = m.objective_history.back();
    return m;
}

ClusterModel spherical_kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int max_iter) {
    if (k < 2) throw Error("spherical_kmeans: k must be >= 2");
    if (points.cols() < k) throw Error("spherical_kmeans: fewer embeddings than clusters");
    const Eigen::MatrixXd x = normalize_embeddings(points);
    return spherical_kmeans_from(x, kmeanspp_init(x, k, seed), max_iter);
}

double silhouette(const Eigen::MatrixXd& points, std::span<const int> assignment) {
    if (static_cast<Eigen::Index>(assignment.size()) != points.cols()) throw Error("silhouette: size mismatch");
    // Compact labels so cluster ids need not be contiguous.
    std::vector<int> ids(assignment.begin(), assignment.end());
    std::vector<int> distinct = ids;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2) throw Error("silhouette: need at least two clusters");
    for (int& l : ids) l = static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), l) - distinct.begin());
    const Eigen::MatrixXd x = normalize_embeddings(points);
    std::vector<double> values(ids.size());
    kernels::silhouette_values(x, ids, static_cast<int>(distinct.size()), values);
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

std::vector<int> default_k_range() {
    std::vector<int> ks;
    for (int k = 4; k <= 24; k += 2) ks.push_back(k);
    return ks;
}

KSelection select_k(const Eigen::MatrixXd& points, std::span<const int> k_range, std::uint64_t seed,
                    int max_silhouette_points, int restarts) {
    if (k_range.empty()) throw Error("select_k: empty k range");
    if (restarts < 1) throw Error("select_k: restarts must be >= 1");
    const Eigen::Index n = points.cols();
    for (int k : k_range)
        if (k < 2 || k > n) throw Error("select_k: infeasible k=" + std::to_string(k));
    const Eigen::MatrixXd x = normalize_embeddings(points);

    std::vector<Eigen::Index> sample(static_cast<std::size_t>(n));
    std::iota(sample.begin(), sample.end(), Eigen::Index{0});
    KSelection out;
    if (max_silhouette_points > 0 && n > max_silhouette_points) {
        Rng rng(derive_seed(seed, 0x5111));
        std::shuffle(sample.begin(), sample.end(), rng);
        sample.resize(static_cast<std::size_t>(max_silhouette_points));
        std::sort(sample.begin(), sample.end());
        out.subsampled = true;
    }
    out.silhouette_points = static_cast<int>(sample.size());
    Eigen::MatrixXd xs(x.rows(), static_cast<Eigen::Index>(sample.size()));
    for (std::size_t i = 0; i < sample.size(); ++i) xs.col(static_cast<Eigen::Index>(i)) = x.col(sample[i]);

    bool have = false;
    for (int k : k_range) {
        const auto k_seed = derive_seed(seed, static_cast<std::uint64_t>(k));
        ClusterModel m = spherical_kmeans_from(x, kmeanspp_init(x, k, k_seed));
        for (int r = 1; r < restarts; ++r) {
            ClusterModel alt = spherical_kmeans_from(x, kmeanspp_init(x, k, derive_seed(k_seed, static_cast<std::uint64_t>(r))));
            if (alt.inertia < m.inertia) m = std::move(alt);
        }
        std::vector<int> labels(sample.size());
        for (std::size_t i = 0; i < sample.size(); ++i) labels[i] = m.assignment[sample[i]];
        double score = -std::numeric_limits<double>::infinity();
        if (std::adjacent_find(labels.begin(), labels.end(), std::not_equal_to<>()) != labels.end()) {
            std::vector<double> values(labels.size());
            kernels::silhouette_values(xs, labels, m.k, values);
            score = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
        }
        out.scores.emplace_back(k, score);
        const bool tie = have && std::abs(score - out.best_silhouette) <= 1e-12;
        if (!have || score > out.best_silhouette + 1e-12 || (tie && k < out.model.requested_k)) {
            out.model = std::move(m);
            out.best_silhouette = score;
            have = true;
        }
    }
    return out;
}

void save_cluster_model(const ClusterModel& m, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_tensors(dir / "centroids.bin", {{"centroids", m.centroids, true}});
    std::ofstream csv(dir / "assignments.csv");
    csv << "image_id,cluster,similarity\n";
    csv.precision(17);
    for (std::size_t i = 0; i < m.assignment.size(); ++i)
        csv << i << ',' << m.assignment[i] << ',' << m.similarity[i] << '\n';
    if (!csv) throw Error("failed writing cluster assignments");
}

ClusterModel load_cluster_model(const std::filesystem::path& dir) {
    ClusterModel m;
    m.centroids = find_tensor(read_tensors(dir / "centroids.bin"), "centroids").values;
    m.k = m.requested_k = static_cast<int>(m.centroids.cols());
    std::ifstream csv(dir / "assignments.csv");
    if (!csv) throw Error("missing assignments.csv in " + dir.string());
    std::string line;
    std::getline(csv, line);
    double total = 0.0;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id, cluster, sim;
        std::getline(ls, id, ',');
        std::getline(ls, cluster, ',');
        std::getline(ls, sim, ',');
        m.assignment.push_back(std::stoi(cluster));
        m.similarity.push_back(std::stod(sim));
        total += 1.0 - m.similarity.back();
    }
    m.inertia = m.assignment.empty() ? 0.0 : total / static_cast<double>(m.assignment.size());
    return m;
}

}  // namespace trove
