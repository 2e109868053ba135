#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include <Eigen/Dense>

#include "trove/clustering.hpp"
#include "trove/common.hpp"

using namespace trove;

namespace {

Eigen::MatrixXd gaussian(int dim, int n, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> g;
    Eigen::MatrixXd m(dim, n);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
}

Eigen::MatrixXd planted(int clusters, int per, int dim, double noise, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> g;
    Eigen::MatrixXd centers = gaussian(dim, clusters, derive_seed(seed, 1));
    centers.colwise().normalize();
    Eigen::MatrixXd x(dim, clusters * per);
    for (int c = 0; c < clusters; ++c)
        for (int i = 0; i < per; ++i) {
            Eigen::VectorXd v = centers.col(c);
            for (int d = 0; d < dim; ++d) v[d] += noise * g(rng);
            x.col(c * per + i) = v;
        }
    return x;
}

// Straightforward Lloyd-on-the-sphere, run step by step from given centroids.
std::vector<int> lloyd_oracle(const Eigen::MatrixXd& unit, Eigen::MatrixXd cents, int max_iter) {
    const int n = static_cast<int>(unit.cols()), k = static_cast<int>(cents.cols());
    std::vector<int> lab(n, -1), prev;
    for (int it = 0; it < max_iter; ++it) {
        for (int i = 0; i < n; ++i) {
            double best = -2;
            for (int c = 0; c < k; ++c) {
                double dot = 0;
                for (int d = 0; d < unit.rows(); ++d) dot += unit(d, i) * cents(d, c);
                if (dot > best) best = dot, lab[i] = c;
            }
        }
        if (lab == prev) break;
        for (int c = 0; c < k; ++c) {
            Eigen::VectorXd s = Eigen::VectorXd::Zero(unit.rows());
            for (int i = 0; i < n; ++i)
                if (lab[i] == c) s += unit.col(i);
            REQUIRE(s.norm() > 0);
            cents.col(c) = s / s.norm();
        }
        prev = lab;
    }
    return lab;
}

// Direct O(n^2) silhouette with cosine distance.
double silhouette_oracle(const Eigen::MatrixXd& pts, const std::vector<int>& lab) {
    const Eigen::MatrixXd u = pts.colwise().normalized();
    const int n = static_cast<int>(u.cols());
    const int k = *std::max_element(lab.begin(), lab.end()) + 1;
    double total = 0;
    for (int i = 0; i < n; ++i) {
        std::vector<double> sum(k, 0.0);
        std::vector<int> cnt(k, 0);
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            sum[lab[j]] += 1.0 - u.col(i).dot(u.col(j));
            ++cnt[lab[j]];
        }
        if (cnt[lab[i]] == 0) continue;
        const double a = sum[lab[i]] / cnt[lab[i]];
        double b = 1e300;
        for (int c = 0; c < k; ++c)
            if (c != lab[i] && cnt[c] > 0) b = std::min(b, sum[c] / cnt[c]);
        total += (b - a) / std::max(a, b);
    }
    return total / n;
}

}  // namespace

TEST_CASE("antipodal blobs separate under k=2") {
    Eigen::MatrixXd x = gaussian(4, 40, 1) * 0.05;
    for (int i = 0; i < 40; ++i) x(0, i) += i < 20 ? 1.0 : -1.0;
    const auto m = spherical_kmeans(x, 2, 7);
    CHECK(m.k == 2);
    for (int i = 1; i < 20; ++i) CHECK(m.assignment[i] == m.assignment[0]);
    for (int i = 21; i < 40; ++i) CHECK(m.assignment[i] == m.assignment[20]);
    CHECK(m.assignment[0] != m.assignment[20]);
    for (int c = 0; c < m.k; ++c) CHECK(m.centroids.col(c).norm() == doctest::Approx(1.0));
}

TEST_CASE("identical embeddings collapse into one reported-degenerate cluster") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Ones(3, 10);
    const auto m = spherical_kmeans(x, 2, 0);
    CHECK(m.degenerate);
    CHECK(m.k == 1);
    CHECK(m.requested_k == 2);
    for (int a : m.assignment) CHECK(a == 0);
}

TEST_CASE("invalid inputs are rejected") {
    Eigen::MatrixXd x = gaussian(3, 5, 2);
    x.col(2).setZero();
    CHECK_THROWS_AS(normalize_embeddings(x), Error);
    CHECK_THROWS_AS(spherical_kmeans(gaussian(3, 5, 2), 1, 0), Error);
    CHECK_THROWS_AS(spherical_kmeans(gaussian(3, 5, 2), 6, 0), Error);
    const std::vector<int> one(5, 0);
    CHECK_THROWS_AS(silhouette(gaussian(3, 5, 2), one), Error);
    CHECK_THROWS_AS(select_k(gaussian(3, 5, 2), std::vector<int>{}, 0), Error);
}

TEST_CASE("Lloyd iterations match a brute-force oracle and never increase the objective") {
    const Eigen::MatrixXd x = gaussian(16, 200, 11);
    const Eigen::MatrixXd u = normalize_embeddings(x);
    const auto init = kmeanspp_init(u, 5, 3);
    const auto m = spherical_kmeans_from(u, init);
    CHECK_FALSE(m.degenerate);
    CHECK(m.assignment == lloyd_oracle(u, init, 300));
    for (std::size_t i = 1; i < m.objective_history.size(); ++i)
        CHECK(m.objective_history[i] <= m.objective_history[i - 1] + 1e-12);
    CHECK(m.inertia == m.objective_history.back());
}

TEST_CASE("fitted models are idempotent, seeded and scale invariant") {
    Eigen::MatrixXd x = gaussian(8, 120, 4);
    const auto a = spherical_kmeans(x, 4, 9);
    const auto b = spherical_kmeans(x, 4, 9);
    CHECK(a.assignment == b.assignment);
    CHECK(a.centroids == b.centroids);
    CHECK(a.assign(x) == a.assignment);
    Eigen::MatrixXd scaled = x;
    for (int i = 0; i < scaled.cols(); ++i) scaled.col(i) *= 0.5 + i;
    CHECK(a.assign(scaled) == a.assignment);
}

TEST_CASE("silhouette matches the direct pairwise formula on 12 points") {
    Eigen::MatrixXd x(3, 12);
    x << 1, 0.9, 1.1, 0.8, 0, 0.1, -0.1, 0.2, 0.3, -0.2, 0.5, 0.1,
         0.1, 0.2, -0.1, 0.3, 1, 0.9, 1.2, 0.8, 0.1, 0.2, -0.3, 0.1,
         0, 0.1, 0.2, -0.1, 0.1, 0, -0.2, 0.3, 1, 0.8, 1.1, 0.9;
    const std::vector<int> lab = {0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2};
    CHECK(silhouette(x, lab) == doctest::Approx(silhouette_oracle(x, lab)).epsilon(1e-12));
    std::vector<int> with_singleton = lab;
    with_singleton[11] = 3;
    CHECK(silhouette(x, with_singleton) == doctest::Approx(silhouette_oracle(x, with_singleton)).epsilon(1e-12));
    const double s = silhouette(x, lab);
    CHECK(s > 0.5);
    CHECK(s <= 1.0);
}

TEST_CASE("silhouette is near zero for random labels on unstructured data") {
    const Eigen::MatrixXd x = gaussian(10, 400, 5);
    std::vector<int> lab(400);
    for (int i = 0; i < 400; ++i) lab[i] = i % 3;
    CHECK(std::abs(silhouette(x, lab)) < 0.05);
}

TEST_CASE("select_k recovers three planted clusters") {
    const auto x = planted(3, 40, 10, 0.15, 21);
    const std::vector<int> ks = {2, 3, 4, 5, 6};
    const auto sel = select_k(x, ks, 2);
    CHECK(sel.model.requested_k == 3);
    double best = -2;
    int best_k = 0;
    for (auto [k, s] : sel.scores) {
        const auto m = spherical_kmeans_from(normalize_embeddings(x),
                                             kmeanspp_init(normalize_embeddings(x), k, derive_seed(2, k)));
        CHECK(s == doctest::Approx(silhouette_oracle(x, m.assignment)).epsilon(1e-9));
        if (s > best) best = s, best_k = k;
    }
    CHECK(best_k == 3);
    const std::vector<int> single = {5};
    CHECK(select_k(x, single, 2).model.requested_k == 5);
}

TEST_CASE("select_k restarts keep the lowest-inertia seeding") {
    const auto x = planted(4, 30, 6, 0.4, 13);
    const auto u = normalize_embeddings(x);
    const std::vector<int> ks = {4};
    const auto one = select_k(x, ks, 5, 2000, 1);
    const auto many = select_k(x, ks, 5, 2000, 6);
    double best = one.model.inertia;
    const auto k_seed = derive_seed(5, 4);
    for (int r = 1; r < 6; ++r)
        best = std::min(best, spherical_kmeans_from(u, kmeanspp_init(u, 4, derive_seed(k_seed, r))).inertia);
    CHECK(many.model.inertia == best);
    CHECK(many.model.inertia <= one.model.inertia);
    CHECK_THROWS_AS(select_k(x, ks, 5, 2000, 0), Error);
}

TEST_CASE("select_k ties go to the smaller k regardless of range order") {
    // Four distinct directions, each repeated: k=5 cannot split an identical
    // group, so it yields the same partition and silhouette as k=4.
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(4, 20);
    for (int i = 0; i < 20; ++i) x(i / 5, i) = 1.0;
    for (const std::vector<int>& ks : {std::vector<int>{4, 5}, std::vector<int>{5, 4}}) {
        const auto sel = select_k(x, ks, 0);
        REQUIRE(sel.scores.size() == 2);
        CHECK(sel.scores[0].second == doctest::Approx(sel.scores[1].second).epsilon(1e-12));
        CHECK(sel.model.requested_k == 4);
    }
}

TEST_CASE("silhouette subsampling is reported") {
    const auto x = planted(3, 30, 5, 0.1, 3);
    const std::vector<int> ks = {3};
    const auto sel = select_k(x, ks, 0, 50);
    CHECK(sel.subsampled);
    CHECK(sel.silhouette_points == 50);
}

TEST_CASE("cluster models round-trip through disk") {
    const auto m = spherical_kmeans(gaussian(6, 50, 8), 3, 1);
    const auto dir = std::filesystem::temp_directory_path() / "trove_test_clusters";
    save_cluster_model(m, dir);
    const auto back = load_cluster_model(dir);
    CHECK(back.assignment == m.assignment);
    CHECK(back.centroids == m.centroids);
    CHECK(back.k == m.k);
    std::filesystem::remove_all(dir);
}
