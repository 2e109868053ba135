#include <doctest.h>

#include <algorithm>
#include <cmath>

#include <vector>

#include <omp.h>

#include <Eigen/Dense>

#include "trove/common.hpp"
#include "trove/kernels.hpp"
#include "trove/tensor_io.hpp"

using namespace trove;

namespace {

std::vector<ImageGrid> random_images(int count, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<float> u(0.f, 1.f);
    std::vector<ImageGrid> out;
    for (int i = 0; i < count; ++i) {
        ImageGrid img(60, 60);
        for (float& v : img.data()) v = u(rng);
        out.push_back(std::move(img));
    }
    return out;
}

Eigen::MatrixXd unit_columns(int dim, int n, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> g;
    Eigen::MatrixXd m(dim, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < dim; ++i) m(i, j) = g(rng);
    m.colwise().normalize();
    return m;
}

}  // namespace

TEST_CASE("downsample averages blocks per channel") {
    ImageGrid img(4, 4);
    img.set(0, 0, kRed);
    img.set(3, 3, kBlue);
    std::vector<float> out(2 * 2 * 3);
    kernels::downsample(img, 2, out);
    CHECK(out[0] == doctest::Approx(0.25));
    CHECK(out[1] == 0.f);
    CHECK(out[11] == doctest::Approx(0.25));
    CHECK(out[5] == 0.f);
}

TEST_CASE("parallel projection equals the serial reference") {
    const auto images = random_images(37, 3);
    Rng rng(9);
    std::normal_distribution<float> g;
    Eigen::MatrixXf proj(32, 15 * 15 * 3);
    for (Eigen::Index i = 0; i < proj.size(); ++i) proj.data()[i] = g(rng);
    Eigen::MatrixXf a(32, 37), b(32, 37), one(32, 37);
    kernels::project_images(proj, 4, images, a);
    kernels::project_images_serial(proj, 4, images, b);
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-4f * (1.0f + b.cwiseAbs().maxCoeff()));
    const int threads = omp_get_max_threads();
    omp_set_num_threads(1);
    kernels::project_images(proj, 4, images, one);
    omp_set_num_threads(std::max(threads, 3));
    kernels::project_images(proj, 4, images, a);
    omp_set_num_threads(threads);
    CHECK(a == one);
}

TEST_CASE("parallel nearest assignment equals the serial reference") {
    const auto pts = unit_columns(16, 500, 1);
    const auto cents = unit_columns(16, 7, 2);
    std::vector<int> la(500), lb(500);
    std::vector<double> sa(500), sb(500);
    kernels::assign_nearest(pts, cents, la, sa);
    kernels::assign_nearest_serial(pts, cents, lb, sb);
    CHECK(la == lb);
    for (int i = 0; i < 500; ++i) CHECK(std::abs(sa[i] - sb[i]) <= 1e-12);
    for (int i = 0; i < 500; ++i) {
        Eigen::Index best;
        (cents.transpose() * pts.col(i)).maxCoeff(&best);
        CHECK(la[i] == best);
    }
}

TEST_CASE("nearest assignment breaks ties toward the lower index") {
    Eigen::MatrixXd pts(2, 1);
    pts << 1, 0;
    Eigen::MatrixXd cents(2, 2);
    cents << 0.6, 0.6, 0.8, -0.8;
    std::vector<int> l(1);
    std::vector<double> s(1);
    kernels::assign_nearest(pts, cents, l, s);
    CHECK(l[0] == 0);
}

TEST_CASE("parallel silhouette values equal the serial reference") {
    const auto pts = unit_columns(8, 300, 4);
    std::vector<int> labels(300);
    for (int i = 0; i < 300; ++i) labels[i] = i % 5;
    labels[0] = 5;  // singleton
    std::vector<double> a(300), b(300);
    kernels::silhouette_values(pts, labels, 6, a);
    kernels::silhouette_values_serial(pts, labels, 6, b);
    for (int i = 0; i < 300; ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
    std::vector<double> c(300);
    const int threads = omp_get_max_threads();
    omp_set_num_threads(4);
    kernels::silhouette_values(pts, labels, 6, c);
    omp_set_num_threads(threads);
    CHECK(a == c);
    CHECK(a[0] == 0.0);
}

TEST_CASE("named tensors round-trip in both precisions") {
    const auto path = std::filesystem::temp_directory_path() / "trove_test_tensors.bin";
    Eigen::MatrixXd m(2, 3);
    m << 1, 2, 3, 4, 5, 6.125;
    Eigen::MatrixXd exact(1, 2);
    exact << 0.1, 1e-300;
    write_tensors(path, {{"a", m, false}, {"b", exact, true}});
    const auto back = read_tensors(path);
    CHECK(find_tensor(back, "a").values == m);
    CHECK(find_tensor(back, "b").values == exact);
    CHECK_THROWS_AS(find_tensor(back, "missing"), Error);
    CHECK(file_hash(path) == file_hash(path));
    std::filesystem::remove(path);
}
