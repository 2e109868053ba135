#include <benchmark/benchmark.h>

#include <vector>

#include <Eigen/Core>

#include "trove/common.hpp"
#include "trove/kernels.hpp"

using namespace trove;

namespace {

std::vector<ImageGrid> images(int n) {
    Rng rng(1);
    std::uniform_real_distribution<float> u(0.f, 1.f);
    std::vector<ImageGrid> out(static_cast<std::size_t>(n), ImageGrid(60, 60));
    for (auto& img : out)
        for (float& v : img.data()) v = u(rng);
    return out;
}

Eigen::MatrixXd unit_points(int dim, int n, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> g;
    Eigen::MatrixXd m(dim, n);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    m.colwise().normalize();
    return m;
}

template <auto Kernel>
void BM_project(benchmark::State& state) {
    const auto imgs = images(static_cast<int>(state.range(0)));
    const Eigen::MatrixXf proj = Eigen::MatrixXf::Random(256, 675);
    Eigen::MatrixXf out(256, state.range(0));
    for (auto _ : state) {
        Kernel(proj, 4, imgs, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Kernel>
void BM_assign(benchmark::State& state) {
    const auto pts = unit_points(64, static_cast<int>(state.range(0)), 2);
    const auto cents = unit_points(64, 16, 3);
    std::vector<int> labels(static_cast<std::size_t>(state.range(0)));
    std::vector<double> sims(labels.size());
    for (auto _ : state) {
        Kernel(pts, cents, labels, sims);
        benchmark::DoNotOptimize(labels.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Kernel>
void BM_silhouette(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const auto pts = unit_points(64, n, 4);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % 8;
    std::vector<double> out(labels.size());
    for (auto _ : state) {
        Kernel(pts, labels, 8, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * n);
}

}  // namespace

BENCHMARK(BM_project<kernels::project_images>)->Name("project/parallel")->Arg(512)->Arg(4096);
BENCHMARK(BM_project<kernels::project_images_serial>)->Name("project/serial")->Arg(512)->Arg(4096);
BENCHMARK(BM_assign<kernels::assign_nearest>)->Name("assign/parallel")->Arg(5000)->Arg(50000);
BENCHMARK(BM_assign<kernels::assign_nearest_serial>)->Name("assign/serial")->Arg(5000)->Arg(50000);
BENCHMARK(BM_silhouette<kernels::silhouette_values>)->Name("silhouette/parallel")->Arg(500)->Arg(2000);
BENCHMARK(BM_silhouette<kernels::silhouette_values_serial>)->Name("silhouette/serial")->Arg(500)->Arg(2000);

BENCHMARK_MAIN();
