#include <random>

#include <benchmark/benchmark.h>

#include "proxyset/cluster.hpp"
#include "proxyset/rankeval.hpp"
#include "proxyset/search.hpp"
#include "proxyset/stats.hpp"
#include "proxyset/synthbench.hpp"

using namespace proxyset;

namespace {

Matrix gaussian_rows(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    return Matrix::NullaryExpr(rows, cols, [&] { return normal(rng); });
}

void BM_Fid(benchmark::State& state) {
    const auto d = state.range(0);
    const auto a = summarize(gaussian_rows(4 * d, d, 1));
    const auto b = summarize(gaussian_rows(4 * d, d, 2));
    for (auto _ : state) benchmark::DoNotOptimize(fid(a, b));
}
BENCHMARK(BM_Fid)->Arg(8)->Arg(64)->Arg(256)->Arg(2048)->Unit(benchmark::kMillisecond);

void BM_Kmeans(benchmark::State& state) {
    IdFeatureTable ids;
    ids.features = gaussian_rows(state.range(0), 64, 3);
    for (Eigen::Index i = 0; i < ids.features.rows(); ++i) ids.identity_ids.push_back(std::to_string(i));
    ids.image_counts.assign(ids.identity_ids.size(), 1);
    for (auto _ : state) benchmark::DoNotOptimize(kmeans(ids, 20, 0).inertia);
}
BENCHMARK(BM_Kmeans)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_SampleProxy(benchmark::State& state) {
    SynthSpec spec;
    spec.identities_per_domain = static_cast<std::size_t>(state.range(0));
    spec.images_per_identity = 2;
    spec.n_models = 2;
    const auto world = gen_world(spec);
    const auto context = prepare_search(world.pool, 20, 0);
    const auto pairs = cluster_distances(context.subsets, world.pool, world.target);
    const auto scores = sampling_scores(pairs, 0.6, context.subsets);
    const auto n = context.ids.identity_ids.size() / 4;
    std::uint64_t seed = 0;
    for (auto _ : state) benchmark::DoNotOptimize(sample_proxy(world.pool, context.subsets, scores, n, seed++).rows);
}
BENCHMARK(BM_SampleProxy)->Arg(100)->Arg(500)->Unit(benchmark::kMillisecond);

void BM_KendallTauB(benchmark::State& state) {
    const auto n = state.range(0);
    const Matrix x = gaussian_rows(2, n, 4);
    std::vector<double> a(x.row(0).begin(), x.row(0).end());
    std::vector<double> b(x.row(1).begin(), x.row(1).end());
    for (auto _ : state) benchmark::DoNotOptimize(kendall_tau_b(a, b));
}
BENCHMARK(BM_KendallTauB)->Arg(30)->Arg(280)->Arg(2000);

}  // namespace
BENCHMARK_MAIN();
