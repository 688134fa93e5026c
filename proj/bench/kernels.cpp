// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include <random>

#include "radloc/matcher.hpp"
#include "radloc/renderer.hpp"
#include "radloc/synthscene.hpp"

using namespace radloc;

namespace {

struct RenderFixture {
  SyntheticScene scene = make_reference_scene();
  FieldParams field = init_field(FieldConfig{}, scene.bounds, 1);
  Pose pose = make_trajectory(scene, TrajectoryLayout{}, 1, 2).poses[0];
};

const RenderFixture& render_fixture() {
  static const RenderFixture f;
  return f;
}

template <bool Parallel>
void render(benchmark::State& state) {
  const auto& f = render_fixture();
  const int side = static_cast<int>(state.range(0));
  const Intrinsics k = Intrinsics::from_fov(side, side, 60);
  RenderOptions o;
  o.stride = 2;
  for (auto _ : state) {
    RenderedMap m = Parallel ? render_map(f.field, f.pose, k, o) : render_map_serial(f.field, f.pose, k, o);
    benchmark::DoNotOptimize(m.features.data());
  }
  state.SetItemsProcessed(state.iterations() * ((side + 1) / 2) * ((side + 1) / 2));
}

template <bool Fast>
void match(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0)), d = static_cast<int>(state.range(1));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  const Eigen::MatrixXd a = Eigen::MatrixXd::NullaryExpr(d, n, [&] { return g(rng); });
  const Eigen::MatrixXd b = Eigen::MatrixXd::NullaryExpr(d, n, [&] { return g(rng); });
  for (auto _ : state) {
    auto m = Fast ? mutual_nn(a, b) : mutual_nn_reference(a, b);
    benchmark::DoNotOptimize(m.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n) * n);
}

}  // namespace

BENCHMARK(render<true>)->Name("render_map")->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(render<false>)->Name("render_map_serial")->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(match<true>)->Name("mutual_nn")->Args({1024, 5})->Args({1024, 10})->Args({1024, 47})->Unit(benchmark::kMillisecond);
BENCHMARK(match<false>)->Name("mutual_nn_reference")->Args({1024, 5})->Args({1024, 10})->Args({1024, 47})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
