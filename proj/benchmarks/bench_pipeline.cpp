#include <benchmark/benchmark.h>

#include <random>

#include "dbsfm/loss_scaling.hpp"
#include "dbsfm/model.hpp"
#include "dbsfm/rng.hpp"
#include "dbsfm/spectral.hpp"
#include "dbsfm/synthgen.hpp"
#include "dbsfm/training.hpp"

namespace {

using namespace dbsfm;

std::vector<double> noise(std::size_t n) {
  Rng rng(1);
  std::normal_distribution<double> nd;
  std::vector<double> x(n);
  for (auto& v : x) v = nd(rng);
  return x;
}

Matrix random_features(Eigen::Index rows, Eigen::Index cols) {
  Rng rng(2);
  std::normal_distribution<double> nd;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

// One 2-minute window at 250 Hz.
void BM_Welch(benchmark::State& state) {
  const auto x = noise(30000);
  const WelchConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(welch_psd(std::span<const double>(x), cfg));
}
BENCHMARK(BM_Welch);

void BM_SynthSegment(benchmark::State& state) {
  const auto target = synth_log_psd(AperiodicModel{1.5, 4.0, {{20.0, 0.5, 2.5}}}, frequency_grid(1, 124));
  Rng rng(3);
  for (auto _ : state) benchmark::DoNotOptimize(synth_segment(target, 30000, rng));
}
BENCHMARK(BM_SynthSegment);

void BM_EncoderForward(benchmark::State& state) {
  const ModelConfig cfg;
  const ParamStore p = init_params(cfg, 1);
  const Matrix x = random_features(15, 125);
  for (auto _ : state) benchmark::DoNotOptimize(encoder_forward(x, p, cfg));
}
BENCHMARK(BM_EncoderForward);

// Masked-reconstruction forward and backward over a batch of sequences.
void BM_EncoderTrainStep(benchmark::State& state) {
  const ModelConfig cfg;
  const ParamStore p = init_params(cfg, 1);
  const auto batch = static_cast<Eigen::Index>(state.range(0));
  const Matrix target = random_features(15 * batch, 125);
  Matrix input = target;
  std::vector<char> flagged(static_cast<std::size_t>(target.rows()), 0);
  for (Eigen::Index r = 0; r < target.rows(); r += 3) {
    input.row(r).setZero();
    flagged[static_cast<std::size_t>(r)] = 1;
  }
  const RowVector w = RowVector::Ones(125);
  for (auto _ : state) {
    ad::Tape tape;
    auto pred = reconstruct(tape, p, cfg, encode(tape, p, cfg, input));
    auto loss = ad::weighted_masked_abs(tape, pred, target, w, flagged, 1.0);
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.gradients(p));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_EncoderTrainStep)->Arg(1)->Arg(50);

}  // namespace
BENCHMARK_MAIN();
