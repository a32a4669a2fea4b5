#include <benchmark/benchmark.h>

#include "xlkd/config.hpp"
#include "xlkd/evaluation.hpp"

using namespace xlkd;

namespace {

Tensor uniform(const Shape& shape, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-1, 1);
  return Tensor(shape, std::move(v));
}

void BM_MatMul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  auto a = uniform({n, n}, rng);
  auto b = uniform({n, n}, rng);
  NoGradScope off;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_MatMul)->Arg(32)->Arg(128)->Arg(288);

void BM_MatMulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  auto a = uniform({n, n}, rng);
  auto b = uniform({n, n}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  for (auto _ : state) {
    Graph g;
    GraphScope scope(g);
    backward(g, sum(matmul(a, b)));
  }
}
BENCHMARK(BM_MatMulBackward)->Arg(32)->Arg(128);

// Default-config denoiser forward on a training-sized batch.
void BM_Denoise(benchmark::State& state) {
  RunConfig cfg;
  const auto n = static_cast<std::size_t>(state.range(0));
  auto den = init_denoiser(cfg.denoiser_config(), 1);
  Rng rng(3);
  auto x = uniform({n, cfg.G * cfg.G}, rng);
  auto cond = uniform({n, 3, static_cast<std::size_t>(cfg.d_T)}, rng);
  std::vector<int> t(n, cfg.T / 2);
  NoGradScope off;
  for (auto _ : state) benchmark::DoNotOptimize(denoise(den, x, t, cond));
}
BENCHMARK(BM_Denoise)->Arg(1)->Arg(32)->Arg(480);

void BM_TrainStep(benchmark::State& state) {
  RunConfig cfg;
  cfg.N = 256;
  cfg.M = 32;
  const auto tag = static_cast<StrategyTag>(state.range(0));
  auto corpus = gen_corpus(cfg.corpus_config(), 1);
  Model model = make_model(cfg, init_denoiser(cfg.denoiser_config(), 2), 3);
  const auto s = cfg.schedule();
  Trainer trainer(model, make_strategy(tag), s, cfg.train_config(), 4);
  std::vector<std::size_t> idx(cfg.train.batch);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Batch batch = parallel_batch(corpus, idx);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step(batch));
  state.SetLabel(std::string(strategy_name(tag)));
}
BENCHMARK(BM_TrainStep)
    ->Arg(static_cast<int>(StrategyTag::kUKD))
    ->Arg(static_cast<int>(StrategyTag::kFT))
    ->Unit(benchmark::kMillisecond);

void BM_FidelityEval(benchmark::State& state) {
  RunConfig cfg;
  auto den = init_denoiser(cfg.denoiser_config(), 5);
  auto enc = make_teacher_encoder(cfg);
  auto prompts = parallel_eval_prompts(cfg.catalog, Language::kTeacher);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        fidelity_eval(den, teacher_cond_fn(enc), prompts, cfg.catalog, cfg.schedule(), 1, 6));
  }
}
BENCHMARK(BM_FidelityEval)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
