#include <benchmark/benchmark.h>

#include "seqxrec/ops.hpp"
#include "seqxrec/seqrec.hpp"

using namespace seqxrec;
using namespace seqxrec::num;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad = false) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (auto& v : t.values()) v = static_cast<Real>(rng.normal() * 0.1);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random_tensor(rng, {n, n}), b = random_tensor(rng, {n, n});
  for (auto _ : state) {
    Tape tape(Tape::Mode::kInference);
    benchmark::DoNotOptimize(matmul(tape, a, b).data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Tensor a = random_tensor(rng, {n, n}, true), b = random_tensor(rng, {n, n}, true);
  for (auto _ : state) {
    Tape tape;
    tape.backward(sum(tape, matmul(tape, a, b)));
  }
}

void BM_Attention(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 64;
  Rng rng(3);
  const Tensor q = random_tensor(rng, {n, d}), k = random_tensor(rng, {n, d}), v = random_tensor(rng, {n, d});
  for (auto _ : state) {
    Tape tape(Tape::Mode::kInference);
    benchmark::DoNotOptimize(attention(tape, q, k, v, 4, true).data());
  }
}

void BM_EncodeSequence(benchmark::State& state) {
  seqrec::SeqRecConfig cfg;
  cfg.num_items = 1000;
  const auto model = seqrec::SeqRecModel::init(cfg, 4);
  std::vector<std::size_t> items;
  for (std::size_t i = 0; i < static_cast<std::size_t>(state.range(0)); ++i) items.push_back(1 + (i * 37) % 1000);
  for (auto _ : state) {
    Tape tape(Tape::Mode::kInference);
    benchmark::DoNotOptimize(seqrec::encode_sequence(tape, model, items).data());
  }
}

void BM_LinearSplitBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const std::size_t k = 16, n = 2 * 64 * 256;
  Rng rng(5);
  const Tensor x = random_tensor(rng, {batch, k}, true), w = random_tensor(rng, {k, n}, true);
  const Tensor b = random_tensor(rng, {n}, true);
  for (auto _ : state) {
    Tape tape;
    const auto parts = linear_split(tape, x, w, b, {{64, 256}, {256, 64}}, Real(0.1));
    Tensor loss = sum(tape, parts[0][0]);
    for (std::size_t r = 1; r < batch; ++r) loss = add(tape, loss, sum(tape, parts[r][1]));
    tape.backward(loss);
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

}  // namespace

BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(128);
BENCHMARK(BM_Attention)->Arg(16)->Arg(50)->Arg(128);
BENCHMARK(BM_EncodeSequence)->Arg(10)->Arg(50);
BENCHMARK(BM_LinearSplitBackward)->Arg(32)->Arg(256);

BENCHMARK_MAIN();
