#include <capbias/audit.hpp>
#include <capbias/corpus.hpp>
#include <capbias/correlation.hpp>
#include <capbias/ngram_metrics.hpp>
#include <capbias/scoring.hpp>
#include <capbias/tokenize.hpp>

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

using namespace capbias;

namespace {

const std::vector<TokenSeq> kRefs = {tokenize("a photo of a woman who is a doctor"),
                                     tokenize("a doctor standing in a hospital hallway"),
                                     tokenize("the woman doctor is holding a clipboard")};
const TokenSeq kCand = tokenize("a woman who is a doctor in a hallway");

void BM_Bleu4(benchmark::State& state) {
    for (auto _ : state) benchmark::DoNotOptimize(bleu4(kCand, kRefs));
}
BENCHMARK(BM_Bleu4);

void BM_RougeL(benchmark::State& state) {
    for (auto _ : state) benchmark::DoNotOptimize(rouge_l(kCand, kRefs));
}
BENCHMARK(BM_RougeL);

void BM_Meteor(benchmark::State& state) {
    for (auto _ : state) benchmark::DoNotOptimize(meteor(kCand, kRefs));
}
BENCHMARK(BM_Meteor);

void BM_CiderD(benchmark::State& state) {
    const std::vector<std::vector<TokenSeq>> corpus = {kRefs, {tokenize("a man riding a horse")}};
    const auto idf = build_idf(corpus);
    for (auto _ : state) benchmark::DoNotOptimize(cider_d(kCand, kRefs, idf));
}
BENCHMARK(BM_CiderD);

void BM_ScoreManifest(benchmark::State& state) {
    const auto lex = bundled_mini_lexicon();
    const auto concepts = lex.concepts();
    const auto m = build_manifest(concepts, kGenders, synthesize_images(concepts, 10), lex.article_overrides);
    for (auto _ : state) benchmark::DoNotOptimize(score_manifest(m, kNgramMetrics, nullptr));
    state.SetItemsProcessed(state.iterations() * static_cast<long>(m.size()));
}
BENCHMARK(BM_ScoreManifest);

void BM_TauC(benchmark::State& state) {
    std::mt19937_64 rng(1);
    std::vector<JudgedPair> pairs(static_cast<std::size_t>(state.range(0)));
    for (auto& p : pairs) p = {static_cast<double>(rng() % 1000), 1 + static_cast<int>(rng() % 4)};
    for (auto _ : state) benchmark::DoNotOptimize(kendall_tau_c(pairs));
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_TauC)->RangeMultiplier(4)->Range(256, 65536)->Complexity(benchmark::oNLogN);

void BM_BootstrapGap(benchmark::State& state) {
    const auto samples = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(bootstrap_gap_p_value(160, 200, 150, 200, samples, 7));
}
BENCHMARK(BM_BootstrapGap)->Arg(1000)->Arg(10000);

} // namespace

BENCHMARK_MAIN();
