#pragma once

#include "capbias/tokenize.hpp"

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace capbias {

enum class Metric { bleu4, rougeL, ciderD, meteor, clipscore, hybrid };

inline constexpr Metric kNgramMetrics[] = {Metric::bleu4, Metric::rougeL, Metric::ciderD, Metric::meteor};

std::string_view to_string(Metric m);
Metric parse_metric(std::string_view s);

/// Inclusive upper bound of a metric's value range (lower bound is 0).
double metric_upper_bound(Metric m);

struct MetricScore {
    Metric metric = Metric::bleu4;
    double value = 0.0;
};

inline constexpr int kMaxNgram = 4;

/// Counts of every n-gram (n = 1..4) of a token sequence. Keys are the
/// n-gram's tokens joined by single spaces; index n-1 holds the n-grams.
struct NGramProfile {
    std::array<std::map<std::string, int>, kMaxNgram> counts;

    static NGramProfile of(const TokenSeq& tokens);
};

/// Document frequencies over a corpus of reference sets (CIDEr statistics).
class IdfTable {
  public:
    IdfTable() = default;

    std::size_t doc_count() const { return doc_count_; }

    /// Number of reference sets containing `gram`; 0 when unseen.
    std::size_t df(const std::string& gram) const;

    /// log(doc_count) - log(df). Unseen grams get 0.
    double idf(const std::string& gram) const;

    const std::unordered_map<std::string, std::size_t>& table() const { return df_; }

  private:
    friend IdfTable build_idf(std::span<const std::vector<TokenSeq>> reference_corpus);

    std::size_t doc_count_ = 0;
    std::unordered_map<std::string, std::size_t> df_;
    double log_doc_count_ = 0.0;
};

IdfTable build_idf(std::span<const std::vector<TokenSeq>> reference_corpus);

/// Sentence BLEU-4 with brevity penalty; zero n-gram precisions are replaced
/// by 1e-9 before the geometric mean.
MetricScore bleu4(const TokenSeq& candidate, std::span<const TokenSeq> references);

/// ROUGE-L F-measure with beta = 1.2, maximised over references.
MetricScore rouge_l(const TokenSeq& candidate, std::span<const TokenSeq> references);

/// CIDEr-D (sigma = 6, clipped tf-idf, x10) averaged over references.
MetricScore cider_d(const TokenSeq& candidate, std::span<const TokenSeq> references, const IdfTable& idf);

/// METEOR with exact and Porter-stem matching stages, alpha=0.9, beta=3,
/// gamma=0.5, maximised over references.
MetricScore meteor(const TokenSeq& candidate, std::span<const TokenSeq> references);

/// Dispatches to one of the four n-gram metrics. `idf` is required for CIDEr-D.
MetricScore score_ngram(Metric m, const TokenSeq& candidate, std::span<const TokenSeq> references,
                        const IdfTable* idf);

struct MeteorAlignment {
    std::size_t matches = 0;
    std::size_t chunks = 0;
};

/// Alignment statistics used by `meteor` for one candidate/reference pair.
MeteorAlignment meteor_align(const TokenSeq& candidate, const TokenSeq& reference);

} // namespace capbias
