#pragma once

#include "capbias/embed_score.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace capbias {

struct JudgedPair {
    double metric_score = 0.0;
    int human_rating = 0;
};

struct ConcordanceCounts {
    long long concordant = 0;
    long long discordant = 0;
    std::size_t n = 0;
    std::size_t m = 0;  // min(distinct scores, distinct ratings)
};

/// Concordant/discordant pair counts in O(n log n). Pairs tied on either
/// variable count as neither.
ConcordanceCounts concordance(std::span<const JudgedPair> pairs);

/// Stuart's tau-c scaled by 100: 100 * 2m(C - D) / (n^2 (m - 1)).
/// Throws InvalidInput for fewer than two pairs or when m < 2.
double kendall_tau_c(std::span<const JudgedPair> pairs);

struct Judgment {
    std::string candidate;
    std::vector<std::string> references;
    std::string image_ref;
    int rating = 0;
};

struct RatingRange {
    int min = 1;
    int max = 4;
};

/// Parses `{"candidate":..., "references":[...], "image_ref":..., "rating":int}` lines.
std::vector<Judgment> parse_judgments(std::string_view jsonl, RatingRange range = {});

struct CorrelationRow {
    std::string metric;
    double tau_c = 0.0;
};

/// Names accepted: bleu4, rougeL, ciderD, meteor, clipscore, hybrid
/// (= clipscore+ciderD) and clipscore+<ngram metric>.
std::vector<CorrelationRow> correlate_metrics(std::span<const Judgment> judgments,
                                              std::span<const std::string> metrics, const EmbeddingStore* store);

nlohmann::ordered_json to_json(std::span<const CorrelationRow> rows);

} // namespace capbias
