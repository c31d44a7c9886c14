#pragma once

#include "capbias/corpus.hpp"
#include "capbias/ngram_metrics.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace capbias {

/// Scores of the good and bad candidate of one instance under one metric.
struct ScoreRecord {
    std::string instance_id;
    Metric metric = Metric::bleu4;
    double score_good = 0.0;
    double score_bad = 0.0;

    bool good_wins() const { return score_good > score_bad; }
};

std::string score_record_to_jsonl(const ScoreRecord& r);
ScoreRecord score_record_from_jsonl(std::string_view line);

/// Pairwise accuracy of one (gender, concept) cell. Ties count as losses.
struct AuditCell {
    Gender gender = Gender::man;
    Concept subject;
    std::size_t n = 0;
    std::size_t wins = 0;
    double accuracy = 0.0;
};

AuditCell accuracy(std::span<const ScoreRecord> records, Gender gender, const Concept& subject);

enum class BiasLabel { man_biased, woman_biased, neutral };

std::string_view to_string(BiasLabel l);
BiasLabel parse_bias_label(std::string_view s);

struct BiasVerdict {
    Concept subject;
    BiasLabel label = BiasLabel::neutral;
    double p_value = 1.0;
    double acc_man = 0.0;
    double acc_woman = 0.0;
};

/// Two-sided bootstrap p-value for the gap between two success rates.
///
/// Each of the `samples` replicates resamples both groups with replacement
/// (independently) and records delta = rate_b - rate_a. The number of
/// successes in a with-replacement resample of n indicators holding k
/// successes is Binomial(n, k/n), so the replicate is drawn that way.
/// p = 2 * min(P(delta <= 0), P(delta >= 0)), clipped to [0, 1].
double bootstrap_gap_p_value(std::size_t successes_a, std::size_t n_a, std::size_t successes_b, std::size_t n_b,
                             std::size_t samples, std::uint64_t seed);

/// Percentile interval of a success rate under bootstrap resampling.
struct RateInterval {
    double low = 0.0;
    double high = 0.0;
};

RateInterval bootstrap_rate_interval(std::size_t successes, std::size_t n, std::size_t samples, std::uint64_t seed,
                                     double confidence = 0.95);

/// Man-/woman-biased classification of one concept. Throws InsufficientData
/// when either cell is empty.
BiasVerdict bootstrap_bias_test(std::span<const ScoreRecord> records_man, std::span<const ScoreRecord> records_woman,
                                std::size_t samples, std::uint64_t seed, double alpha);

struct CategorySummary {
    std::size_t concepts = 0;
    std::size_t biased = 0;
    double percent = 0.0;
};

struct BiasSummary {
    CategorySummary profession;
    CategorySummary activity;
    CategorySummary object;
    CategorySummary overall;
    std::vector<std::string> excluded;

    const CategorySummary& of(Category c) const;
};

/// Percentage of non-neutral concepts per category and overall, ignoring
/// concepts named in `exclude`.
BiasSummary summarize(std::span<const BiasVerdict> verdicts, const std::set<std::string>& exclude = {});

/// Chance-corrected agreement of two binary label lists.
double cohen_kappa(std::span<const int> labels_a, std::span<const int> labels_b);

struct AuditOptions {
    std::size_t bootstrap_samples = 10000;
    std::uint64_t seed = 0;
    double alpha = 0.05;
    bool bonferroni = false;
    std::set<std::string> exclude;
    unsigned threads = 1;
};

struct ConceptAudit {
    AuditCell man;
    AuditCell woman;
    BiasVerdict verdict;
};

struct MetricAudit {
    Metric metric = Metric::bleu4;
    std::vector<ConceptAudit> concepts;       // manifest concept order
    std::vector<std::string> skipped;         // concepts missing a gender cell
    double alpha_used = 0.05;
    BiasSummary summary;
};

/// Groups `records` (all of one metric) by the manifest's (gender, concept)
/// cells and runs the bootstrap test per concept. Bootstrap streams are seeded
/// from (seed, concept, metric), so results do not depend on `threads`.
MetricAudit audit_metric(Metric metric, std::span<const ScoreRecord> records, std::span<const Instance> manifest,
                         const AuditOptions& opts);

nlohmann::ordered_json to_json(const BiasSummary& s);
nlohmann::ordered_json to_json(const MetricAudit& a);

} // namespace capbias
