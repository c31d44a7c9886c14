#include "capbias/correlation.hpp"

#include "capbias/errors.hpp"
#include "capbias/io.hpp"
#include "capbias/tokenize.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>

namespace capbias {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

class Fenwick {
  public:
    explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}

    void add(std::size_t i) {
        for (++i; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
    }

    // Count of inserted ranks < i.
    long long prefix(std::size_t i) const {
        long long s = 0;
        for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
        return s;
    }

  private:
    std::vector<long long> tree_;
};

} // namespace

ConcordanceCounts concordance(std::span<const JudgedPair> pairs) {
    ConcordanceCounts c;
    c.n = pairs.size();
    if (pairs.empty()) return c;

    std::vector<int> levels;
    levels.reserve(pairs.size());
    for (const auto& p : pairs) levels.push_back(p.human_rating);
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());

    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return pairs[a].metric_score < pairs[b].metric_score; });

    auto rank_of = [&](int rating) {
        return static_cast<std::size_t>(std::lower_bound(levels.begin(), levels.end(), rating) - levels.begin());
    };

    Fenwick seen(levels.size());
    long long inserted = 0;
    std::size_t distinct_scores = 0;
    for (std::size_t lo = 0; lo < order.size();) {
        std::size_t hi = lo;
        while (hi < order.size() && pairs[order[hi]].metric_score == pairs[order[lo]].metric_score) ++hi;
        ++distinct_scores;
        // Everything already inserted has a strictly smaller score.
        for (std::size_t k = lo; k < hi; ++k) {
            const auto r = rank_of(pairs[order[k]].human_rating);
            const long long below = seen.prefix(r);
            const long long at_or_below = seen.prefix(r + 1);
            c.concordant += below;
            c.discordant += inserted - at_or_below;
        }
        for (std::size_t k = lo; k < hi; ++k) seen.add(rank_of(pairs[order[k]].human_rating));
        inserted += static_cast<long long>(hi - lo);
        lo = hi;
    }
    c.m = std::min(distinct_scores, levels.size());
    return c;
}

double kendall_tau_c(std::span<const JudgedPair> pairs) {
    if (pairs.size() < 2) throw InvalidInput("tau-c needs at least two pairs");
    for (const auto& p : pairs) {
        if (!std::isfinite(p.metric_score)) throw InvalidInput("non-finite metric score");
    }
    const auto c = concordance(pairs);
    if (c.m < 2) throw InvalidInput("tau-c is undefined when all ratings (or all scores) are identical");
    const double n = static_cast<double>(c.n);
    const double m = static_cast<double>(c.m);
    return 100.0 * 2.0 * m * static_cast<double>(c.concordant - c.discordant) / (n * n * (m - 1.0));
}

std::vector<Judgment> parse_judgments(std::string_view jsonl, RatingRange range) {
    std::vector<Judgment> out;
    for (const auto line : jsonl_lines(jsonl)) {
        Judgment j;
        try {
            const auto doc = json::parse(line);
            j.candidate = doc.at("candidate").get<std::string>();
            j.references = doc.at("references").get<std::vector<std::string>>();
            j.image_ref = doc.at("image_ref").get<std::string>();
            j.rating = doc.at("rating").get<int>();
        } catch (const json::exception& e) {
            throw LoadError(std::string("malformed judgment line: ") + e.what());
        }
        if (j.rating < range.min || j.rating > range.max) {
            throw LoadError("rating " + std::to_string(j.rating) + " outside [" + std::to_string(range.min) + ", " +
                            std::to_string(range.max) + "]");
        }
        out.push_back(std::move(j));
    }
    return out;
}

namespace {

struct MetricSpec {
    bool clip = false;
    std::optional<Metric> ngram;
};

MetricSpec parse_spec(const std::string& name) {
    if (name == "hybrid") return {true, Metric::ciderD};
    if (name == "clipscore") return {true, std::nullopt};
    const std::string prefix = "clipscore+";
    if (name.starts_with(prefix)) {
        const auto m = parse_metric(name.substr(prefix.size()));
        if (m == Metric::clipscore || m == Metric::hybrid) throw InvalidInput("cannot compose '" + name + "'");
        return {true, m};
    }
    return {false, parse_metric(name)};
}

} // namespace

std::vector<CorrelationRow> correlate_metrics(std::span<const Judgment> judgments,
                                              std::span<const std::string> metrics, const EmbeddingStore* store) {
    std::vector<MetricSpec> specs;
    bool need_clip = false;
    bool need_idf = false;
    for (const auto& name : metrics) {
        specs.push_back(parse_spec(name));
        need_clip = need_clip || specs.back().clip;
        need_idf = need_idf || specs.back().ngram == Metric::ciderD;
    }

    if (need_clip) {
        if (store == nullptr) throw ConfigError("model-based metric requested but no embeddings were supplied");
        std::vector<std::string> missing;
        for (const auto& j : judgments) {
            if (!store->contains(j.image_ref)) missing.push_back(j.image_ref);
            if (!store->contains(text_key(j.candidate))) missing.push_back(text_key(j.candidate));
        }
        if (!missing.empty()) {
            std::sort(missing.begin(), missing.end());
            missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
            std::string msg = "missing embeddings:";
            for (std::size_t i = 0; i < missing.size() && i < 10; ++i) msg += " " + missing[i];
            if (missing.size() > 10) msg += " (+" + std::to_string(missing.size() - 10) + " more)";
            throw ConfigError(msg);
        }
    }

    std::vector<TokenSeq> candidates;
    std::vector<std::vector<TokenSeq>> references;
    candidates.reserve(judgments.size());
    references.reserve(judgments.size());
    for (const auto& j : judgments) {
        candidates.push_back(tokenize(j.candidate));
        std::vector<TokenSeq> refs;
        for (const auto& r : j.references) refs.push_back(tokenize(r));
        references.push_back(std::move(refs));
    }

    IdfTable idf;
    if (need_idf) {
        // One document per image; repeated judgments of an image share its references.
        std::map<std::string, std::size_t> first_row;
        for (std::size_t i = 0; i < judgments.size(); ++i) first_row.try_emplace(judgments[i].image_ref, i);
        std::vector<std::vector<TokenSeq>> docs;
        for (const auto& [_, row] : first_row) docs.push_back(references[row]);
        idf = build_idf(docs);
    }

    std::vector<CorrelationRow> rows;
    for (std::size_t s = 0; s < specs.size(); ++s) {
        std::vector<JudgedPair> pairs;
        pairs.reserve(judgments.size());
        for (std::size_t i = 0; i < judgments.size(); ++i) {
            double score = 0.0;
            if (specs[s].clip) {
                score += clipscore(store->at(text_key(judgments[i].candidate)), store->at(judgments[i].image_ref)).value;
            }
            if (specs[s].ngram) score += score_ngram(*specs[s].ngram, candidates[i], references[i], &idf).value;
            pairs.push_back({score, judgments[i].rating});
        }
        rows.push_back({metrics[s], kendall_tau_c(pairs)});
    }
    return rows;
}

ordered_json to_json(std::span<const CorrelationRow> rows) {
    ordered_json arr = ordered_json::array();
    for (const auto& r : rows) arr.push_back({{"metric", r.metric}, {"tau_c", r.tau_c}});
    return arr;
}

} // namespace capbias
