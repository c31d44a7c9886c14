#include "capbias/ngram_metrics.hpp"

#include "capbias/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace capbias {

std::string_view to_string(Metric m) {
    switch (m) {
    case Metric::bleu4: return "bleu4";
    case Metric::rougeL: return "rougeL";
    case Metric::ciderD: return "ciderD";
    case Metric::meteor: return "meteor";
    case Metric::clipscore: return "clipscore";
    case Metric::hybrid: return "hybrid";
    }
    return "?";
}

Metric parse_metric(std::string_view s) {
    for (const Metric m : {Metric::bleu4, Metric::rougeL, Metric::ciderD, Metric::meteor, Metric::clipscore,
                           Metric::hybrid}) {
        if (to_string(m) == s) return m;
    }
    throw InvalidInput("unknown metric '" + std::string(s) + "'");
}

double metric_upper_bound(Metric m) {
    switch (m) {
    case Metric::bleu4:
    case Metric::rougeL:
    case Metric::meteor: return 1.0;
    case Metric::clipscore: return 2.5;
    case Metric::ciderD: return 10.0;
    case Metric::hybrid: return 12.5;
    }
    return 0.0;
}

NGramProfile NGramProfile::of(const TokenSeq& tokens) {
    NGramProfile p;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        std::string gram;
        for (int n = 1; n <= kMaxNgram && i + n <= tokens.size(); ++n) {
            if (n > 1) gram.push_back(' ');
            gram += tokens[i + n - 1];
            ++p.counts[n - 1][gram];
        }
    }
    return p;
}

std::size_t IdfTable::df(const std::string& gram) const {
    auto it = df_.find(gram);
    return it == df_.end() ? 0 : it->second;
}

double IdfTable::idf(const std::string& gram) const {
    auto it = df_.find(gram);
    if (it == df_.end()) return 0.0;
    return log_doc_count_ - std::log(static_cast<double>(it->second));
}

IdfTable build_idf(std::span<const std::vector<TokenSeq>> reference_corpus) {
    IdfTable t;
    t.doc_count_ = reference_corpus.size();
    t.log_doc_count_ = t.doc_count_ > 0 ? std::log(static_cast<double>(t.doc_count_)) : 0.0;
    for (const auto& refs : reference_corpus) {
        std::set<std::string> seen;
        for (const auto& ref : refs) {
            const auto prof = NGramProfile::of(ref);
            for (const auto& by_n : prof.counts) {
                for (const auto& [gram, _] : by_n) seen.insert(gram);
            }
        }
        for (const auto& g : seen) ++t.df_[g];
    }
    return t;
}

namespace {

void check_inputs(const TokenSeq& candidate, std::span<const TokenSeq> references) {
    if (candidate.empty()) throw InvalidInput("candidate is empty");
    const bool any = std::any_of(references.begin(), references.end(), [](const auto& r) { return !r.empty(); });
    if (!any) throw InvalidInput("no non-empty reference");
}

constexpr double kBleuEpsilon = 1e-9;

} // namespace

MetricScore bleu4(const TokenSeq& candidate, std::span<const TokenSeq> references) {
    check_inputs(candidate, references);
    const auto cand = NGramProfile::of(candidate);

    std::array<std::map<std::string, int>, kMaxNgram> max_ref;
    for (const auto& ref : references) {
        const auto prof = NGramProfile::of(ref);
        for (int n = 0; n < kMaxNgram; ++n) {
            for (const auto& [gram, cnt] : prof.counts[n]) {
                auto& slot = max_ref[n][gram];
                slot = std::max(slot, cnt);
            }
        }
    }

    double log_sum = 0.0;
    for (int n = 0; n < kMaxNgram; ++n) {
        long total = 0;
        long clipped = 0;
        for (const auto& [gram, cnt] : cand.counts[n]) {
            total += cnt;
            auto it = max_ref[n].find(gram);
            if (it != max_ref[n].end()) clipped += std::min(cnt, it->second);
        }
        const double p = (total == 0 || clipped == 0) ? kBleuEpsilon
                                                      : static_cast<double>(clipped) / static_cast<double>(total);
        log_sum += std::log(p);
    }

    // Closest reference length; ties go to the shorter reference.
    const auto c = static_cast<long>(candidate.size());
    long r = -1;
    for (const auto& ref : references) {
        if (ref.empty()) continue;
        const auto len = static_cast<long>(ref.size());
        if (r < 0 || std::labs(len - c) < std::labs(r - c) || (std::labs(len - c) == std::labs(r - c) && len < r)) {
            r = len;
        }
    }
    const double bp = c >= r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
    return {Metric::bleu4, bp * std::exp(log_sum / kMaxNgram)};
}

namespace {

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0);
    std::vector<std::size_t> cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

} // namespace

MetricScore rouge_l(const TokenSeq& candidate, std::span<const TokenSeq> references) {
    check_inputs(candidate, references);
    constexpr double beta = 1.2;
    double best = 0.0;
    for (const auto& ref : references) {
        if (ref.empty()) continue;
        const auto lcs = static_cast<double>(lcs_length(candidate, ref));
        if (lcs == 0.0) continue;
        const double p = lcs / static_cast<double>(candidate.size());
        const double r = lcs / static_cast<double>(ref.size());
        const double f = (1.0 + beta * beta) * p * r / (r + beta * beta * p);
        best = std::max(best, f);
    }
    return {Metric::rougeL, best};
}

namespace {

struct TfIdfVector {
    std::array<std::map<std::string, double>, kMaxNgram> weights;
    std::array<double, kMaxNgram> norms{};
    std::size_t length = 0;
};

TfIdfVector tfidf(const TokenSeq& tokens, const IdfTable& idf) {
    TfIdfVector v;
    const auto prof = NGramProfile::of(tokens);
    for (int n = 0; n < kMaxNgram; ++n) {
        double sq = 0.0;
        for (const auto& [gram, tf] : prof.counts[n]) {
            const double w = static_cast<double>(tf) * idf.idf(gram);
            v.weights[n][gram] = w;
            sq += w * w;
        }
        v.norms[n] = std::sqrt(sq);
    }
    v.length = tokens.size();
    return v;
}

constexpr double kCiderSigma = 6.0;

double cider_pair(const TfIdfVector& hyp, const TfIdfVector& ref) {
    const double delta = static_cast<double>(hyp.length) - static_cast<double>(ref.length);
    const double penalty = std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
    double sum = 0.0;
    for (int n = 0; n < kMaxNgram; ++n) {
        double val = 0.0;
        for (const auto& [gram, wh] : hyp.weights[n]) {
            auto it = ref.weights[n].find(gram);
            if (it == ref.weights[n].end()) continue;
            val += std::min(wh, it->second) * it->second;
        }
        if (hyp.norms[n] != 0.0 && ref.norms[n] != 0.0) val /= hyp.norms[n] * ref.norms[n];
        else val = 0.0;
        sum += val * penalty;
    }
    return sum / kMaxNgram;
}

} // namespace

MetricScore cider_d(const TokenSeq& candidate, std::span<const TokenSeq> references, const IdfTable& idf) {
    if (idf.doc_count() == 0) throw InvalidInput("idf table is empty");
    check_inputs(candidate, references);
    const auto hyp = tfidf(candidate, idf);
    double total = 0.0;
    for (const auto& ref : references) total += cider_pair(hyp, tfidf(ref, idf));
    return {Metric::ciderD, 10.0 * total / static_cast<double>(references.size())};
}

namespace {

// Finds, stage by stage, the alignment with the most matches and, among
// those, the fewest chunks. Each stage is an exhaustive search bounded by a
// node budget; past the budget the best alignment found so far is kept.
class MeteorAligner {
  public:
    MeteorAligner(const TokenSeq& hyp, const TokenSeq& ref)
        : hyp_(hyp), ref_(ref), h2r_(hyp.size(), -1), ref_used_(ref.size(), 0) {}

    MeteorAlignment run() {
        run_stage([this](std::size_t i, std::size_t j) { return hyp_[i] == ref_[j]; });
        std::vector<std::string> hs;
        std::vector<std::string> rs;
        for (const auto& t : hyp_) hs.push_back(stem(t));
        for (const auto& t : ref_) rs.push_back(stem(t));
        run_stage([&](std::size_t i, std::size_t j) { return hs[i] == rs[j]; });

        MeteorAlignment out;
        out.chunks = count_chunks(h2r_, hyp_.size());
        for (const int j : h2r_) out.matches += j >= 0 ? 1 : 0;
        return out;
    }

  private:
    template <class Match>
    void run_stage(Match match) {
        edges_.assign(hyp_.size(), {});
        for (std::size_t i = 0; i < hyp_.size(); ++i) {
            if (h2r_[i] >= 0) continue;
            for (std::size_t j = 0; j < ref_.size(); ++j) {
                if (!ref_used_[j] && match(i, j)) edges_[i].push_back(static_cast<int>(j));
            }
        }
        best_matches_ = 0;
        best_chunks_ = std::numeric_limits<std::size_t>::max();
        best_ = h2r_;
        work_ = h2r_;
        used_ = ref_used_;
        nodes_ = 0;
        search(0, 0, 0, -2, -2);
        h2r_ = best_;
        for (const int j : h2r_) {
            if (j >= 0) ref_used_[static_cast<std::size_t>(j)] = 1;
        }
    }

    // Matches still possible from hyp position i onward (optimistic).
    std::size_t reachable(std::size_t i) const {
        std::size_t n = 0;
        for (; i < hyp_.size(); ++i) {
            if (work_[i] >= 0) continue;
            for (const int j : edges_[i]) {
                if (!used_[static_cast<std::size_t>(j)]) {
                    ++n;
                    break;
                }
            }
        }
        return n;
    }

    void search(std::size_t i, std::size_t matched, std::size_t chunks, int prev_h, int prev_r) {
        if (++nodes_ > kNodeBudget && best_chunks_ != std::numeric_limits<std::size_t>::max()) return;
        if (matched + reachable(i) < best_matches_) return;
        if (matched + reachable(i) == best_matches_ && chunks >= best_chunks_) return;
        if (i == hyp_.size()) {
            if (matched > best_matches_ || (matched == best_matches_ && chunks < best_chunks_)) {
                best_matches_ = matched;
                best_chunks_ = chunks;
                best_ = work_;
            }
            return;
        }
        auto step = [&](int j) {
            const bool extends = prev_h == static_cast<int>(i) - 1 && prev_r == j - 1;
            return extends ? chunks : chunks + 1;
        };
        if (work_[i] >= 0) {
            // Fixed by an earlier stage.
            const int j = work_[i];
            search(i + 1, matched, step(j), static_cast<int>(i), j);
            return;
        }
        for (const int j : edges_[i]) {
            auto& u = used_[static_cast<std::size_t>(j)];
            if (u) continue;
            u = 1;
            work_[i] = j;
            search(i + 1, matched + 1, step(j), static_cast<int>(i), j);
            work_[i] = -1;
            u = 0;
        }
        search(i + 1, matched, chunks, prev_h, prev_r);
    }

    static std::size_t count_chunks(const std::vector<int>& h2r, std::size_t n) {
        std::size_t chunks = 0;
        int prev_h = -2;
        int prev_r = -2;
        for (std::size_t i = 0; i < n; ++i) {
            const int j = h2r[i];
            if (j < 0) continue;
            if (!(prev_h == static_cast<int>(i) - 1 && prev_r == j - 1)) ++chunks;
            prev_h = static_cast<int>(i);
            prev_r = j;
        }
        return chunks;
    }

    static constexpr std::size_t kNodeBudget = 200000;

    const TokenSeq& hyp_;
    const TokenSeq& ref_;
    std::vector<int> h2r_;
    std::vector<char> ref_used_;

    std::vector<std::vector<int>> edges_;
    std::vector<int> work_;
    std::vector<int> best_;
    std::vector<char> used_;
    std::size_t best_matches_ = 0;
    std::size_t best_chunks_ = 0;
    std::size_t nodes_ = 0;
};

constexpr double kMeteorAlpha = 0.9;
constexpr double kMeteorBeta = 3.0;
constexpr double kMeteorGamma = 0.5;

} // namespace

MeteorAlignment meteor_align(const TokenSeq& candidate, const TokenSeq& reference) {
    return MeteorAligner(candidate, reference).run();
}

MetricScore meteor(const TokenSeq& candidate, std::span<const TokenSeq> references) {
    check_inputs(candidate, references);
    double best = 0.0;
    for (const auto& ref : references) {
        if (ref.empty()) continue;
        const auto a = meteor_align(candidate, ref);
        if (a.matches == 0) continue;
        const double m = static_cast<double>(a.matches);
        const double p = m / static_cast<double>(candidate.size());
        const double r = m / static_cast<double>(ref.size());
        const double fmean = p * r / (kMeteorAlpha * p + (1.0 - kMeteorAlpha) * r);
        const double penalty = kMeteorGamma * std::pow(static_cast<double>(a.chunks) / m, kMeteorBeta);
        best = std::max(best, fmean * (1.0 - penalty));
    }
    return {Metric::meteor, best};
}

MetricScore score_ngram(Metric m, const TokenSeq& candidate, std::span<const TokenSeq> references,
                        const IdfTable* idf) {
    switch (m) {
    case Metric::bleu4: return bleu4(candidate, references);
    case Metric::rougeL: return rouge_l(candidate, references);
    case Metric::meteor: return meteor(candidate, references);
    case Metric::ciderD:
        if (idf == nullptr) throw InvalidInput("ciderD needs an idf table");
        return cider_d(candidate, references, *idf);
    default:
        throw InvalidInput("not an n-gram metric: " + std::string(to_string(m)));
    }
}

} // namespace capbias
