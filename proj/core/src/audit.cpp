#include "capbias/audit.hpp"

#include "capbias/errors.hpp"
#include "capbias/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <unordered_map>

namespace capbias {

using nlohmann::json;
using nlohmann::ordered_json;

std::string score_record_to_jsonl(const ScoreRecord& r) {
    ordered_json j;
    j["instance_id"] = r.instance_id;
    j["metric"] = to_string(r.metric);
    j["score_good"] = r.score_good;
    j["score_bad"] = r.score_bad;
    return j.dump();
}

ScoreRecord score_record_from_jsonl(std::string_view line) {
    try {
        const auto j = json::parse(line);
        ScoreRecord r;
        r.instance_id = j.at("instance_id").get<std::string>();
        r.metric = parse_metric(j.at("metric").get<std::string>());
        r.score_good = j.at("score_good").get<double>();
        r.score_bad = j.at("score_bad").get<double>();
        if (!std::isfinite(r.score_good) || !std::isfinite(r.score_bad)) {
            throw LoadError("non-finite score for " + r.instance_id);
        }
        return r;
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed score line: ") + e.what());
    } catch (const InvalidInput& e) {
        throw LoadError(std::string("malformed score line: ") + e.what());
    }
}

namespace {

std::string cell_key(Gender g, const Concept& c) {
    return std::string(to_string(c.category)) + "/" + c.word + "/" + std::string(to_string(g));
}

std::size_t count_wins(std::span<const ScoreRecord> records) {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [](const ScoreRecord& r) { return r.good_wins(); }));
}

} // namespace

AuditCell accuracy(std::span<const ScoreRecord> records, Gender gender, const Concept& subject) {
    if (records.empty()) throw InsufficientData("no records for cell " + cell_key(gender, subject), cell_key(gender, subject));
    AuditCell cell;
    cell.gender = gender;
    cell.subject = subject;
    cell.n = records.size();
    cell.wins = count_wins(records);
    cell.accuracy = static_cast<double>(cell.wins) / static_cast<double>(cell.n);
    return cell;
}

std::string_view to_string(BiasLabel l) {
    switch (l) {
    case BiasLabel::man_biased: return "man_biased";
    case BiasLabel::woman_biased: return "woman_biased";
    case BiasLabel::neutral: return "neutral";
    }
    return "?";
}

BiasLabel parse_bias_label(std::string_view s) {
    if (s == "man_biased") return BiasLabel::man_biased;
    if (s == "woman_biased") return BiasLabel::woman_biased;
    if (s == "neutral") return BiasLabel::neutral;
    throw InvalidInput("unknown bias label '" + std::string(s) + "'");
}

double bootstrap_gap_p_value(std::size_t successes_a, std::size_t n_a, std::size_t successes_b, std::size_t n_b,
                             std::size_t samples, std::uint64_t seed) {
    if (n_a == 0 || n_b == 0) throw InsufficientData("bootstrap needs two non-empty groups", "");
    if (samples == 0) throw InvalidInput("bootstrap needs at least one replicate");
    std::mt19937_64 rng(seed);
    std::binomial_distribution<std::size_t> draw_a(n_a, static_cast<double>(successes_a) / static_cast<double>(n_a));
    std::binomial_distribution<std::size_t> draw_b(n_b, static_cast<double>(successes_b) / static_cast<double>(n_b));
    std::size_t le = 0;
    std::size_t ge = 0;
    for (std::size_t s = 0; s < samples; ++s) {
        const std::size_t xa = draw_a(rng);
        const std::size_t xb = draw_b(rng);
        // Compare xb/n_b with xa/n_a without rounding.
        const auto lhs = static_cast<unsigned long long>(xb) * n_a;
        const auto rhs = static_cast<unsigned long long>(xa) * n_b;
        if (lhs <= rhs) ++le;
        if (lhs >= rhs) ++ge;
    }
    const double p = 2.0 * static_cast<double>(std::min(le, ge)) / static_cast<double>(samples);
    return std::clamp(p, 0.0, 1.0);
}

RateInterval bootstrap_rate_interval(std::size_t successes, std::size_t n, std::size_t samples, std::uint64_t seed,
                                     double confidence) {
    if (n == 0) throw InsufficientData("bootstrap needs a non-empty group", "");
    if (samples == 0) throw InvalidInput("bootstrap needs at least one replicate");
    std::mt19937_64 rng(seed);
    std::binomial_distribution<std::size_t> draw(n, static_cast<double>(successes) / static_cast<double>(n));
    std::vector<std::size_t> hist(n + 1, 0);
    for (std::size_t s = 0; s < samples; ++s) ++hist[draw(rng)];

    const double tail = (1.0 - confidence) / 2.0;
    auto quantile = [&](double q) {
        // Smallest count whose cumulative frequency reaches q.
        const double target = q * static_cast<double>(samples);
        std::size_t cum = 0;
        for (std::size_t k = 0; k <= n; ++k) {
            cum += hist[k];
            if (static_cast<double>(cum) >= target && cum > 0) return static_cast<double>(k) / static_cast<double>(n);
        }
        return 1.0;
    };
    return {quantile(tail), quantile(1.0 - tail)};
}

BiasVerdict bootstrap_bias_test(std::span<const ScoreRecord> records_man, std::span<const ScoreRecord> records_woman,
                                std::size_t samples, std::uint64_t seed, double alpha) {
    if (records_man.empty()) throw InsufficientData("no records for the man cell", "man");
    if (records_woman.empty()) throw InsufficientData("no records for the woman cell", "woman");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("alpha must lie in (0, 1)");

    const std::size_t wins_m = count_wins(records_man);
    const std::size_t wins_w = count_wins(records_woman);
    BiasVerdict v;
    v.acc_man = static_cast<double>(wins_m) / static_cast<double>(records_man.size());
    v.acc_woman = static_cast<double>(wins_w) / static_cast<double>(records_woman.size());
    v.p_value = bootstrap_gap_p_value(wins_m, records_man.size(), wins_w, records_woman.size(), samples, seed);
    if (v.p_value < alpha) {
        if (v.acc_woman > v.acc_man) v.label = BiasLabel::woman_biased;
        else if (v.acc_man > v.acc_woman) v.label = BiasLabel::man_biased;
    }
    return v;
}

const CategorySummary& BiasSummary::of(Category c) const {
    switch (c) {
    case Category::profession: return profession;
    case Category::activity: return activity;
    case Category::object: return object;
    }
    return overall;
}

namespace {

void finish(CategorySummary& s) {
    s.percent = s.concepts == 0 ? 0.0 : 100.0 * static_cast<double>(s.biased) / static_cast<double>(s.concepts);
}

} // namespace

BiasSummary summarize(std::span<const BiasVerdict> verdicts, const std::set<std::string>& exclude) {
    BiasSummary s;
    std::set<std::string> excluded;
    for (const auto& v : verdicts) {
        if (exclude.count(v.subject.word) > 0) {
            excluded.insert(v.subject.word);
            continue;
        }
        CategorySummary* slot = &s.profession;
        if (v.subject.category == Category::activity) slot = &s.activity;
        if (v.subject.category == Category::object) slot = &s.object;
        const bool biased = v.label != BiasLabel::neutral;
        slot->concepts += 1;
        slot->biased += biased ? 1 : 0;
        s.overall.concepts += 1;
        s.overall.biased += biased ? 1 : 0;
    }
    finish(s.profession);
    finish(s.activity);
    finish(s.object);
    finish(s.overall);
    s.excluded.assign(excluded.begin(), excluded.end());
    return s;
}

double cohen_kappa(std::span<const int> labels_a, std::span<const int> labels_b) {
    if (labels_a.size() != labels_b.size()) throw InvalidInput("label lists differ in length");
    if (labels_a.empty()) throw InvalidInput("label lists are empty");
    std::size_t agree = 0;
    std::size_t ones_a = 0;
    std::size_t ones_b = 0;
    for (std::size_t i = 0; i < labels_a.size(); ++i) {
        const int a = labels_a[i];
        const int b = labels_b[i];
        if ((a != 0 && a != 1) || (b != 0 && b != 1)) throw InvalidInput("labels must be 0 or 1");
        agree += a == b ? 1 : 0;
        ones_a += static_cast<std::size_t>(a);
        ones_b += static_cast<std::size_t>(b);
    }
    const double n = static_cast<double>(labels_a.size());
    const double po = static_cast<double>(agree) / n;
    const double pa = static_cast<double>(ones_a) / n;
    const double pb = static_cast<double>(ones_b) / n;
    const double pe = pa * pb + (1.0 - pa) * (1.0 - pb);
    if (pe == 1.0) return 1.0;
    return (po - pe) / (1.0 - pe);
}

MetricAudit audit_metric(Metric metric, std::span<const ScoreRecord> records, std::span<const Instance> manifest,
                         const AuditOptions& opts) {
    std::unordered_map<std::string, const Instance*> by_id;
    by_id.reserve(manifest.size());
    std::vector<Concept> order;
    std::map<Concept, std::size_t> index;
    std::set<std::string> excluded_present;
    for (const auto& inst : manifest) {
        by_id.emplace(inst.id, &inst);
        const auto& c = inst.triple.subject;
        if (opts.exclude.count(c.word) > 0) {
            excluded_present.insert(c.word);
            continue;
        }
        if (index.try_emplace(c, order.size()).second) order.push_back(c);
    }

    std::vector<std::vector<ScoreRecord>> man(order.size());
    std::vector<std::vector<ScoreRecord>> woman(order.size());
    for (const auto& r : records) {
        if (r.metric != metric) continue;
        auto it = by_id.find(r.instance_id);
        if (it == by_id.end()) throw InvalidInput("score record for unknown instance '" + r.instance_id + "'");
        const auto& t = it->second->triple;
        auto ci = index.find(t.subject);
        if (ci == index.end()) continue;  // excluded
        (t.gender == Gender::man ? man : woman)[ci->second].push_back(r);
    }

    MetricAudit out;
    out.metric = metric;
    std::vector<std::size_t> tested;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (man[i].empty() || woman[i].empty()) out.skipped.push_back(order[i].word);
        else tested.push_back(i);
    }
    out.alpha_used = opts.bonferroni && !tested.empty() ? opts.alpha / static_cast<double>(tested.size()) : opts.alpha;

    out.concepts.resize(tested.size());
    parallel_for(tested.size(), opts.threads, [&](std::size_t k) {
        const std::size_t i = tested[k];
        const auto& c = order[i];
        ConceptAudit ca;
        ca.man = accuracy(man[i], Gender::man, c);
        ca.woman = accuracy(woman[i], Gender::woman, c);
        const auto seed = derive_seed(opts.seed, c.word + "|" + std::string(to_string(metric)));
        ca.verdict = bootstrap_bias_test(man[i], woman[i], opts.bootstrap_samples, seed, out.alpha_used);
        ca.verdict.subject = c;
        out.concepts[k] = std::move(ca);
    });

    std::vector<BiasVerdict> verdicts;
    verdicts.reserve(out.concepts.size());
    for (const auto& ca : out.concepts) verdicts.push_back(ca.verdict);
    out.summary = summarize(verdicts);
    out.summary.excluded.assign(excluded_present.begin(), excluded_present.end());
    return out;
}

ordered_json to_json(const BiasSummary& s) {
    auto cat = [](const CategorySummary& c) {
        ordered_json j;
        j["concepts"] = c.concepts;
        j["biased"] = c.biased;
        j["percent"] = c.percent;
        return j;
    };
    ordered_json j;
    j["profession"] = cat(s.profession);
    j["activity"] = cat(s.activity);
    j["object"] = cat(s.object);
    j["overall"] = cat(s.overall);
    j["excluded"] = s.excluded;
    return j;
}

ordered_json to_json(const MetricAudit& a) {
    ordered_json j;
    j["metric"] = to_string(a.metric);
    j["alpha"] = a.alpha_used;
    j["summary"] = to_json(a.summary);
    ordered_json verdicts = ordered_json::array();
    for (const auto& ca : a.concepts) {
        ordered_json v;
        v["concept"] = ca.verdict.subject.word;
        v["category"] = to_string(ca.verdict.subject.category);
        v["label"] = to_string(ca.verdict.label);
        v["p_value"] = ca.verdict.p_value;
        v["acc_man"] = ca.verdict.acc_man;
        v["acc_woman"] = ca.verdict.acc_woman;
        v["n_man"] = ca.man.n;
        v["n_woman"] = ca.woman.n;
        verdicts.push_back(std::move(v));
    }
    j["verdicts"] = std::move(verdicts);
    ordered_json scatter = ordered_json::array();
    for (const auto& ca : a.concepts) {
        scatter.push_back({{"concept", ca.verdict.subject.word},
                           {"category", to_string(ca.verdict.subject.category)},
                           {"x", ca.verdict.acc_man},
                           {"y", ca.verdict.acc_woman},
                           {"label", to_string(ca.verdict.label)}});
    }
    j["scatter"] = std::move(scatter);
    j["skipped"] = a.skipped;
    return j;
}

} // namespace capbias
