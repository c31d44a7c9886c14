#include "capbias/caption_analysis.hpp"

#include "capbias/audit.hpp"
#include "capbias/errors.hpp"
#include "capbias/io.hpp"
#include "capbias/parallel.hpp"
#include "capbias/tokenize.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>

namespace capbias {

using nlohmann::json;
using nlohmann::ordered_json;

GenderLexicon default_gender_lexicon() {
    return {
        {"man", "men", "male", "boy", "boys", "gentleman", "father", "husband", "his", "he"},
        {"woman", "women", "female", "girl", "girls", "lady", "mother", "wife", "her", "she"},
    };
}

GenderLexicon parse_gender_lexicon(std::string_view json_text) {
    GenderLexicon lex;
    try {
        const auto doc = json::parse(json_text);
        const auto male = doc.at("male").get<std::vector<std::string>>();
        const auto female = doc.at("female").get<std::vector<std::string>>();
        lex.male_words.insert(male.begin(), male.end());
        lex.female_words.insert(female.begin(), female.end());
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed gender lexicon: ") + e.what());
    }
    if (lex.male_words.empty() || lex.female_words.empty()) {
        throw ValidationError("gender lexicon lists must be non-empty", {});
    }
    std::vector<std::string> bad;
    for (const auto* set : {&lex.male_words, &lex.female_words}) {
        for (const auto& w : *set) {
            if (w.empty() || std::any_of(w.begin(), w.end(), [](char c) { return c >= 'A' && c <= 'Z'; })) {
                bad.push_back(w);
            }
        }
    }
    if (!bad.empty()) throw ValidationError("gender lexicon words must be non-empty and lowercase", bad);
    for (const auto& w : lex.male_words) {
        if (lex.female_words.count(w) > 0) bad.push_back(w);
    }
    if (!bad.empty()) throw ValidationError("gender lexicon lists overlap", bad);
    return lex;
}

GenderLexicon load_gender_lexicon(const std::filesystem::path& path) {
    return parse_gender_lexicon(read_text_file(path));
}

std::string_view to_string(GenderCall c) {
    switch (c) {
    case GenderCall::man: return "man";
    case GenderCall::woman: return "woman";
    case GenderCall::neutral: return "neutral";
    case GenderCall::mixed: return "mixed";
    }
    return "?";
}

std::string_view to_string(CorrectionStatus s) {
    switch (s) {
    case CorrectionStatus::corrected: return "corrected";
    case CorrectionStatus::already_correct: return "already_correct";
    case CorrectionStatus::not_applicable: return "not_applicable";
    }
    return "?";
}

namespace {

struct Mentions {
    bool male = false;
    bool female = false;
};

Mentions mentions(const TokenSeq& tokens, const GenderLexicon& lex) {
    Mentions m;
    for (const auto& t : tokens) {
        m.male = m.male || lex.male_words.count(t) > 0;
        m.female = m.female || lex.female_words.count(t) > 0;
    }
    return m;
}

GenderCall call_of(Mentions m) {
    if (m.male && m.female) return GenderCall::mixed;
    if (m.male) return GenderCall::man;
    if (m.female) return GenderCall::woman;
    return GenderCall::neutral;
}

GenderCall as_call(Gender g) {
    return g == Gender::man ? GenderCall::man : GenderCall::woman;
}

} // namespace

GenderCall detect_gender(std::string_view caption, const GenderLexicon& lex) {
    return call_of(mentions(tokenize(caption), lex));
}

GenderCall label_image_gender(std::span<const std::string> references, const GenderLexicon& lex) {
    Mentions any;
    for (const auto& ref : references) {
        const auto m = mentions(tokenize(ref), lex);
        any.male = any.male || m.male;
        any.female = any.female || m.female;
    }
    return call_of(any);
}

std::vector<SystemOutput> parse_system_outputs(std::string_view jsonl) {
    std::vector<SystemOutput> out;
    for (const auto line : jsonl_lines(jsonl)) {
        try {
            const auto j = json::parse(line);
            out.push_back({j.at("instance_id").get<std::string>(), j.at("caption").get<std::string>()});
        } catch (const json::exception& e) {
            throw LoadError(std::string("malformed system output line: ") + e.what());
        }
    }
    return out;
}

std::string system_output_to_jsonl(const SystemOutput& o) {
    ordered_json j;
    j["instance_id"] = o.instance_id;
    j["caption"] = o.caption;
    return j.dump();
}

namespace {

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

// Replaces the word inside a whitespace-delimited chunk, keeping surrounding
// punctuation and the capitalisation of the first letter.
std::string replace_in_chunk(std::string_view chunk, std::string_view replacement) {
    const auto keep = [](char c) { return std::string_view(".,!?;:'\"()[]").find(c) == std::string_view::npos; };
    std::size_t first = 0;
    while (first < chunk.size() && !keep(chunk[first])) ++first;
    std::size_t last = chunk.size();
    while (last > first && !keep(chunk[last - 1])) --last;
    std::string word(replacement);
    if (first < chunk.size() && chunk[first] >= 'A' && chunk[first] <= 'Z') word[0] = static_cast<char>(word[0] - 'a' + 'A');
    return std::string(chunk.substr(0, first)) + word + std::string(chunk.substr(last));
}

} // namespace

Correction correct_caption(std::string_view caption, Gender true_gender, const GenderLexicon& lex) {
    const auto tokens = tokenize(caption);
    const auto call = call_of(mentions(tokens, lex));
    if (call == as_call(true_gender)) return {std::string(caption), CorrectionStatus::already_correct};

    const std::string wrong(to_string(opposite(true_gender)));
    const std::string right(to_string(true_gender));
    const auto& own = true_gender == Gender::woman ? lex.female_words : lex.male_words;
    const auto& other = true_gender == Gender::woman ? lex.male_words : lex.female_words;

    bool has_wrong = false;
    for (const auto& t : tokens) {
        if (own.count(t) > 0) return {std::string(caption), CorrectionStatus::not_applicable};
        if (other.count(t) > 0) {
            if (t != wrong) return {std::string(caption), CorrectionStatus::not_applicable};
            has_wrong = true;
        }
    }
    if (!has_wrong) return {std::string(caption), CorrectionStatus::not_applicable};

    std::string out;
    std::size_t i = 0;
    while (i < caption.size()) {
        if (is_space(caption[i])) {
            out.push_back(caption[i++]);
            continue;
        }
        std::size_t j = i;
        while (j < caption.size() && !is_space(caption[j])) ++j;
        const auto chunk = caption.substr(i, j - i);
        const auto chunk_tokens = tokenize(chunk);
        if (chunk_tokens.size() == 1 && chunk_tokens[0] == wrong) out += replace_in_chunk(chunk, right);
        else out += chunk;
        i = j;
    }
    if (detect_gender(out, lex) != as_call(true_gender)) {
        return {std::string(caption), CorrectionStatus::not_applicable};
    }
    return {std::move(out), CorrectionStatus::corrected};
}

namespace {

void finish(GroupErrors& g) {
    if (g.evaluated > 0) g.rate = static_cast<double>(g.errors) / static_cast<double>(g.evaluated);
}

void tally(GroupErrors& g, bool error) {
    g.evaluated += 1;
    g.errors += error ? 1 : 0;
}

} // namespace

ErrorReport gender_error_rate(std::span<const SystemOutput> outputs, std::span<const Instance> manifest,
                              const GenderLexicon& lex, const ErrorOptions& opts) {
    std::unordered_map<std::string, const Instance*> by_id;
    by_id.reserve(manifest.size());
    for (const auto& inst : manifest) by_id.emplace(inst.id, &inst);

    ErrorReport r;
    std::map<Concept, std::size_t> index;
    for (const auto& o : outputs) {
        auto it = by_id.find(o.instance_id);
        if (it == by_id.end()) throw InvalidInput("system output for unknown instance '" + o.instance_id + "'");
        const auto& t = it->second->triple;
        r.total += 1;
        const auto call = detect_gender(o.caption, lex);
        if (call == GenderCall::neutral) {
            r.neutral += 1;
            continue;
        }
        if (call == GenderCall::mixed) {
            r.mixed += 1;
            continue;
        }
        const bool error = call == as_call(opposite(t.gender));
        if (error) r.flagged_ids.push_back(o.instance_id);
        tally(r.overall, error);
        tally(t.gender == Gender::man ? r.man : r.woman, error);
        auto [ci, inserted] = index.try_emplace(t.subject, r.concepts.size());
        if (inserted) r.concepts.push_back({t.subject, {}, {}, std::nullopt, false});
        auto& ce = r.concepts[ci->second];
        tally(t.gender == Gender::man ? ce.man : ce.woman, error);
    }
    finish(r.overall);
    finish(r.man);
    finish(r.woman);

    if (r.overall.evaluated > 0) {
        const auto ci = bootstrap_rate_interval(r.overall.errors, r.overall.evaluated, opts.bootstrap_samples,
                                                derive_seed(opts.seed, "gender-error-rate"));
        r.ci_low = ci.low;
        r.ci_high = ci.high;
    }

    std::size_t tested = 0;
    std::size_t significant = 0;
    for (auto& ce : r.concepts) {
        finish(ce.man);
        finish(ce.woman);
        if (ce.man.evaluated == 0 || ce.woman.evaluated == 0) continue;
        ce.p_value = bootstrap_gap_p_value(ce.man.errors, ce.man.evaluated, ce.woman.errors, ce.woman.evaluated,
                                           opts.bootstrap_samples, derive_seed(opts.seed, "errors|" + ce.subject.word));
        ce.significant = *ce.p_value < opts.alpha && ce.man.rate != ce.woman.rate;
        tested += 1;
        significant += ce.significant ? 1 : 0;
    }
    r.pct_concepts_biased = tested == 0 ? 0.0 : 100.0 * static_cast<double>(significant) / static_cast<double>(tested);
    return r;
}

const WinCell& WinReport::of(Category c) const {
    switch (c) {
    case Category::profession: return profession;
    case Category::activity: return activity;
    case Category::object: return object;
    }
    return all;
}

namespace {

struct WinTally {
    std::size_t n = 0;
    std::size_t wins_a = 0;
    std::size_t wins_b = 0;
    double sum_a = 0.0;
    double sum_b = 0.0;

    WinCell cell() const {
        WinCell c;
        c.n = n;
        if (n == 0) return c;
        const double dn = static_cast<double>(n);
        c.value_a = sum_a / dn;
        c.value_b = sum_b / dn;
        // Ties give half a win to each side. The larger share is computed
        // directly and the smaller as its complement, so the two add up to
        // exactly 100.
        const std::size_t ties = n - wins_a - wins_b;
        const double twice_a = static_cast<double>(2 * wins_a + ties);
        const double twice_b = static_cast<double>(2 * wins_b + ties);
        if (twice_a >= twice_b) {
            c.win_a = 100.0 * twice_a / (2.0 * dn);
            c.win_b = 100.0 - c.win_a;
        } else {
            c.win_b = 100.0 * twice_b / (2.0 * dn);
            c.win_a = 100.0 - c.win_b;
        }
        return c;
    }
};

} // namespace

WinReport compare_systems(std::span<const SystemOutput> outputs_a, std::span<const SystemOutput> outputs_b,
                          std::span<const Instance> manifest, const CaptionScorer& scorer) {
    std::map<std::string, std::string> a;
    std::map<std::string, std::string> b;
    for (const auto& o : outputs_a) a[o.instance_id] = o.caption;
    for (const auto& o : outputs_b) b[o.instance_id] = o.caption;
    std::vector<std::string> ids_a;
    std::vector<std::string> ids_b;
    for (const auto& [id, _] : a) ids_a.push_back(id);
    for (const auto& [id, _] : b) ids_b.push_back(id);
    std::vector<std::string> diff;
    std::set_symmetric_difference(ids_a.begin(), ids_a.end(), ids_b.begin(), ids_b.end(), std::back_inserter(diff));
    if (!diff.empty()) {
        std::string msg = "system outputs are not aligned; ids present in only one system:";
        for (const auto& id : diff) msg += " " + id;
        throw InvalidInput(msg);
    }

    std::unordered_map<std::string, const Instance*> by_id;
    for (const auto& inst : manifest) by_id.emplace(inst.id, &inst);

    std::array<WinTally, 3> per_cat{};
    WinTally all;
    for (const auto& [id, cap_a] : a) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw InvalidInput("system output for unknown instance '" + id + "'");
        const double sa = scorer(*it->second, cap_a);
        const double sb = scorer(*it->second, b.at(id));
        for (auto* t : {&per_cat[static_cast<std::size_t>(it->second->triple.subject.category)], &all}) {
            t->n += 1;
            t->sum_a += sa;
            t->sum_b += sb;
            t->wins_a += sa > sb ? 1 : 0;
            t->wins_b += sb > sa ? 1 : 0;
        }
    }
    WinReport r;
    r.profession = per_cat[0].cell();
    r.activity = per_cat[1].cell();
    r.object = per_cat[2].cell();
    r.all = all.cell();
    return r;
}

namespace {

ordered_json opt(const std::optional<double>& v) {
    return v ? ordered_json(*v) : ordered_json(nullptr);
}

ordered_json group_json(const GroupErrors& g) {
    ordered_json j;
    j["evaluated"] = g.evaluated;
    j["errors"] = g.errors;
    j["rate"] = opt(g.rate);
    return j;
}

} // namespace

ordered_json to_json(const ErrorReport& r) {
    ordered_json j;
    j["total"] = r.total;
    j["neutral"] = r.neutral;
    j["mixed"] = r.mixed;
    j["denominator_zero"] = r.overall.evaluated == 0;
    j["overall"] = group_json(r.overall);
    j["man"] = group_json(r.man);
    j["woman"] = group_json(r.woman);
    j["ci"] = {{"low", opt(r.ci_low)}, {"high", opt(r.ci_high)}};
    ordered_json concepts = ordered_json::array();
    for (const auto& c : r.concepts) {
        ordered_json cj;
        cj["concept"] = c.subject.word;
        cj["category"] = to_string(c.subject.category);
        cj["man"] = group_json(c.man);
        cj["woman"] = group_json(c.woman);
        cj["p_value"] = opt(c.p_value);
        cj["significant"] = c.significant;
        concepts.push_back(std::move(cj));
    }
    j["concepts"] = std::move(concepts);
    j["pct_concepts_biased"] = r.pct_concepts_biased;
    j["flagged_ids"] = r.flagged_ids;
    return j;
}

ordered_json to_json(const WinReport& r) {
    auto cell = [](const WinCell& c) {
        ordered_json j;
        j["n"] = c.n;
        j["value_a"] = c.value_a;
        j["value_b"] = c.value_b;
        j["win_a"] = c.win_a;
        j["win_b"] = c.win_b;
        return j;
    };
    ordered_json j;
    j["profession"] = cell(r.profession);
    j["activity"] = cell(r.activity);
    j["object"] = cell(r.object);
    j["all"] = cell(r.all);
    return j;
}

} // namespace capbias
