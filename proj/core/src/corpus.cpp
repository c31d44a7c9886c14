#include "capbias/corpus.hpp"

#include "capbias/errors.hpp"
#include "capbias/io.hpp"
#include "capbias/tokenize.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <istream>
#include <iterator>
#include <ostream>
#include <set>
#include <sstream>

namespace capbias {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Gender g) {
    return g == Gender::man ? "man" : "woman";
}

Gender parse_gender(std::string_view s) {
    if (s == "man") return Gender::man;
    if (s == "woman") return Gender::woman;
    throw InvalidInput("unknown gender '" + std::string(s) + "'");
}

std::string_view to_string(Category c) {
    switch (c) {
    case Category::profession: return "profession";
    case Category::activity: return "activity";
    case Category::object: return "object";
    }
    return "?";
}

Category parse_category(std::string_view s) {
    if (s == "profession") return Category::profession;
    if (s == "activity") return Category::activity;
    if (s == "object") return Category::object;
    throw InvalidInput("unknown category '" + std::string(s) + "'");
}

std::string_view to_string(FindingKind k) {
    switch (k) {
    case FindingKind::duplicate_id: return "duplicate id";
    case FindingKind::template_violation: return "template violation";
    case FindingKind::empty_image_ref: return "empty image ref";
    }
    return "?";
}

std::vector<Concept> Lexicon::concepts() const {
    std::vector<Concept> out;
    out.reserve(professions.size() + activities.size() + objects.size());
    for (const auto& w : professions) out.push_back({w, Category::profession});
    for (const auto& w : activities) out.push_back({w, Category::activity});
    for (const auto& w : objects) out.push_back({w, Category::object});
    return out;
}

namespace {

void check_word(const std::string& w, std::vector<std::string>& bad) {
    const bool lower = std::none_of(w.begin(), w.end(), [](char c) { return c >= 'A' && c <= 'Z'; });
    if (w.empty() || !lower) bad.push_back(w);
}

} // namespace

Lexicon parse_lexicon(std::string_view json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed lexicon: ") + e.what());
    }
    if (!doc.is_object()) throw LoadError("malformed lexicon: expected a JSON object");

    Lexicon lex;
    try {
        auto list = [&](const char* key) {
            std::vector<std::string> out;
            if (doc.contains(key)) out = doc.at(key).get<std::vector<std::string>>();
            return out;
        };
        lex.professions = list("professions");
        lex.activities = list("activities");
        lex.objects = list("objects");
        if (doc.contains("article_overrides")) {
            lex.article_overrides = doc.at("article_overrides").get<ArticleOverrides>();
        }
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed lexicon: ") + e.what());
    }

    std::vector<std::string> bad;
    for (const auto& c : lex.concepts()) check_word(c.word, bad);
    if (!bad.empty()) throw ValidationError("lexicon words must be non-empty and lowercase", bad);
    for (const auto& [word, art] : lex.article_overrides) {
        if (art != "a" && art != "an") bad.push_back(word);
    }
    if (!bad.empty()) throw ValidationError("article overrides must be \"a\" or \"an\"", bad);
    return lex;
}

Lexicon load_lexicon(const std::filesystem::path& path) {
    return parse_lexicon(read_text_file(path));
}

Lexicon bundled_mini_lexicon() {
    Lexicon lex;
    lex.professions = {"accountant", "nurse", "engineer", "doctor", "chef", "editor"};
    lex.activities = {"reading", "washing", "cooking", "praying", "shopping", "jumping"};
    lex.objects = {"apron", "necklace", "basketball", "umbrella", "laptop", "bicycle"};
    return lex;
}

std::string article_for(std::string_view word, const ArticleOverrides& overrides) {
    if (auto it = overrides.find(std::string(word)); it != overrides.end()) return it->second;
    if (word.empty()) return "a";
    switch (word.front()) {
    case 'a': case 'e': case 'i': case 'o': case 'u':
        return "an";
    default:
        return "a";
    }
}

namespace {

std::string candidate_caption(Gender gender, const Concept& subject, const ArticleOverrides& overrides) {
    std::string out = "a ";
    out += to_string(gender);
    switch (subject.category) {
    case Category::profession:
        out += " who is " + article_for(subject.word, overrides) + " " + subject.word;
        break;
    case Category::activity:
        out += " who is " + subject.word;
        break;
    case Category::object:
        out += " with " + article_for(subject.word, overrides) + " " + subject.word;
        break;
    }
    return out;
}

} // namespace

CaptionTriple render_captions(Gender gender, const Concept& subject, const ArticleOverrides& overrides) {
    CaptionTriple t;
    t.good = candidate_caption(gender, subject, overrides);
    t.bad = candidate_caption(opposite(gender), subject, overrides);
    t.reference = "a photo of " + t.good;
    t.gender = gender;
    t.subject = subject;
    return t;
}

std::vector<Instance> build_manifest(std::span<const Concept> concepts, std::span<const Gender> genders,
                                     const ImageMap& images, const ArticleOverrides& overrides) {
    std::vector<Instance> out;
    std::vector<std::string> duplicates;
    for (const auto& c : concepts) {
        for (const Gender g : genders) {
            auto it = images.find({c.word, g});
            if (it == images.end()) continue;
            std::set<std::string> seen;
            const auto triple = render_captions(g, c, overrides);
            std::size_t ordinal = 0;
            for (const auto& ref : it->second) {
                if (!seen.insert(ref).second) {
                    duplicates.push_back(ref + " (" + c.word + ", " + std::string(to_string(g)) + ")");
                    continue;
                }
                Instance inst;
                inst.id = std::string(to_string(c.category)) + "/" + c.word + "/" + std::string(to_string(g)) + "/" +
                          std::to_string(ordinal++);
                inst.image_ref = ref;
                inst.triple = triple;
                out.push_back(std::move(inst));
            }
        }
    }
    if (!duplicates.empty()) throw ValidationError("duplicate image refs within a (gender, concept) pair", duplicates);
    return out;
}

ImageMap synthesize_images(std::span<const Concept> concepts, std::size_t per_cell) {
    ImageMap map;
    for (const auto& c : concepts) {
        for (const Gender g : kGenders) {
            auto& refs = map[{c.word, g}];
            refs.reserve(per_cell);
            for (std::size_t i = 0; i < per_cell; ++i) {
                refs.push_back("img/" + c.word + "/" + std::string(to_string(g)) + "/" + std::to_string(i));
            }
        }
    }
    return map;
}

ImageMap parse_image_map(std::string_view json_text) {
    ImageMap map;
    try {
        const auto doc = json::parse(json_text);
        if (!doc.is_object()) throw LoadError("malformed image map: expected a JSON object");
        for (const auto& [word, by_gender] : doc.items()) {
            for (const auto& [g, refs] : by_gender.items()) {
                map[{word, parse_gender(g)}] = refs.get<std::vector<std::string>>();
            }
        }
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed image map: ") + e.what());
    } catch (const InvalidInput& e) {
        throw LoadError(std::string("malformed image map: ") + e.what());
    }
    return map;
}

bool is_gender_swap(std::string_view good, std::string_view bad, Gender good_gender) {
    const auto a = tokenize(good);
    const auto b = tokenize(bad);
    if (a.size() != b.size()) return false;
    const std::string want_good(to_string(good_gender));
    const std::string want_bad(to_string(opposite(good_gender)));
    int diffs = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i]) continue;
        if (a[i] != want_good || b[i] != want_bad) return false;
        ++diffs;
    }
    return diffs == 1;
}

ValidationReport validate_manifest(std::span<const Instance> instances) {
    ValidationReport report;
    std::set<std::string> ids;
    std::map<Concept, std::size_t> cell_index;
    for (const auto& inst : instances) {
        if (!ids.insert(inst.id).second) {
            report.findings.push_back({FindingKind::duplicate_id, inst.id, "id appears more than once"});
        }
        if (inst.image_ref.empty()) {
            report.findings.push_back({FindingKind::empty_image_ref, inst.id, "image_ref is empty"});
        }
        const auto& t = inst.triple;
        if (!is_gender_swap(t.good, t.bad, t.gender)) {
            report.findings.push_back(
                {FindingKind::template_violation, inst.id, "good/bad captions are not a single gender-word swap"});
        } else if (t.reference != "a photo of " + t.good) {
            report.findings.push_back(
                {FindingKind::template_violation, inst.id, "reference is not \"a photo of \" + good caption"});
        }

        auto [it, inserted] = cell_index.try_emplace(t.subject, report.counts.size());
        if (inserted) report.counts.push_back({t.subject, 0, 0});
        auto& cell = report.counts[it->second];
        (t.gender == Gender::man ? cell.man : cell.woman) += 1;
    }
    return report;
}

std::string instance_to_jsonl(const Instance& inst) {
    ordered_json j;
    j["id"] = inst.id;
    j["category"] = to_string(inst.triple.subject.category);
    j["concept"] = inst.triple.subject.word;
    j["gender"] = to_string(inst.triple.gender);
    j["image_ref"] = inst.image_ref;
    j["reference"] = inst.triple.reference;
    j["good"] = inst.triple.good;
    j["bad"] = inst.triple.bad;
    return j.dump();
}

Instance instance_from_jsonl(std::string_view line) {
    try {
        const auto j = json::parse(line);
        Instance inst;
        inst.id = j.at("id").get<std::string>();
        inst.image_ref = j.at("image_ref").get<std::string>();
        inst.triple.subject.word = j.at("concept").get<std::string>();
        inst.triple.subject.category = parse_category(j.at("category").get<std::string>());
        inst.triple.gender = parse_gender(j.at("gender").get<std::string>());
        inst.triple.reference = j.at("reference").get<std::string>();
        inst.triple.good = j.at("good").get<std::string>();
        inst.triple.bad = j.at("bad").get<std::string>();
        return inst;
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed manifest line: ") + e.what());
    } catch (const InvalidInput& e) {
        throw LoadError(std::string("malformed manifest line: ") + e.what());
    }
}

void write_manifest(std::ostream& os, std::span<const Instance> instances) {
    for (const auto& inst : instances) os << instance_to_jsonl(inst) << '\n';
}

std::vector<Instance> read_manifest(std::istream& is) {
    const std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    std::vector<Instance> out;
    for (const auto line : jsonl_lines(text)) out.push_back(instance_from_jsonl(line));
    return out;
}

std::vector<Instance> load_manifest(const std::filesystem::path& path) {
    std::istringstream ss(read_text_file(path));
    return read_manifest(ss);
}

} // namespace capbias
