#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace capbias {

enum class Gender { man, woman };

inline constexpr Gender kGenders[] = {Gender::man, Gender::woman};

std::string_view to_string(Gender g);
Gender parse_gender(std::string_view s);
constexpr Gender opposite(Gender g) { return g == Gender::man ? Gender::woman : Gender::man; }

enum class Category { profession, activity, object };

inline constexpr Category kCategories[] = {Category::profession, Category::activity, Category::object};

std::string_view to_string(Category c);
Category parse_category(std::string_view s);

/// A lexicon word together with its taxonomy bucket.
struct Concept {
    std::string word;
    Category category = Category::profession;

    friend bool operator==(const Concept&, const Concept&) = default;
    friend auto operator<=>(const Concept&, const Concept&) = default;
};

/// Reference, good and bad caption for one (gender, concept) pair.
struct CaptionTriple {
    std::string reference;
    std::string good;
    std::string bad;
    Gender gender = Gender::man;
    Concept subject;
};

/// One image bound to its caption triple; the unit the audit counts.
struct Instance {
    std::string id;
    std::string image_ref;
    CaptionTriple triple;
};

using ArticleOverrides = std::map<std::string, std::string>;

struct Lexicon {
    std::vector<std::string> professions;
    std::vector<std::string> activities;
    std::vector<std::string> objects;
    ArticleOverrides article_overrides;

    /// Concepts in file order: professions, then activities, then objects.
    std::vector<Concept> concepts() const;
};

Lexicon parse_lexicon(std::string_view json_text);
Lexicon load_lexicon(const std::filesystem::path& path);

/// Six professions, six activities and six objects for desk-scale runs.
Lexicon bundled_mini_lexicon();

/// "an" for vowel-initial words, "a" otherwise, unless overridden.
std::string article_for(std::string_view word, const ArticleOverrides& overrides = {});

/// Fills the caption patterns:
///   profession: a {gender} who is a/an {profession}
///   activity:   a {gender} who is {activity}
///   object:     a {gender} with a/an {object}
/// The reference prefixes the good caption with "a photo of ".
CaptionTriple render_captions(Gender gender, const Concept& subject, const ArticleOverrides& overrides = {});

/// Image refs per (concept word, gender).
using ImageMap = std::map<std::pair<std::string, Gender>, std::vector<std::string>>;

/// One instance per (image_ref, gender, concept), ids "{category}/{concept}/{gender}/{ordinal}".
/// Throws ValidationError when an image ref repeats within one pair.
std::vector<Instance> build_manifest(std::span<const Concept> concepts, std::span<const Gender> genders,
                                     const ImageMap& images, const ArticleOverrides& overrides = {});

/// Synthetic image refs "img/{concept}/{gender}/{i}" for desk-scale manifests.
ImageMap synthesize_images(std::span<const Concept> concepts, std::size_t per_cell);

/// Parses `{"<concept>": {"man": [...], "woman": [...]}, ...}`.
ImageMap parse_image_map(std::string_view json_text);

enum class FindingKind { duplicate_id, template_violation, empty_image_ref };

std::string_view to_string(FindingKind k);

struct Finding {
    FindingKind kind;
    std::string instance_id;
    std::string message;
};

struct CellCount {
    Concept subject;
    std::size_t man = 0;
    std::size_t woman = 0;
};

struct ValidationReport {
    std::vector<Finding> findings;
    std::vector<CellCount> counts;  // first-seen concept order

    bool clean() const { return findings.empty(); }
};

ValidationReport validate_manifest(std::span<const Instance> instances);

/// True when `bad` is `good` with only the gender word swapped.
bool is_gender_swap(std::string_view good, std::string_view bad, Gender good_gender);

std::string instance_to_jsonl(const Instance& inst);
Instance instance_from_jsonl(std::string_view line);

void write_manifest(std::ostream& os, std::span<const Instance> instances);
std::vector<Instance> read_manifest(std::istream& is);
std::vector<Instance> load_manifest(const std::filesystem::path& path);

} // namespace capbias
