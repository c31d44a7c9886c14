#pragma once

#include "capbias/corpus.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace capbias {

struct GenderLexicon {
    std::set<std::string> male_words;
    std::set<std::string> female_words;
};

/// man/men/male/boy/... and woman/women/female/girl/... word lists.
GenderLexicon default_gender_lexicon();

/// Parses `{"male":[...], "female":[...]}`; lists must be disjoint, non-empty, lowercase.
GenderLexicon parse_gender_lexicon(std::string_view json_text);
GenderLexicon load_gender_lexicon(const std::filesystem::path& path);

enum class GenderCall { man, woman, neutral, mixed };

std::string_view to_string(GenderCall c);

/// Gender mentioned by a caption, matched per token (never by substring).
GenderCall detect_gender(std::string_view caption, const GenderLexicon& lex);

/// Image gender from its references: woman when some reference has a female
/// word and none has a male word, man symmetrically, otherwise mixed/neutral.
GenderCall label_image_gender(std::span<const std::string> references, const GenderLexicon& lex);

struct SystemOutput {
    std::string instance_id;
    std::string caption;
};

std::vector<SystemOutput> parse_system_outputs(std::string_view jsonl);
std::string system_output_to_jsonl(const SystemOutput& o);

enum class CorrectionStatus { corrected, already_correct, not_applicable };

std::string_view to_string(CorrectionStatus s);

struct Correction {
    std::string caption;
    CorrectionStatus status = CorrectionStatus::not_applicable;
};

/// Rewrites "man" -> "woman" (or the reverse) when the caption names the wrong
/// gender through that single word and carries no other gendered word.
Correction correct_caption(std::string_view caption, Gender true_gender, const GenderLexicon& lex);

struct GroupErrors {
    std::size_t evaluated = 0;  // captions calling man or woman
    std::size_t errors = 0;     // captions calling the opposite gender
    std::optional<double> rate;
};

struct ConceptErrors {
    Concept subject;
    GroupErrors man;
    GroupErrors woman;
    std::optional<double> p_value;
    bool significant = false;
};

struct ErrorReport {
    std::size_t total = 0;
    std::size_t neutral = 0;
    std::size_t mixed = 0;
    GroupErrors overall;
    GroupErrors man;
    GroupErrors woman;
    std::optional<double> ci_low;
    std::optional<double> ci_high;
    std::vector<ConceptErrors> concepts;
    // Percent of concepts whose man/woman error gap is significant.
    double pct_concepts_biased = 0.0;
    std::vector<std::string> flagged_ids;  // opposite-gender calls, for manual review
};

struct ErrorOptions {
    std::size_t bootstrap_samples = 10000;
    std::uint64_t seed = 0;
    double alpha = 0.05;
};

/// Gender prediction error of system captions against the manifest's true genders.
ErrorReport gender_error_rate(std::span<const SystemOutput> outputs, std::span<const Instance> manifest,
                              const GenderLexicon& lex, const ErrorOptions& opts = {});

/// Scores one system caption for one instance.
using CaptionScorer = std::function<double(const Instance&, const std::string& caption)>;

struct WinCell {
    std::size_t n = 0;
    double value_a = 0.0;  // mean score
    double value_b = 0.0;
    double win_a = 0.0;    // percent, ties split evenly
    double win_b = 0.0;
};

struct WinReport {
    WinCell profession;
    WinCell activity;
    WinCell object;
    WinCell all;

    const WinCell& of(Category c) const;
};

WinReport compare_systems(std::span<const SystemOutput> outputs_a, std::span<const SystemOutput> outputs_b,
                          std::span<const Instance> manifest, const CaptionScorer& scorer);

nlohmann::ordered_json to_json(const ErrorReport& r);
nlohmann::ordered_json to_json(const WinReport& r);

} // namespace capbias
