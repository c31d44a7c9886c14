#pragma once

#include "capbias/caption_analysis.hpp"
#include "capbias/corpus.hpp"
#include "capbias/embed_score.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace capbias {

// Two-action captioner: for an image of concept C it emits "man" with
// probability logistic((a*s + theta_C) / temperature), s = +1 for man images
// and -1 for woman images.
struct Policy {
    std::map<std::string, double> theta;  // missing concepts default to 0
    double a = 1.0;
    double temperature = 1.0;

    double theta_of(const std::string& concept_word) const;
    double logit(const Instance& inst) const;
    double p_man(const Instance& inst) const;
    double p_emit(const Instance& inst, Gender g) const;
    // Greedy decode; ties go to man.
    Gender greedy(const Instance& inst) const;
};

enum class RewardKind { clipscore_like, cider_like, hybrid, correctness, custom };

std::string_view to_string(RewardKind k);
RewardKind parse_reward_kind(std::string_view s);

struct RewardParams {
    double delta = 0.1;          // cosine bonus for the favored gender on biased concepts
    double base_cosine = 0.30;   // cosine of the correct-gender caption
    double gender_gap = 0.0;     // cosine deficit of the wrong-gender caption
    std::map<std::string, Gender> favored;  // biased concepts -> favored gender
    HybridWeights weights;
};

/// Reward of emitting gender `g` for an instance. Built by make_reward, or
/// directly from a callable (kind = custom).
class RewardFn {
  public:
    using Fn = std::function<double(const Instance&, Gender)>;

    RewardFn(RewardKind kind, Fn fn) : kind_(kind), fn_(std::move(fn)) {}

    RewardKind kind() const { return kind_; }
    double operator()(const Instance& inst, Gender g) const { return fn_(inst, g); }

  private:
    RewardKind kind_;
    Fn fn_;
};

/// `manifest` supplies the references for the CIDEr statistics.
RewardFn make_reward(RewardKind kind, const RewardParams& params, std::span<const Instance> manifest);

/// Cosine the clipscore_like reward targets for emitting `g`.
double synthetic_cosine(const Instance& inst, Gender g, const RewardParams& params);

struct PolicyGradient {
    double theta = 0.0;  // w.r.t. theta of the instance's concept
    double a = 0.0;
};

struct TrainConfig {
    std::size_t samples_per_step = 5;
    double learning_rate = 1e-2;
    std::size_t steps = 100;
    std::uint64_t seed = 0;
};

/// One instance's MRT estimate: draw k emissions, softmax the rewards into
/// weights, and return the gradient of the weighted log-likelihood.
PolicyGradient sampled_gradient(const Policy& policy, const Instance& inst, const RewardFn& reward, std::size_t k,
                                std::mt19937_64& rng);

/// Expectation of sampled_gradient, enumerating the number of "man" draws.
PolicyGradient exact_gradient(const Policy& policy, const Instance& inst, const RewardFn& reward, std::size_t k = 5);

/// Expected weighted log-likelihood of `policy` under sample sets drawn from
/// `anchor`. Its gradient at policy == anchor is exact_gradient.
double mrt_surrogate(const Policy& policy, const Policy& anchor, const Instance& inst, const RewardFn& reward,
                     std::size_t k = 5);

/// One MRT update over `batch`: the mean per-instance gradient scaled by the learning rate.
Policy mrt_step(const Policy& policy, std::span<const Instance> batch, const RewardFn& reward,
                const TrainConfig& cfg, std::mt19937_64& rng);

struct PolicyEval {
    ErrorReport errors;
    double mean_reward = 0.0;
};

/// Greedy-decodes every instance and measures gender error on the captions.
PolicyEval evaluate_policy(const Policy& policy, std::span<const Instance> manifest, const GenderLexicon& lex,
                           const RewardFn& reward, const ErrorOptions& opts = {});

struct StepRecord {
    std::size_t step = 0;
    double greedy_man = 0.0;  // error rates as fractions
    double greedy_woman = 0.0;
    double greedy_overall = 0.0;
    double expected_man = 0.0;  // probability-weighted error
    double expected_woman = 0.0;
    double expected_overall = 0.0;
    // Images of biased concepts whose gender is not the favored one.
    double greedy_disadvantaged = 0.0;
    double expected_disadvantaged = 0.0;
    double mean_reward = 0.0;   // of the greedy captions
};

/// Greedy and expected error of a policy. `favored` marks the biased concepts.
StepRecord measure(const Policy& policy, std::span<const Instance> manifest, std::span<const double> reward_man,
                   std::span<const double> reward_woman, const std::map<std::string, Gender>& favored,
                   std::size_t step);

struct SimConfig {
    Lexicon lexicon;
    std::size_t images_per_cell = 500;
    Policy init;
    RewardKind reward_kind = RewardKind::clipscore_like;
    RewardParams reward;
    TrainConfig train;
};

/// A string "lexicon" entry is a path resolved against `base_dir`; when absent
/// the bundled mini lexicon is used.
SimConfig parse_sim_config(std::string_view json_text, const std::filesystem::path& base_dir = {});
SimConfig load_sim_config(const std::filesystem::path& path);

struct SimResult {
    std::vector<StepRecord> series;  // step 0 is the initial policy
    Policy final_policy;
    PolicyEval initial;
    PolicyEval trained;
};

/// Trains with full-manifest batches for cfg.train.steps steps. Rewards are
/// computed once per (instance, gender) on `threads` threads.
SimResult run_simulation(const SimConfig& cfg, const GenderLexicon& lex, unsigned threads = 1);

nlohmann::ordered_json to_json(const Policy& p);
nlohmann::ordered_json to_json(const StepRecord& r);
nlohmann::ordered_json to_json(const SimResult& r);

} // namespace capbias
