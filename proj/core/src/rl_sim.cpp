#include "capbias/rl_sim.hpp"

#include "capbias/errors.hpp"
#include "capbias/io.hpp"
#include "capbias/parallel.hpp"
#include "capbias/tokenize.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <set>
#include <unordered_map>

namespace capbias {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

double sigmoid(double z) {
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// log(sigmoid(z)) without overflow.
double log_sigmoid(double z) {
    return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

double side(const Instance& inst) {
    return inst.triple.gender == Gender::man ? 1.0 : -1.0;
}

const std::string& caption_for(const Instance& inst, Gender g) {
    return g == inst.triple.gender ? inst.triple.good : inst.triple.bad;
}

struct RewardPair {
    double man = 0.0;
    double woman = 0.0;
};

RewardPair rewards_of(const Instance& inst, const RewardFn& reward) {
    const RewardPair r{reward(inst, Gender::man), reward(inst, Gender::woman)};
    if (!std::isfinite(r.man) || !std::isfinite(r.woman)) {
        throw TrainingError("non-finite reward for instance '" + inst.id + "'");
    }
    return r;
}

// Total softmax weight on the "man" draws when m of k draws said man.
double man_weight(std::size_t m, std::size_t k, const RewardPair& r) {
    if (m == 0) return 0.0;
    if (m == k) return 1.0;
    const double top = std::max(r.man, r.woman);
    const double em = static_cast<double>(m) * std::exp(r.man - top);
    const double ew = static_cast<double>(k - m) * std::exp(r.woman - top);
    return em / (em + ew);
}

double binomial_pmf(std::size_t m, std::size_t k, double p) {
    const double dk = static_cast<double>(k);
    const double dm = static_cast<double>(m);
    const double log_choose = std::lgamma(dk + 1) - std::lgamma(dm + 1) - std::lgamma(dk - dm + 1);
    const double lp = m == 0 ? 0.0 : dm * std::log(p);
    const double lq = m == k ? 0.0 : (dk - dm) * std::log1p(-p);
    return std::exp(log_choose + lp + lq);
}

PolicyGradient along_logit(const Policy& policy, const Instance& inst, double coeff) {
    return {coeff / policy.temperature, coeff * side(inst) / policy.temperature};
}

void check_k(std::size_t k) {
    if (k < 2) throw ConfigError("samples per step must be at least 2");
}

} // namespace

double Policy::theta_of(const std::string& concept_word) const {
    auto it = theta.find(concept_word);
    return it == theta.end() ? 0.0 : it->second;
}

double Policy::logit(const Instance& inst) const {
    return (a * side(inst) + theta_of(inst.triple.subject.word)) / temperature;
}

double Policy::p_man(const Instance& inst) const {
    return sigmoid(logit(inst));
}

double Policy::p_emit(const Instance& inst, Gender g) const {
    const double z = logit(inst);
    return g == Gender::man ? sigmoid(z) : sigmoid(-z);
}

Gender Policy::greedy(const Instance& inst) const {
    return logit(inst) >= 0.0 ? Gender::man : Gender::woman;
}

std::string_view to_string(RewardKind k) {
    switch (k) {
    case RewardKind::clipscore_like: return "clipscore_like";
    case RewardKind::cider_like: return "cider_like";
    case RewardKind::hybrid: return "hybrid";
    case RewardKind::correctness: return "correctness";
    case RewardKind::custom: return "custom";
    }
    return "custom";
}

RewardKind parse_reward_kind(std::string_view s) {
    for (auto k : {RewardKind::clipscore_like, RewardKind::cider_like, RewardKind::hybrid, RewardKind::correctness}) {
        if (to_string(k) == s) return k;
    }
    throw ConfigError("unknown reward kind '" + std::string(s) + "'");
}

double synthetic_cosine(const Instance& inst, Gender g, const RewardParams& params) {
    double c = params.base_cosine;
    if (g != inst.triple.gender) c -= params.gender_gap;
    auto it = params.favored.find(inst.triple.subject.word);
    if (it != params.favored.end() && it->second == g) c += params.delta;
    return c;
}

RewardFn make_reward(RewardKind kind, const RewardParams& params, std::span<const Instance> manifest) {
    auto clip = [params](const Instance& inst, Gender g) {
        const double c = synthetic_cosine(inst, g, params);
        if (c < -1.0 || c > 1.0) throw ConfigError("synthetic cosine outside [-1, 1]");
        const Embedding image{"image", {1.0, 0.0}};
        const Embedding text{"text", {c, std::sqrt(1.0 - c * c)}};
        return clipscore(text, image).value;
    };

    std::shared_ptr<const IdfTable> idf;
    if (kind == RewardKind::cider_like || kind == RewardKind::hybrid) {
        std::vector<std::vector<TokenSeq>> docs;
        docs.reserve(manifest.size());
        for (const auto& inst : manifest) docs.push_back({tokenize(inst.triple.reference)});
        idf = std::make_shared<const IdfTable>(build_idf(docs));
    }
    auto cider = [idf](const Instance& inst, Gender g) {
        const std::vector<TokenSeq> refs{tokenize(inst.triple.reference)};
        return cider_d(tokenize(caption_for(inst, g)), refs, *idf).value;
    };

    switch (kind) {
    case RewardKind::clipscore_like: return RewardFn(kind, clip);
    case RewardKind::cider_like: return RewardFn(kind, cider);
    case RewardKind::hybrid:
        return RewardFn(kind, [clip, cider, w = params.weights](const Instance& inst, Gender g) {
            return combine(clip(inst, g), cider(inst, g), w).total;
        });
    case RewardKind::correctness:
        return RewardFn(kind, [](const Instance& inst, Gender g) { return g == inst.triple.gender ? 1.0 : 0.0; });
    case RewardKind::custom: break;
    }
    throw ConfigError("custom rewards are built from a callable");
}

PolicyGradient sampled_gradient(const Policy& policy, const Instance& inst, const RewardFn& reward, std::size_t k,
                                std::mt19937_64& rng) {
    check_k(k);
    const double p = policy.p_man(inst);
    std::bernoulli_distribution draw(p);
    std::size_t m = 0;
    for (std::size_t j = 0; j < k; ++j) m += draw(rng) ? 1 : 0;
    const auto r = rewards_of(inst, reward);
    // sum_j w_j d log p(y_j) = (u - p) dz, u = total weight on the man draws.
    return along_logit(policy, inst, man_weight(m, k, r) - p);
}

PolicyGradient exact_gradient(const Policy& policy, const Instance& inst, const RewardFn& reward, std::size_t k) {
    check_k(k);
    const double p = policy.p_man(inst);
    const auto r = rewards_of(inst, reward);
    double coeff = 0.0;
    for (std::size_t m = 0; m <= k; ++m) coeff += binomial_pmf(m, k, p) * (man_weight(m, k, r) - p);
    return along_logit(policy, inst, coeff);
}

double mrt_surrogate(const Policy& policy, const Policy& anchor, const Instance& inst, const RewardFn& reward,
                     std::size_t k) {
    check_k(k);
    const double p0 = anchor.p_man(inst);
    const double z = policy.logit(inst);
    const auto r = rewards_of(inst, reward);
    double total = 0.0;
    for (std::size_t m = 0; m <= k; ++m) {
        const double u = man_weight(m, k, r);
        total += binomial_pmf(m, k, p0) * (u * log_sigmoid(z) + (1.0 - u) * log_sigmoid(-z));
    }
    return total;
}

namespace {

// A batch flattened to concept indices and reward pairs, so the training
// loop touches no strings.
struct Compiled {
    std::vector<std::string> words;
    std::vector<std::size_t> concept_of;
    std::vector<double> side;
    std::vector<char> is_man;
    std::vector<char> disadvantaged;
    std::vector<double> r_man;
    std::vector<double> r_woman;
};

Compiled compile(std::span<const Instance> batch, std::span<const double> r_man, std::span<const double> r_woman,
                 const std::map<std::string, Gender>& favored) {
    Compiled c;
    std::map<std::string, std::size_t> index;
    const std::size_t n = batch.size();
    c.concept_of.resize(n);
    c.side.resize(n);
    c.is_man.resize(n);
    c.disadvantaged.resize(n);
    c.r_man.assign(r_man.begin(), r_man.end());
    c.r_woman.assign(r_woman.begin(), r_woman.end());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& t = batch[i].triple;
        auto [it, inserted] = index.try_emplace(t.subject.word, c.words.size());
        if (inserted) c.words.push_back(t.subject.word);
        c.concept_of[i] = it->second;
        c.side[i] = side(batch[i]);
        c.is_man[i] = t.gender == Gender::man;
        auto f = favored.find(t.subject.word);
        c.disadvantaged[i] = f != favored.end() && f->second != t.gender;
    }
    return c;
}

std::vector<double> theta_vector(const Policy& policy, const Compiled& c) {
    std::vector<double> theta(c.words.size());
    for (std::size_t j = 0; j < c.words.size(); ++j) theta[j] = policy.theta_of(c.words[j]);
    return theta;
}

// One MRT step in place. Mirrors sampled_gradient draw for draw.
void step_compiled(std::vector<double>& theta, double& a, double temperature, const Compiled& c,
                   const TrainConfig& cfg, std::mt19937_64& rng) {
    const std::size_t k = cfg.samples_per_step;
    std::vector<double> d_theta(theta.size(), 0.0);
    double d_a = 0.0;
    for (std::size_t i = 0; i < c.concept_of.size(); ++i) {
        const std::size_t j = c.concept_of[i];
        const double p = sigmoid((a * c.side[i] + theta[j]) / temperature);
        std::bernoulli_distribution draw(p);
        std::size_t m = 0;
        for (std::size_t s = 0; s < k; ++s) m += draw(rng) ? 1 : 0;
        const double coeff = man_weight(m, k, {c.r_man[i], c.r_woman[i]}) - p;
        d_theta[j] += coeff / temperature;
        d_a += coeff * c.side[i] / temperature;
    }
    const double scale = cfg.learning_rate / static_cast<double>(c.concept_of.size());
    for (std::size_t j = 0; j < theta.size(); ++j) theta[j] += scale * d_theta[j];
    a += scale * d_a;
    if (!std::isfinite(a)) throw TrainingError("policy diverged");
}

StepRecord measure_compiled(const std::vector<double>& theta, double a, double temperature, const Compiled& c,
                            std::size_t step) {
    StepRecord rec;
    rec.step = step;
    std::size_t n_man = 0, n_woman = 0, n_dis = 0;
    double greedy_man = 0, greedy_woman = 0, expected_man = 0, expected_woman = 0;
    double greedy_dis = 0, expected_dis = 0, reward = 0;
    for (std::size_t i = 0; i < c.concept_of.size(); ++i) {
        const double z = (a * c.side[i] + theta[c.concept_of[i]]) / temperature;
        const bool says_man = z >= 0.0;  // ties go to man
        const double wrong = says_man != static_cast<bool>(c.is_man[i]) ? 1.0 : 0.0;
        const double p_wrong = c.is_man[i] ? sigmoid(-z) : sigmoid(z);
        reward += says_man ? c.r_man[i] : c.r_woman[i];
        if (c.disadvantaged[i]) {
            ++n_dis;
            greedy_dis += wrong;
            expected_dis += p_wrong;
        }
        if (c.is_man[i]) {
            ++n_man;
            greedy_man += wrong;
            expected_man += p_wrong;
        } else {
            ++n_woman;
            greedy_woman += wrong;
            expected_woman += p_wrong;
        }
    }
    const auto frac = [](double x, std::size_t n) { return n == 0 ? 0.0 : x / static_cast<double>(n); };
    rec.greedy_man = frac(greedy_man, n_man);
    rec.greedy_woman = frac(greedy_woman, n_woman);
    rec.greedy_overall = frac(greedy_man + greedy_woman, n_man + n_woman);
    rec.expected_man = frac(expected_man, n_man);
    rec.expected_woman = frac(expected_woman, n_woman);
    rec.expected_overall = frac(expected_man + expected_woman, n_man + n_woman);
    rec.greedy_disadvantaged = frac(greedy_dis, n_dis);
    rec.expected_disadvantaged = frac(expected_dis, n_dis);
    rec.mean_reward = frac(reward, c.concept_of.size());
    return rec;
}

Policy with_theta(const Policy& base, const Compiled& c, const std::vector<double>& theta, double a) {
    Policy p = base;
    for (std::size_t j = 0; j < c.words.size(); ++j) p.theta[c.words[j]] = theta[j];
    p.a = a;
    return p;
}

} // namespace

Policy mrt_step(const Policy& policy, std::span<const Instance> batch, const RewardFn& reward,
                const TrainConfig& cfg, std::mt19937_64& rng) {
    if (batch.empty()) throw InvalidInput("mrt_step needs a non-empty batch");
    check_k(cfg.samples_per_step);
    std::vector<double> r_man(batch.size());
    std::vector<double> r_woman(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto r = rewards_of(batch[i], reward);
        r_man[i] = r.man;
        r_woman[i] = r.woman;
    }
    const auto c = compile(batch, r_man, r_woman, {});
    auto theta = theta_vector(policy, c);
    double a = policy.a;
    step_compiled(theta, a, policy.temperature, c, cfg, rng);
    return with_theta(policy, c, theta, a);
}

PolicyEval evaluate_policy(const Policy& policy, std::span<const Instance> manifest, const GenderLexicon& lex,
                           const RewardFn& reward, const ErrorOptions& opts) {
    std::vector<SystemOutput> outputs;
    outputs.reserve(manifest.size());
    double reward_sum = 0.0;
    for (const auto& inst : manifest) {
        const Gender g = policy.greedy(inst);
        outputs.push_back({inst.id, caption_for(inst, g)});
        reward_sum += reward(inst, g);
    }
    PolicyEval e;
    e.errors = gender_error_rate(outputs, manifest, lex, opts);
    e.mean_reward = manifest.empty() ? 0.0 : reward_sum / static_cast<double>(manifest.size());
    return e;
}

StepRecord measure(const Policy& policy, std::span<const Instance> manifest, std::span<const double> reward_man,
                   std::span<const double> reward_woman, const std::map<std::string, Gender>& favored,
                   std::size_t step) {
    const auto c = compile(manifest, reward_man, reward_woman, favored);
    return measure_compiled(theta_vector(policy, c), policy.a, policy.temperature, c, step);
}

namespace {

double finite_number(const json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    const double v = j.at(key).get<double>();
    if (!std::isfinite(v)) throw ConfigError(std::string("'") + key + "' must be finite");
    return v;
}

} // namespace

SimConfig parse_sim_config(std::string_view json_text, const std::filesystem::path& base_dir) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed sim config: ") + e.what());
    }
    SimConfig cfg;
    try {
        if (doc.contains("lexicon")) {
            const auto& lex = doc.at("lexicon");
            cfg.lexicon = lex.is_string() ? load_lexicon(base_dir / lex.get<std::string>()) : parse_lexicon(lex.dump());
        } else {
            cfg.lexicon = bundled_mini_lexicon();
        }
        cfg.images_per_cell = doc.value("images_per_cell", cfg.images_per_cell);

        const auto pol = doc.value("policy", json::object());
        cfg.init.a = finite_number(pol, "a", 1.0);
        cfg.init.temperature = finite_number(pol, "temperature", 1.0);
        const auto theta = pol.value("theta", json::object());
        for (const auto& [word, v] : theta.items()) cfg.init.theta[word] = v.get<double>();

        const auto rew = doc.value("reward", json::object());
        cfg.reward_kind = parse_reward_kind(rew.value("kind", std::string("clipscore_like")));
        cfg.reward.delta = finite_number(rew, "delta", cfg.reward.delta);
        cfg.reward.base_cosine = finite_number(rew, "base_cosine", cfg.reward.base_cosine);
        cfg.reward.gender_gap = finite_number(rew, "gender_gap", cfg.reward.gender_gap);
        const auto favored = rew.value("favored", json::object());
        for (const auto& [word, g] : favored.items()) {
            cfg.reward.favored[word] = parse_gender(g.get<std::string>());
        }
        const auto w = rew.value("weights", json::object());
        cfg.reward.weights.clip = finite_number(w, "clip", 1.0);
        cfg.reward.weights.cider = finite_number(w, "cider", 1.0);

        const auto tr = doc.value("train", json::object());
        cfg.train.samples_per_step = tr.value("samples_per_step", cfg.train.samples_per_step);
        cfg.train.learning_rate = finite_number(tr, "learning_rate", cfg.train.learning_rate);
        cfg.train.steps = tr.value("steps", cfg.train.steps);
        cfg.train.seed = tr.value("seed", cfg.train.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad sim config field: ") + e.what());
    } catch (const InvalidInput& e) {
        throw ConfigError(e.what());
    }

    if (cfg.images_per_cell == 0) throw ConfigError("images_per_cell must be positive");
    if (cfg.init.temperature <= 0) throw ConfigError("temperature must be positive");
    if (cfg.train.samples_per_step < 2) throw ConfigError("samples_per_step must be at least 2");
    if (cfg.train.learning_rate <= 0) throw ConfigError("learning_rate must be positive");
    if (cfg.train.steps == 0) throw ConfigError("steps must be positive");

    std::set<std::string> known;
    for (const auto& c : cfg.lexicon.concepts()) known.insert(c.word);
    for (const auto& [word, v] : cfg.init.theta) {
        if (!known.count(word)) throw ConfigError("theta given for unknown concept '" + word + "'");
        if (!std::isfinite(v)) throw ConfigError("theta for '" + word + "' must be finite");
    }
    for (const auto& [word, _] : cfg.reward.favored) {
        if (!known.count(word)) throw ConfigError("favored gender given for unknown concept '" + word + "'");
    }
    const double hi = cfg.reward.base_cosine + std::max(cfg.reward.delta, 0.0);
    const double lo = cfg.reward.base_cosine - cfg.reward.gender_gap + std::min(cfg.reward.delta, 0.0);
    if (hi > 1.0 || lo < -1.0) throw ConfigError("reward cosines must stay within [-1, 1]");
    return cfg;
}

SimConfig load_sim_config(const std::filesystem::path& path) {
    return parse_sim_config(read_text_file(path), path.parent_path());
}

SimResult run_simulation(const SimConfig& cfg, const GenderLexicon& lex, unsigned threads) {
    const auto concepts = cfg.lexicon.concepts();
    const auto images = synthesize_images(concepts, cfg.images_per_cell);
    const auto manifest = build_manifest(concepts, kGenders, images, cfg.lexicon.article_overrides);
    const auto base = make_reward(cfg.reward_kind, cfg.reward, manifest);

    // Rewards depend only on (instance, emitted gender), so they are tabulated once.
    std::vector<double> r_man(manifest.size());
    std::vector<double> r_woman(manifest.size());
    parallel_for(manifest.size(), threads, [&](std::size_t i) {
        const auto r = rewards_of(manifest[i], base);
        r_man[i] = r.man;
        r_woman[i] = r.woman;
    });
    std::unordered_map<std::string, std::size_t> row;
    row.reserve(manifest.size());
    for (std::size_t i = 0; i < manifest.size(); ++i) row.emplace(manifest[i].id, i);
    const RewardFn table(base.kind(), [&](const Instance& inst, Gender g) {
        const auto i = row.at(inst.id);
        return g == Gender::man ? r_man[i] : r_woman[i];
    });

    ErrorOptions eval_opts;
    eval_opts.seed = cfg.train.seed;

    SimResult out;
    out.initial = evaluate_policy(cfg.init, manifest, lex, table, eval_opts);
    out.series.reserve(cfg.train.steps + 1);
    const auto compiled = compile(manifest, r_man, r_woman, cfg.reward.favored);
    auto theta = theta_vector(cfg.init, compiled);
    double a = cfg.init.a;
    const double temperature = cfg.init.temperature;
    out.series.push_back(measure_compiled(theta, a, temperature, compiled, 0));

    // Same arithmetic and draw order as repeated mrt_step calls.
    std::mt19937_64 rng(derive_seed(cfg.train.seed, "mrt"));
    for (std::size_t step = 1; step <= cfg.train.steps; ++step) {
        step_compiled(theta, a, temperature, compiled, cfg.train, rng);
        out.series.push_back(measure_compiled(theta, a, temperature, compiled, step));
    }
    const Policy policy = with_theta(cfg.init, compiled, theta, a);
    out.final_policy = policy;
    out.trained = evaluate_policy(policy, manifest, lex, table, eval_opts);
    return out;
}

ordered_json to_json(const Policy& p) {
    ordered_json j;
    j["a"] = p.a;
    j["temperature"] = p.temperature;
    ordered_json theta = ordered_json::object();
    for (const auto& [word, v] : p.theta) theta[word] = v;
    j["theta"] = std::move(theta);
    return j;
}

ordered_json to_json(const StepRecord& r) {
    ordered_json j;
    j["step"] = r.step;
    j["error_rate_by_gender"] = {{"man", r.greedy_man}, {"woman", r.greedy_woman}, {"overall", r.greedy_overall}};
    j["expected_error_by_gender"] = {
        {"man", r.expected_man}, {"woman", r.expected_woman}, {"overall", r.expected_overall}};
    j["disadvantaged"] = {{"greedy", r.greedy_disadvantaged}, {"expected", r.expected_disadvantaged}};
    j["mean_reward"] = r.mean_reward;
    return j;
}

namespace {

ordered_json eval_json(const PolicyEval& e) {
    auto j = to_json(e.errors);
    // The full id list is large and recoverable from the policy; keep the count.
    j["flagged"] = j["flagged_ids"].size();
    j.erase("flagged_ids");
    j["mean_reward"] = e.mean_reward;
    return j;
}

} // namespace

ordered_json to_json(const SimResult& r) {
    ordered_json j;
    j["initial"] = eval_json(r.initial);
    j["final"] = eval_json(r.trained);
    j["final_policy"] = to_json(r.final_policy);
    ordered_json series = ordered_json::array();
    for (const auto& s : r.series) series.push_back(to_json(s));
    j["series"] = std::move(series);
    return j;
}

} // namespace capbias
