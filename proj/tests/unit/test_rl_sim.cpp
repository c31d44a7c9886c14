#include "helpers.hpp"
#include "oracles.hpp"

#include <capbias/errors.hpp>
#include <capbias/parallel.hpp>
#include <capbias/rl_sim.hpp>

#include <doctest.h>

#include <cmath>
#include <random>

using namespace capbias;

namespace {

Instance instance_of(const std::string& word, Category cat, Gender g) {
    Instance inst;
    inst.id = word + "/" + std::string(to_string(g));
    inst.image_ref = inst.id;
    inst.triple = render_captions(g, {word, cat});
    return inst;
}

RewardFn table_reward(double r_man, double r_woman) {
    return RewardFn(RewardKind::custom, [=](const Instance&, Gender g) { return g == Gender::man ? r_man : r_woman; });
}

double relative_error(double got, double want) {
    return std::fabs(got - want) / std::max(std::fabs(want), 1e-6);
}

} // namespace

TEST_CASE("policy probabilities and greedy tie rule") {
    Policy p;
    p.theta["nurse"] = -0.5;
    p.a = 2.0;
    p.temperature = 0.5;
    const auto man = instance_of("nurse", Category::profession, Gender::man);
    const auto woman = instance_of("nurse", Category::profession, Gender::woman);
    CHECK(p.logit(man) == doctest::Approx((2.0 - 0.5) / 0.5));
    CHECK(p.p_man(woman) == doctest::Approx(1.0 / (1.0 + std::exp(5.0))));
    CHECK(p.p_emit(man, Gender::woman) == doctest::Approx(1.0 - p.p_man(man)));
    CHECK(p.theta_of("chef") == 0.0);

    Policy flat;
    flat.a = 0.0;
    CHECK(flat.greedy(man) == Gender::man);
    CHECK(flat.greedy(woman) == Gender::man);
}

TEST_CASE("degenerate policies and their error rates") {
    const auto m = testing_support::mini_manifest(5);
    const auto lex = default_gender_lexicon();
    const auto reward = make_reward(RewardKind::correctness, {}, m);

    Policy blind;
    blind.a = 0.0;
    const auto e0 = evaluate_policy(blind, m, lex, reward);
    CHECK(*e0.errors.overall.rate == doctest::Approx(0.5));
    CHECK(*e0.errors.woman.rate == 1.0);
    CHECK(*e0.errors.man.rate == 0.0);

    Policy sharp;
    sharp.a = 1e6;
    const auto e1 = evaluate_policy(sharp, m, lex, reward);
    CHECK(*e1.errors.overall.rate == 0.0);
    CHECK(e1.mean_reward == 1.0);
}

TEST_CASE("symmetric reward gives zero gradient") {
    const auto inst = instance_of("chef", Category::profession, Gender::woman);
    Policy p;
    p.theta["chef"] = 0.7;
    const auto g = exact_gradient(p, inst, table_reward(0.4, 0.4), 5);
    CHECK(std::fabs(g.theta) < 1e-14);
    CHECK(std::fabs(g.a) < 1e-14);
}

TEST_CASE("exact gradient is the derivative of the surrogate") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::uniform_real_distribution<double> du(0.05, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const auto inst = instance_of("washing", Category::activity, trial % 2 ? Gender::man : Gender::woman);
        Policy p;
        p.theta["washing"] = u(rng);
        p.a = u(rng);
        const double r_m = u(rng);
        const double r_w = r_m + du(rng) * (trial % 3 == 0 ? -1 : 1);
        const auto reward = table_reward(r_m, r_w);
        const auto g = exact_gradient(p, inst, reward, 5);
        const double h = 1e-5;
        const double fd_theta = oracle::central_difference(
            [&](double x) {
                Policy q = p;
                q.theta["washing"] = x;
                return mrt_surrogate(q, p, inst, reward, 5);
            },
            p.theta["washing"], h);
        const double fd_a = oracle::central_difference(
            [&](double x) {
                Policy q = p;
                q.a = x;
                return mrt_surrogate(q, p, inst, reward, 5);
            },
            p.a, h);
        CAPTURE(trial);
        CHECK(relative_error(g.theta, fd_theta) <= 1e-6);
        CHECK(relative_error(g.a, fd_a) <= 1e-6);
    }
}

TEST_CASE("sampled gradient averages to the exact gradient") {
    const auto inst = instance_of("nurse", Category::profession, Gender::man);
    Policy p;
    p.theta["nurse"] = -0.4;
    p.a = 0.8;
    const auto reward = table_reward(0.75, 1.0);
    const auto exact = exact_gradient(p, inst, reward, 5);
    std::mt19937_64 rng(123);
    const int n = 10000;
    double sum = 0.0;
    double sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto g = sampled_gradient(p, inst, reward, 5, rng);
        sum += g.theta;
        sq += g.theta * g.theta;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sq / n - mean * mean) / n);
    CHECK(std::fabs(mean - exact.theta) <= 3 * se);
}

TEST_CASE("mrt_step equals averaging sampled gradients with the same stream") {
    const auto m = testing_support::mini_manifest(3);
    RewardParams params;
    params.favored = {{"nurse", Gender::woman}, {"basketball", Gender::man}};
    const auto reward = make_reward(RewardKind::clipscore_like, params, m);
    Policy p;
    p.theta["nurse"] = -1.0;
    p.a = 0.5;
    p.temperature = 0.8;
    TrainConfig cfg;
    cfg.learning_rate = 0.3;

    std::mt19937_64 rng_a(5);
    const auto stepped = mrt_step(p, m, reward, cfg, rng_a);

    std::mt19937_64 rng_b(5);
    std::map<std::string, double> d_theta;
    double d_a = 0.0;
    for (const auto& inst : m) {
        const auto g = sampled_gradient(p, inst, reward, cfg.samples_per_step, rng_b);
        d_theta[inst.triple.subject.word] += g.theta;
        d_a += g.a;
    }
    const double scale = cfg.learning_rate / static_cast<double>(m.size());
    for (const auto& [word, d] : d_theta) {
        CAPTURE(word);
        CHECK(stepped.theta_of(word) == doctest::Approx(p.theta_of(word) + scale * d).epsilon(1e-12));
    }
    CHECK(stepped.a == doctest::Approx(p.a + scale * d_a).epsilon(1e-12));
    CHECK(rng_a() == rng_b());
}

TEST_CASE("correctness reward moves every concept toward the true gender") {
    const auto m = testing_support::mini_manifest(10);
    const auto reward = make_reward(RewardKind::correctness, {}, m);
    Policy p;
    p.a = 0.2;
    p.theta["nurse"] = -1.0;
    p.theta["engineer"] = 1.0;
    const auto lex = default_gender_lexicon();
    const double before = *evaluate_policy(p, m, lex, reward).errors.overall.rate;
    TrainConfig cfg;
    cfg.learning_rate = 1.0;
    std::mt19937_64 rng(1);
    Policy q = p;
    for (int s = 0; s < 100; ++s) q = mrt_step(q, m, reward, cfg, rng);
    CHECK(q.a > p.a);
    const double after = *evaluate_policy(q, m, lex, reward).errors.overall.rate;
    CHECK(after < before);
}

TEST_CASE("a woman bonus on washing lowers P(man | man image) every step") {
    std::vector<Instance> batch;
    for (int i = 0; i < 4; ++i) {
        batch.push_back(instance_of("washing", Category::activity, Gender::man));
        batch.push_back(instance_of("washing", Category::activity, Gender::woman));
    }
    RewardParams params;
    params.delta = 0.1;
    params.favored = {{"washing", Gender::woman}};
    const auto reward = make_reward(RewardKind::clipscore_like, params, batch);
    Policy p;
    p.a = 1.5;
    double prev = p.p_man(batch[0]);
    for (int step = 0; step < 50; ++step) {
        PolicyGradient total;
        for (const auto& inst : batch) {
            const auto g = exact_gradient(p, inst, reward, 5);
            total.theta += g.theta;
            total.a += g.a;
        }
        p.theta["washing"] += 0.5 * total.theta / static_cast<double>(batch.size());
        p.a += 0.5 * total.a / static_cast<double>(batch.size());
        const double now = p.p_man(batch[0]);
        CHECK(now < prev);
        prev = now;
    }
}

TEST_CASE("reward kinds") {
    const auto m = testing_support::mini_manifest(2);
    RewardParams params;
    params.favored = {{"nurse", Gender::woman}};
    const auto clip = make_reward(RewardKind::clipscore_like, params, m);
    const auto inst = instance_of("nurse", Category::profession, Gender::man);
    CHECK(clip(inst, Gender::man) == doctest::Approx(2.5 * 0.30));
    CHECK(clip(inst, Gender::woman) == doctest::Approx(2.5 * 0.40));
    CHECK(synthetic_cosine(inst, Gender::woman, params) == doctest::Approx(0.40));

    const auto cider = make_reward(RewardKind::cider_like, params, m);
    CHECK(cider(inst, Gender::man) > cider(inst, Gender::woman));
    const auto hyb = make_reward(RewardKind::hybrid, params, m);
    CHECK(hyb(inst, Gender::man) == doctest::Approx(clip(inst, Gender::man) + cider(inst, Gender::man)));
    CHECK_THROWS_AS(make_reward(RewardKind::custom, params, m), ConfigError);
    CHECK(parse_reward_kind("hybrid") == RewardKind::hybrid);
}

TEST_CASE("non-finite rewards stop training") {
    const auto m = testing_support::mini_manifest(1);
    const RewardFn bad(RewardKind::custom, [](const Instance&, Gender) { return std::nan(""); });
    std::mt19937_64 rng(0);
    CHECK_THROWS_AS(mrt_step(Policy{}, m, bad, TrainConfig{}, rng), TrainingError);
    TrainConfig k1;
    k1.samples_per_step = 1;
    CHECK_THROWS_AS(mrt_step(Policy{}, m, make_reward(RewardKind::correctness, {}, m), k1, rng), ConfigError);
}

TEST_CASE("sim config validation") {
    const auto cfg = load_sim_config(testing_support::data_file("sim_biased.json"));
    CHECK(cfg.images_per_cell == 500);
    CHECK(cfg.train.steps == 500);
    CHECK(cfg.reward.favored.at("nurse") == Gender::woman);
    CHECK(cfg.lexicon.concepts().size() == 18);
    CHECK(load_sim_config(testing_support::data_file("sim_aligned.json")).reward_kind == RewardKind::correctness);

    CHECK_THROWS_AS(parse_sim_config("{"), ConfigError);
    CHECK_THROWS_AS(parse_sim_config(R"({"train":{"samples_per_step":1}})"), ConfigError);
    CHECK_THROWS_AS(parse_sim_config(R"({"policy":{"theta":{"unicorn":1}}})"), ConfigError);
    CHECK_THROWS_AS(parse_sim_config(R"({"reward":{"kind":"nope"}})"), ConfigError);
    CHECK_THROWS_AS(parse_sim_config(R"({"reward":{"base_cosine":0.95,"delta":0.1}})"), ConfigError);
    CHECK_THROWS_AS(parse_sim_config(R"({"policy":{"temperature":0}})"), ConfigError);
}

TEST_CASE("simulation output is independent of the thread count") {
    auto cfg = parse_sim_config(R"({"images_per_cell":10,"reward":{"favored":{"nurse":"woman"}},
                                    "train":{"steps":20,"learning_rate":1.0,"seed":4}})");
    const auto lex = default_gender_lexicon();
    const auto one = run_simulation(cfg, lex, 1);
    const auto four = run_simulation(cfg, lex, 4);
    CHECK(to_json(one).dump() == to_json(four).dump());
    CHECK(one.series.size() == 21);
    CHECK(one.series.front().step == 0);
    const auto j = to_json(one);
    CHECK(j.contains("initial"));
    CHECK(j.contains("final"));
    CHECK(j["series"][0].contains("error_rate_by_gender"));
    CHECK(j["final"].contains("flagged"));

    // The compiled loop agrees with repeated mrt_step calls.
    const auto concepts = cfg.lexicon.concepts();
    const auto manifest = build_manifest(concepts, kGenders, synthesize_images(concepts, cfg.images_per_cell));
    const auto reward = make_reward(cfg.reward_kind, cfg.reward, manifest);
    std::mt19937_64 rng(derive_seed(cfg.train.seed, "mrt"));
    Policy p = cfg.init;
    for (std::size_t s = 0; s < cfg.train.steps; ++s) p = mrt_step(p, manifest, reward, cfg.train, rng);
    CHECK(p.a == one.final_policy.a);
    for (const auto& [word, v] : one.final_policy.theta) CHECK(p.theta_of(word) == v);
}
