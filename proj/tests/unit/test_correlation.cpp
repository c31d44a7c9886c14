#include "oracles.hpp"

#include <capbias/correlation.hpp>
#include <capbias/errors.hpp>

#include <doctest.h>

#include <random>

using namespace capbias;

namespace {

std::vector<std::pair<double, int>> as_oracle(const std::vector<JudgedPair>& v) {
    std::vector<std::pair<double, int>> out;
    for (const auto& p : v) out.emplace_back(p.metric_score, p.human_rating);
    return out;
}

std::vector<JudgedPair> random_pairs(std::mt19937_64& rng, std::size_t n, int score_levels, int rating_levels) {
    std::vector<JudgedPair> v(n);
    for (auto& p : v) {
        p.metric_score = static_cast<double>(rng() % static_cast<unsigned>(score_levels)) * 0.25;
        p.human_rating = 1 + static_cast<int>(rng() % static_cast<unsigned>(rating_levels));
    }
    return v;
}

std::vector<JudgedPair> grid(bool reversed) {
    std::vector<JudgedPair> v;
    for (int level = 0; level < 4; ++level) {
        for (int k = 0; k < 4; ++k) v.push_back({reversed ? -level : level, level + 1});
    }
    return v;
}

} // namespace

TEST_CASE("fast concordance counting equals pairwise counting") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        const auto n = 2 + rng() % 199;
        const auto pairs = random_pairs(rng, n, 2 + static_cast<int>(rng() % 30), 2 + static_cast<int>(rng() % 4));
        const auto fast = concordance(pairs);
        const auto slow = oracle::count_pairs(as_oracle(pairs));
        CAPTURE(trial);
        CHECK(fast.concordant == slow.concordant);
        CHECK(fast.discordant == slow.discordant);
        CHECK(fast.n == n);
        CHECK(kendall_tau_c(pairs) == doctest::Approx(oracle::tau_c(as_oracle(pairs))).epsilon(1e-12));
    }
}

TEST_CASE("balanced concordant grid") {
    const auto up = grid(false);
    const auto c = concordance(up);
    CHECK(c.concordant == 96);
    CHECK(c.discordant == 0);
    CHECK(c.m == 4);
    CHECK(kendall_tau_c(up) == doctest::Approx(oracle::tau_c(as_oracle(up))));
    CHECK(kendall_tau_c(grid(true)) == doctest::Approx(-kendall_tau_c(up)));
}

TEST_CASE("random 30-pair sample") {
    std::mt19937_64 rng(30);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<JudgedPair> v(30);
    for (auto& p : v) {
        p.metric_score = u(rng);
        p.human_rating = 1 + static_cast<int>(rng() % 4);
    }
    CHECK(kendall_tau_c(v) == doctest::Approx(oracle::tau_c(as_oracle(v))).epsilon(1e-12));
}

TEST_CASE("tau-c rejects degenerate input") {
    CHECK_THROWS_AS(kendall_tau_c(std::vector<JudgedPair>{{1.0, 1}}), InvalidInput);
    CHECK_THROWS_AS(kendall_tau_c(std::vector<JudgedPair>{{1.0, 1}, {2.0, 1}}), InvalidInput);
    CHECK_THROWS_AS(kendall_tau_c(std::vector<JudgedPair>{{1.0, 1}, {std::nan(""), 2}}), InvalidInput);
}

TEST_CASE("refining the score order cannot lower tau-c") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        auto coarse = random_pairs(rng, 60, 3, 4);
        auto fine = coarse;
        // Break score ties in the direction of the rating.
        for (auto& p : fine) p.metric_score += 0.01 * p.human_rating;
        const auto cc = concordance(coarse);
        const auto cf = concordance(fine);
        CHECK(cf.concordant - cf.discordant >= cc.concordant - cc.discordant);
        if (cc.m == cf.m) CHECK(kendall_tau_c(fine) >= kendall_tau_c(coarse));
    }
}

TEST_CASE("judgment parsing") {
    const auto js = parse_judgments(R"({"candidate":"a man","references":["a man cooking"],"image_ref":"i1","rating":3}
{"candidate":"a dog","references":["a man cooking"],"image_ref":"i1","rating":1}
)");
    REQUIRE(js.size() == 2);
    CHECK(js[0].rating == 3);
    CHECK_THROWS_AS(parse_judgments(R"({"candidate":"x","references":["y"],"image_ref":"i","rating":9})"), LoadError);
    CHECK(parse_judgments(R"({"candidate":"x","references":["y"],"image_ref":"i","rating":9})", {1, 10}).size() == 1);
    CHECK_THROWS_AS(parse_judgments("{\"candidate\":1}"), LoadError);
}

TEST_CASE("metric correlation end to end") {
    // Image i has one reference; candidates are graded copies of it.
    std::vector<Judgment> js;
    EmbeddingStore store(3);
    const std::vector<std::string> refs = {"a man riding a red bike", "a woman cooking in a kitchen",
                                           "a dog running on the beach"};
    const std::vector<std::string> cands = {"a man riding a red bike", "a man riding a bike", "a man on a bike",
                                            "a person outside"};
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const std::string img = "img" + std::to_string(i);
        store.add(img, {1.0, 0.1 * static_cast<double>(i), 0.0});
        for (std::size_t k = 0; k < cands.size(); ++k) {
            js.push_back({cands[k] + (i == 0 ? "" : " " + std::to_string(i)), {refs[i]}, img, 4 - static_cast<int>(k)});
        }
    }
    for (std::size_t n = 0; n < js.size(); ++n) {
        if (!store.contains(text_key(js[n].candidate))) {
            store.add(text_key(js[n].candidate), {1.0, 0.2 * static_cast<double>(n % 4), 0.3});
        }
    }
    const std::vector<std::string> names = {"bleu4", "ciderD", "clipscore", "hybrid", "clipscore+bleu4"};
    const auto rows = correlate_metrics(js, names, &store);
    REQUIRE(rows.size() == names.size());

    // Recompute bleu4 and clipscore+bleu4 by hand.
    std::vector<std::pair<double, int>> bleu;
    std::vector<std::pair<double, int>> combo;
    for (const auto& j : js) {
        const std::vector<TokenSeq> r = {tokenize(j.references[0])};
        const double b = bleu4(tokenize(j.candidate), r).value;
        const double c = clipscore(store.at(text_key(j.candidate)), store.at(j.image_ref)).value;
        bleu.emplace_back(b, j.rating);
        combo.emplace_back(b + c, j.rating);
    }
    CHECK(rows[0].metric == "bleu4");
    CHECK(rows[0].tau_c == doctest::Approx(oracle::tau_c(bleu)));
    CHECK(rows[4].tau_c == doctest::Approx(oracle::tau_c(combo)));

    CHECK_THROWS_AS(correlate_metrics(js, names, nullptr), ConfigError);
    EmbeddingStore partial(3);
    partial.add("img0", {1, 0, 0});
    CHECK_THROWS_AS(correlate_metrics(js, names, &partial), ConfigError);
    const std::vector<std::string> bad = {"spice"};
    CHECK_THROWS(correlate_metrics(js, bad, &store));
}

TEST_CASE("single metric on two pairs gives one row") {
    const std::vector<Judgment> js = {{"a man", {"a man"}, "i1", 4}, {"a cat", {"a man"}, "i2", 1}};
    const std::vector<std::string> names = {"rougeL"};
    const auto rows = correlate_metrics(js, names, nullptr);
    REQUIRE(rows.size() == 1);
    CHECK(to_json(rows).size() == 1);
}
