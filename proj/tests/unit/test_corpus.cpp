#include "helpers.hpp"

#include <capbias/corpus.hpp>
#include <capbias/errors.hpp>

#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

using namespace capbias;

TEST_CASE("caption patterns per category") {
    const auto act = render_captions(Gender::woman, {"reading", Category::activity});
    CHECK(act.reference == "a photo of a woman who is reading");
    CHECK(act.good == "a woman who is reading");
    CHECK(act.bad == "a man who is reading");

    const auto prof = render_captions(Gender::man, {"nurse", Category::profession});
    CHECK(prof.good == "a man who is a nurse");
    CHECK(prof.bad == "a woman who is a nurse");
    CHECK(prof.reference == "a photo of a man who is a nurse");

    const auto obj = render_captions(Gender::woman, {"apron", Category::object});
    CHECK(obj.good == "a woman with an apron");
    CHECK(obj.bad == "a man with an apron");
}

TEST_CASE("article rule and overrides") {
    CHECK(article_for("engineer") == "an");
    CHECK(article_for("doctor") == "a");
    CHECK(article_for("umbrella") == "an");
    CHECK(article_for("unicorn", {{"unicorn", "a"}}) == "a");
    CHECK(article_for("hour", {{"hour", "an"}}) == "an");
}

TEST_CASE("manifest has one instance per image, gender and concept") {
    const std::vector<Concept> concepts = {{"chef", Category::profession}, {"reading", Category::activity}};
    const auto images = synthesize_images(concepts, 3);
    const auto m = build_manifest(concepts, kGenders, images);
    CHECK(m.size() == 12);
    std::set<std::string> ids;
    for (const auto& inst : m) ids.insert(inst.id);
    CHECK(ids.size() == 12);
    CHECK(m.front().id == "profession/chef/man/0");

    const auto report = validate_manifest(m);
    CHECK(report.clean());
    REQUIRE(report.counts.size() == 2);
    for (const auto& c : report.counts) {
        CHECK(c.man == 3);
        CHECK(c.woman == 3);
    }
}

TEST_CASE("duplicate image ref is reported by name") {
    const std::vector<Concept> concepts = {{"chef", Category::profession}};
    ImageMap images;
    images[{"chef", Gender::woman}] = {"photo1.jpg", "photo2.jpg", "photo1.jpg"};
    try {
        (void)build_manifest(concepts, kGenders, images);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        REQUIRE(e.offenders().size() == 1);
        CHECK(e.offenders()[0].find("photo1.jpg") != std::string::npos);
    }
}

TEST_CASE("empty image map gives an empty manifest") {
    const auto concepts = bundled_mini_lexicon().concepts();
    CHECK(build_manifest(concepts, kGenders, {}).empty());
}

TEST_CASE("validation flags a template violation") {
    auto m = testing_support::mini_manifest(1);
    m[3].triple.bad = m[3].triple.good;
    const auto report = validate_manifest(m);
    REQUIRE(report.findings.size() == 1);
    CHECK(report.findings[0].kind == FindingKind::template_violation);
    CHECK(report.findings[0].instance_id == m[3].id);
}

TEST_CASE("validation flags duplicate ids and empty refs") {
    auto m = testing_support::mini_manifest(1);
    m[1].id = m[0].id;
    m[2].image_ref.clear();
    const auto report = validate_manifest(m);
    CHECK(report.findings.size() == 2);
}

TEST_CASE("count table reproduces uneven cell sizes") {
    const std::vector<Concept> concepts = {{"accountant", Category::profession}};
    ImageMap images;
    for (int i = 0; i < 246; ++i) images[{"accountant", Gender::man}].push_back("m" + std::to_string(i));
    for (int i = 0; i < 233; ++i) images[{"accountant", Gender::woman}].push_back("w" + std::to_string(i));
    const auto report = validate_manifest(build_manifest(concepts, kGenders, images));
    REQUIRE(report.counts.size() == 1);
    CHECK(report.counts[0].man == 246);
    CHECK(report.counts[0].woman == 233);
}

TEST_CASE("gender swap detection") {
    CHECK(is_gender_swap("a man who is a nurse", "a woman who is a nurse", Gender::man));
    CHECK_FALSE(is_gender_swap("a man who is a nurse", "a woman who is a nurse", Gender::woman));
    CHECK_FALSE(is_gender_swap("a man who is a nurse", "a man who is a nurse", Gender::man));
    CHECK_FALSE(is_gender_swap("a man who is a nurse", "a woman who is a chef", Gender::man));
}

TEST_CASE("manifest JSONL round trip") {
    const auto m = testing_support::mini_manifest(2);
    std::stringstream ss;
    write_manifest(ss, m);
    const auto back = read_manifest(ss);
    REQUIRE(back.size() == m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        CHECK(back[i].id == m[i].id);
        CHECK(back[i].image_ref == m[i].image_ref);
        CHECK(back[i].triple.good == m[i].triple.good);
        CHECK(back[i].triple.bad == m[i].triple.bad);
        CHECK(back[i].triple.reference == m[i].triple.reference);
        CHECK(back[i].triple.gender == m[i].triple.gender);
        CHECK(back[i].triple.subject == m[i].triple.subject);
    }
    CHECK_THROWS_AS(instance_from_jsonl("{\"id\": 1}"), LoadError);
}

TEST_CASE("lexicon parsing") {
    const auto lex = parse_lexicon(R"({"professions":["nurse"],"activities":["reading"],"objects":["apron"]})");
    const auto cs = lex.concepts();
    REQUIRE(cs.size() == 3);
    CHECK(cs[0] == Concept{"nurse", Category::profession});
    CHECK(cs[2] == Concept{"apron", Category::object});
    CHECK_THROWS_AS(parse_lexicon("{not json"), LoadError);
    CHECK_THROWS_AS(parse_lexicon(R"({"professions":["Nurse"]})"), ValidationError);

    const auto bundled = bundled_mini_lexicon();
    CHECK(bundled.concepts().size() == 18);
    const auto from_file = load_lexicon(testing_support::data_file("mini_lexicon.json"));
    CHECK(from_file.concepts() == bundled.concepts());
}

TEST_CASE("image map parsing") {
    const auto map = parse_image_map(R"({"nurse":{"man":["a.jpg"],"woman":["b.jpg","c.jpg"]}})");
    CHECK(map.at({"nurse", Gender::man}).size() == 1);
    CHECK(map.at({"nurse", Gender::woman}).size() == 2);
    CHECK_THROWS_AS(parse_image_map(R"({"nurse":{"child":["a.jpg"]}})"), LoadError);
    CHECK_THROWS_AS(parse_image_map("[1,2]"), LoadError);
}
