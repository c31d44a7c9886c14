#include "helpers.hpp"

#include <capbias/errors.hpp>
#include <capbias/report.hpp>
#include <capbias/scoring.hpp>

#include <doctest.h>

#include <regex>

using namespace capbias;

namespace {

struct Circle {
    std::string cls;
    double cx = 0;
    double cy = 0;
    std::string fill;
};

std::vector<Circle> point_circles(const std::string& svg) {
    std::vector<Circle> out;
    const std::regex re(R"re(<circle class="([a-z_]+)" cx="([0-9.]+)" cy="([0-9.]+)" r="4" fill="(#[0-9a-f]{6})">)re");
    for (std::sregex_iterator it(svg.begin(), svg.end(), re), end; it != end; ++it) {
        out.push_back({(*it)[1], std::stod((*it)[2]), std::stod((*it)[3]), (*it)[4]});
    }
    return out;
}

std::size_t count(const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
    return n;
}

// Screen y of the diagonal at screen x, on the 480-px canvas with 60-px margins.
double diagonal_y(double cx) { return 480.0 - cx; }

} // namespace

TEST_CASE("empty scatter still has axes") {
    const auto svg = render_scatter({}, "empty");
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("class=\"axes\"") != std::string::npos);
    CHECK(svg.find("class=\"diagonal\"") != std::string::npos);
    CHECK(point_circles(svg).empty());
    CHECK(svg.find("</svg>") != std::string::npos);
}

TEST_CASE("neutral point sits on the diagonal in orange") {
    const std::vector<ScatterPoint> pts = {{{"chef", Category::profession}, 0.5, 0.5, BiasLabel::neutral}};
    const auto circles = point_circles(render_scatter(pts, "one"));
    REQUIRE(circles.size() == 1);
    CHECK(circles[0].fill == "#ff7f0e");
    CHECK(circles[0].cy == doctest::Approx(diagonal_y(circles[0].cx)));
}

TEST_CASE("woman-biased point is green and above the diagonal, and labelled") {
    const std::vector<ScatterPoint> pts = {
        {{"washing", Category::activity}, 0.2, 0.9, BiasLabel::woman_biased},
        {{"reading", Category::activity}, 0.6, 0.65, BiasLabel::neutral},
        {{"jumping", Category::activity}, 0.9, 0.3, BiasLabel::man_biased}};
    const auto svg = render_scatter(pts, "activities");
    const auto circles = point_circles(svg);
    REQUIRE(circles.size() == 3);
    CHECK(circles[0].fill == "#2ca02c");
    CHECK(circles[0].cls == "woman_biased");
    CHECK(circles[0].cy < diagonal_y(circles[0].cx));
    CHECK(circles[2].fill == "#1f77b4");
    CHECK(circles[2].cy > diagonal_y(circles[2].cx));
    // Labels only for points far from the diagonal.
    const auto labels = svg.substr(svg.find("class=\"labels\""));
    CHECK(labels.find(">washing<") != std::string::npos);
    CHECK(labels.find(">jumping<") != std::string::npos);
    CHECK(labels.substr(0, labels.find("</g>")).find(">reading<") == std::string::npos);
}

TEST_CASE("points outside the unit square are rejected") {
    const std::vector<ScatterPoint> pts = {{{"x", Category::object}, 1.2, 0.5, BiasLabel::neutral}};
    CHECK_THROWS_AS(render_scatter(pts, "bad"), InvalidInput);
}

TEST_CASE("tables from an all-neutral audit") {
    const auto m = testing_support::mini_manifest(5);
    const auto recs = score_manifest(m, kNgramMetrics, nullptr);
    AuditOptions opts;
    opts.bootstrap_samples = 200;
    ReportBundle b;
    for (const Metric metric : kNgramMetrics) b.audits.push_back(audit_metric(metric, recs, m, opts));
    const auto tables = render_tables(bundle_json(b));
    CHECK(tables.find("Biased concepts (%)") != std::string::npos);
    CHECK(count(tables, "0.00") == 16);
    CHECK(tables.find("tau-c") == std::string::npos);
}

TEST_CASE("correlation rows use three decimals and empty sections are omitted") {
    ReportBundle b;
    b.correlations = {{"clipscore+ciderD", 53.768}, {"bleu4", 30.7764}};
    const auto j = bundle_json(b);
    CHECK_FALSE(j.contains("audits"));
    const auto tables = render_tables(j);
    CHECK(tables.find("53.768") != std::string::npos);
    CHECK(tables.find("30.776") != std::string::npos);
    CHECK(tables.find("Biased concepts") == std::string::npos);

    const auto empty = bundle_json(ReportBundle{});
    CHECK(empty.is_object());
    CHECK(empty.empty());
    CHECK(render_tables(empty).empty());
    CHECK(nlohmann::json::parse(empty.dump()).is_object());
}

TEST_CASE("write_report produces json, tables and one scatter per category and metric") {
    const auto m = testing_support::mini_manifest(5);
    const Metric metrics[] = {Metric::bleu4};
    const auto recs = score_manifest(m, metrics, nullptr);
    AuditOptions opts;
    opts.bootstrap_samples = 200;
    ReportBundle b;
    b.audits.push_back(audit_metric(Metric::bleu4, recs, m, opts));
    testing_support::TempDir dir("report");
    write_report(b, dir.path());
    CHECK(std::filesystem::exists(dir / "report.json"));
    CHECK(std::filesystem::exists(dir / "tables.txt"));
    for (const char* cat : {"profession", "activity", "object"}) {
        const auto svg = testing_support::slurp(dir / ("scatter_" + std::string(cat) + "_bleu4.svg"));
        CHECK(point_circles(svg).size() == 6);
    }
    // The JSON form renders the same files.
    testing_support::TempDir again("report2");
    write_report(nlohmann::ordered_json::parse(testing_support::slurp(dir / "report.json")), again.path());
    CHECK(testing_support::slurp(again / "scatter_object_bleu4.svg") ==
          testing_support::slurp(dir / "scatter_object_bleu4.svg"));
    CHECK(testing_support::slurp(again / "tables.txt") == testing_support::slurp(dir / "tables.txt"));
}
