#include "capbias/report.hpp"

#include "capbias/errors.hpp"
#include "capbias/io.hpp"

#include <fmt/format.h>

#include <cmath>

namespace capbias {

using nlohmann::ordered_json;

namespace {

constexpr double kSize = 480.0;
constexpr double kMargin = 60.0;
constexpr double kPlot = kSize - 2 * kMargin;
constexpr double kLabelDistance = 0.1;

double px(double x) { return kMargin + kPlot * x; }
double py(double y) { return kSize - kMargin - kPlot * y; }

std::string xml_escape(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

} // namespace

std::string_view color_of(BiasLabel label) {
    switch (label) {
    case BiasLabel::man_biased: return kManBiasedColor;
    case BiasLabel::woman_biased: return kWomanBiasedColor;
    case BiasLabel::neutral: return kNeutralColor;
    }
    return kNeutralColor;
}

std::vector<ScatterPoint> scatter_points(const MetricAudit& audit, std::optional<Category> category) {
    std::vector<ScatterPoint> out;
    for (const auto& ca : audit.concepts) {
        const auto& v = ca.verdict;
        if (category && v.subject.category != *category) continue;
        out.push_back({v.subject, v.acc_man, v.acc_woman, v.label});
    }
    return out;
}

std::string render_scatter(std::span<const ScatterPoint> points, std::string_view title) {
    for (const auto& p : points) {
        if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0)) {
            throw InvalidInput("scatter point '" + p.subject.word + "' lies outside the unit square");
        }
    }
    std::string svg;
    auto out = std::back_inserter(svg);
    fmt::format_to(out, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{0}\" viewBox=\"0 0 {0} {0}\">\n",
                   kSize);
    fmt::format_to(out, "<title>{}</title>\n", xml_escape(title));
    fmt::format_to(out, "<rect x=\"0\" y=\"0\" width=\"{0}\" height=\"{0}\" fill=\"white\"/>\n", kSize);
    fmt::format_to(out, "<text x=\"{:.2f}\" y=\"30\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n", kSize / 2,
                   xml_escape(title));

    svg += "<g class=\"axes\" stroke=\"black\" stroke-width=\"1\">\n";
    fmt::format_to(out, "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\"/>\n", px(0), py(0), px(1), py(0));
    fmt::format_to(out, "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\"/>\n", px(0), py(0), px(0), py(1));
    for (int i = 0; i <= 4; ++i) {
        const double t = i / 4.0;
        fmt::format_to(out, "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\"/>\n", px(t), py(0), px(t),
                       py(0) + 5);
        fmt::format_to(out, "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\"/>\n", px(0) - 5, py(t), px(0),
                       py(t));
    }
    svg += "</g>\n<g class=\"ticks\" font-size=\"11\" fill=\"black\">\n";
    for (int i = 0; i <= 4; ++i) {
        const double t = i / 4.0;
        fmt::format_to(out, "<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{:.2f}</text>\n", px(t), py(0) + 18,
                       t);
        fmt::format_to(out, "<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\">{:.2f}</text>\n", px(0) - 8, py(t) + 4,
                       t);
    }
    svg += "</g>\n";
    fmt::format_to(out,
                   "<line class=\"diagonal\" x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#7f7f7f\" "
                   "stroke-dasharray=\"4 4\"/>\n",
                   px(0), py(0), px(1), py(1));
    fmt::format_to(out, "<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\" font-size=\"13\">man accuracy</text>\n",
                   px(0.5), kSize - 18);
    fmt::format_to(out,
                   "<text x=\"18\" y=\"{:.2f}\" text-anchor=\"middle\" font-size=\"13\" "
                   "transform=\"rotate(-90 18 {:.2f})\">woman accuracy</text>\n",
                   py(0.5), py(0.5));

    svg += "<g class=\"points\">\n";
    for (const auto& p : points) {
        fmt::format_to(out,
                       "<circle class=\"{}\" cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"4\" fill=\"{}\"><title>{}</title></circle>\n",
                       to_string(p.label), px(p.x), py(p.y), color_of(p.label), xml_escape(p.subject.word));
    }
    svg += "</g>\n<g class=\"labels\" font-size=\"11\">\n";
    for (const auto& p : points) {
        // Perpendicular distance to the diagonal.
        if (std::abs(p.y - p.x) / std::sqrt(2.0) <= kLabelDistance) continue;
        fmt::format_to(out, "<text x=\"{:.2f}\" y=\"{:.2f}\">{}</text>\n", px(p.x) + 6, py(p.y) - 6,
                       xml_escape(p.subject.word));
    }
    svg += "</g>\n<g class=\"legend\" font-size=\"11\">\n";
    const BiasLabel legend[] = {BiasLabel::man_biased, BiasLabel::woman_biased, BiasLabel::neutral};
    for (int i = 0; i < 3; ++i) {
        const double y = kMargin + 14.0 * i;
        fmt::format_to(out, "<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"4\" fill=\"{}\"/>\n", px(1) - 90, y,
                       color_of(legend[i]));
        fmt::format_to(out, "<text x=\"{:.2f}\" y=\"{:.2f}\">{}</text>\n", px(1) - 82, y + 4, to_string(legend[i]));
    }
    svg += "</g>\n</svg>\n";
    return svg;
}

ordered_json bundle_json(const ReportBundle& b) {
    ordered_json j = ordered_json::object();
    if (!b.audits.empty()) {
        ordered_json arr = ordered_json::array();
        for (const auto& a : b.audits) arr.push_back(to_json(a));
        j["audits"] = std::move(arr);
    }
    if (!b.error_reports.empty()) {
        ordered_json arr = ordered_json::array();
        for (const auto& [name, r] : b.error_reports) arr.push_back({{"system", name}, {"report", to_json(r)}});
        j["gender_errors"] = std::move(arr);
    }
    if (!b.win_reports.empty()) {
        ordered_json arr = ordered_json::array();
        for (const auto& [name, r] : b.win_reports) arr.push_back({{"comparison", name}, {"report", to_json(r)}});
        j["win_rates"] = std::move(arr);
    }
    if (!b.correlations.empty()) j["correlations"] = to_json(b.correlations);
    return j;
}

namespace {

std::string pct(const ordered_json& rate) {
    return rate.is_null() ? std::string("-") : fmt::format("{:.2f}", 100.0 * rate.get<double>());
}

void bias_table(std::string& s, const ordered_json& audits) {
    auto out = std::back_inserter(s);
    s += "Biased concepts (%)\n";
    fmt::format_to(out, "{:<12}{:>12}{:>12}{:>12}{:>12}\n", "metric", "profession", "activity", "object", "overall");
    for (const auto& a : audits) {
        const auto& sum = a.at("summary");
        fmt::format_to(out, "{:<12}{:>12.2f}{:>12.2f}{:>12.2f}{:>12.2f}\n", a.at("metric").get<std::string>(),
                       sum.at("profession").at("percent").get<double>(), sum.at("activity").at("percent").get<double>(),
                       sum.at("object").at("percent").get<double>(), sum.at("overall").at("percent").get<double>());
    }
    s += "\n";
}

void error_table(std::string& s, const ordered_json& reports) {
    auto out = std::back_inserter(s);
    s += "Gender prediction error (%)\n";
    fmt::format_to(out, "{:<16}{:>10}{:>10}{:>10}{:>10}{:>10}\n", "system", "overall", "man", "woman", "neutral",
                   "mixed");
    for (const auto& e : reports) {
        const auto& r = e.at("report");
        fmt::format_to(out, "{:<16}{:>10}{:>10}{:>10}{:>10}{:>10}\n", e.at("system").get<std::string>(),
                       pct(r.at("overall").at("rate")), pct(r.at("man").at("rate")), pct(r.at("woman").at("rate")),
                       r.at("neutral").get<std::size_t>(), r.at("mixed").get<std::size_t>());
    }
    s += "\n";
}

void win_table(std::string& s, const ordered_json& reports) {
    auto out = std::back_inserter(s);
    s += "Score value and win rate (%), system A vs B\n";
    fmt::format_to(out, "{:<16}{:<12}{:>8}{:>10}{:>10}{:>10}{:>10}\n", "comparison", "category", "n", "value_a",
                   "value_b", "win_a", "win_b");
    for (const auto& w : reports) {
        const auto& r = w.at("report");
        for (const char* cat : {"profession", "activity", "object", "all"}) {
            const auto& c = r.at(cat);
            fmt::format_to(out, "{:<16}{:<12}{:>8}{:>10.2f}{:>10.2f}{:>10.2f}{:>10.2f}\n",
                           w.at("comparison").get<std::string>(), cat, c.at("n").get<std::size_t>(),
                           c.at("value_a").get<double>(), c.at("value_b").get<double>(), c.at("win_a").get<double>(),
                           c.at("win_b").get<double>());
        }
    }
    s += "\n";
}

void correlation_table(std::string& s, const ordered_json& rows) {
    auto out = std::back_inserter(s);
    s += "Correlation with human judgments (tau-c)\n";
    fmt::format_to(out, "{:<20}{:>10}\n", "metric", "tau_c");
    for (const auto& r : rows) {
        fmt::format_to(out, "{:<20}{:>10.3f}\n", r.at("metric").get<std::string>(), r.at("tau_c").get<double>());
    }
    s += "\n";
}

} // namespace

std::string render_tables(const ordered_json& bundle) {
    std::string s;
    auto nonempty = [&](const char* key) { return bundle.contains(key) && !bundle.at(key).empty(); };
    if (nonempty("audits")) bias_table(s, bundle.at("audits"));
    if (nonempty("gender_errors")) error_table(s, bundle.at("gender_errors"));
    if (nonempty("win_rates")) win_table(s, bundle.at("win_rates"));
    if (nonempty("correlations")) correlation_table(s, bundle.at("correlations"));
    return s;
}

void write_report(const ReportBundle& b, const std::filesystem::path& dir) {
    write_report(bundle_json(b), dir);
}

void write_report(const ordered_json& bundle, const std::filesystem::path& dir) {
    write_text_file(dir / "report.json", bundle.dump(2) + "\n");
    write_text_file(dir / "tables.txt", render_tables(bundle));
    if (!bundle.contains("audits")) return;
    for (const auto& a : bundle.at("audits")) {
        const auto metric = a.at("metric").get<std::string>();
        for (auto cat : kCategories) {
            std::vector<ScatterPoint> points;
            for (const auto& p : a.at("scatter")) {
                const auto c = parse_category(p.at("category").get<std::string>());
                if (c != cat) continue;
                points.push_back({{p.at("concept").get<std::string>(), c},
                                  p.at("x").get<double>(),
                                  p.at("y").get<double>(),
                                  parse_bias_label(p.at("label").get<std::string>())});
            }
            const auto name = fmt::format("scatter_{}_{}.svg", to_string(cat), metric);
            const auto title = fmt::format("{} bias, {} category", metric, to_string(cat));
            write_text_file(dir / name, render_scatter(points, title));
        }
    }
}

} // namespace capbias
