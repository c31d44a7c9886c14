#include "cli.hpp"

#include <capbias/audit.hpp>
#include <capbias/caption_analysis.hpp>
#include <capbias/corpus.hpp>
#include <capbias/correlation.hpp>
#include <capbias/embed_score.hpp>
#include <capbias/errors.hpp>
#include <capbias/io.hpp>
#include <capbias/report.hpp>
#include <capbias/rl_sim.hpp>
#include <capbias/scoring.hpp>
#include <capbias/tokenize.hpp>
#include <capbias/version.hpp>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

namespace capbias::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct Common {
    std::uint64_t seed = 0;
    std::size_t bootstrap_samples = 10000;
    double alpha = 0.05;
    std::string metrics = "bleu4,rougeL,ciderD,meteor";
    std::string embeddings;
    std::string scorer_url;
    std::string exclude_concepts;
    unsigned threads = 1;
    std::string out = "capbias-out";
    bool bonferroni = false;
};

std::string fmt_percent(double v) {
    return fmt::format("{:.2f}", v);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<Metric> parse_metrics(const std::string& s) {
    std::vector<Metric> out;
    for (const auto& name : split_list(s)) {
        try {
            const auto m = parse_metric(name);
            if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
        } catch (const InvalidInput& e) {
            throw ConfigError(e.what());
        }
    }
    if (out.empty()) throw ConfigError("at least one metric must be selected");
    return out;
}

/// One concept per line ('#' starts a comment) or a JSON array of strings.
std::set<std::string> load_concept_list(const fs::path& path) {
    const auto text = read_text_file(path);
    std::set<std::string> out;
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '[') {
        try {
            for (const auto& w : json::parse(text)) out.insert(w.get<std::string>());
        } catch (const json::exception& e) {
            throw LoadError("malformed concept list " + path.string() + ": " + e.what());
        }
        return out;
    }
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        line = line.substr(0, line.find('#'));
        const auto tokens = tokenize(line);
        if (!tokens.empty()) out.insert(join(tokens));
    }
    return out;
}

void write_json(const fs::path& path, const ordered_json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

// Thread count is left out on purpose: outputs must not depend on it.
void write_run_metadata(const fs::path& dir, std::string_view command, const ordered_json& config) {
    ordered_json j;
    j["tool"] = "capbias";
    j["version"] = std::string(kVersion);
    j["command"] = std::string(command);
    j["config"] = config;
    write_json(dir / "run.json", j);
}

ordered_json common_echo(const Common& c) {
    ordered_json j;
    j["seed"] = c.seed;
    j["bootstrap_samples"] = c.bootstrap_samples;
    j["alpha"] = c.alpha;
    j["bonferroni"] = c.bonferroni;
    j["metrics"] = split_list(c.metrics);
    j["embeddings"] = c.embeddings.empty() ? ordered_json(nullptr) : ordered_json(c.embeddings);
    j["scorer_url"] = c.scorer_url.empty() ? ordered_json(nullptr) : ordered_json(c.scorer_url);
    j["exclude_concepts"] = c.exclude_concepts.empty() ? ordered_json(nullptr) : ordered_json(c.exclude_concepts);
    return j;
}

RemoteConfig remote_config(const Common& c, std::size_t dim) {
    auto cfg = remote_config_from_env();
    if (!c.scorer_url.empty()) cfg.endpoint = c.scorer_url;
    cfg.dim = dim;
    return cfg;
}

void add_fetched(EmbeddingStore& store, std::vector<Embedding> batch) {
    for (auto& e : batch) {
        if (!store.contains(e.id)) store.add(std::move(e.id), std::move(e.vector));
    }
}

/// Embeddings from --embeddings, or fetched from the service for the given
/// captions and images when a scorer URL (flag or EMBED_ENDPOINT) is known.
std::optional<EmbeddingStore> obtain_embeddings(const Common& c, std::size_t remote_dim,
                                                const std::vector<std::string>& captions,
                                                const std::vector<std::string>& images) {
    if (!c.embeddings.empty()) return load_store(c.embeddings);
    const auto cfg = remote_config(c, remote_dim);
    if (cfg.endpoint.empty()) return std::nullopt;
    EmbeddingStore store(cfg.dim);
    add_fetched(store, fetch_remote_texts(captions, cfg));
    add_fetched(store, fetch_remote_images(images, cfg));
    return store;
}

std::vector<Instance> read_manifest_arg(const std::string& path) {
    if (path.empty()) throw ConfigError("--manifest is required");
    return load_manifest(path);
}

void manifest_texts(std::span<const Instance> manifest, std::vector<std::string>& captions,
                    std::vector<std::string>& images) {
    std::set<std::string> seen_c;
    std::set<std::string> seen_i;
    for (const auto& inst : manifest) {
        for (const auto* cap : {&inst.triple.good, &inst.triple.bad}) {
            if (seen_c.insert(*cap).second) captions.push_back(*cap);
        }
        if (seen_i.insert(inst.image_ref).second) images.push_back(inst.image_ref);
    }
}

std::vector<ScoreRecord> compute_scores(const Common& c, std::size_t remote_dim, std::span<const Instance> manifest,
                                        const std::vector<Metric>& metrics) {
    std::optional<EmbeddingStore> store;
    if (std::any_of(metrics.begin(), metrics.end(), needs_embeddings)) {
        std::vector<std::string> captions;
        std::vector<std::string> images;
        manifest_texts(manifest, captions, images);
        store = obtain_embeddings(c, remote_dim, captions, images);
        if (!store) throw ConfigError("clipscore/hybrid need --embeddings FILE or --scorer-url URL");
    }
    return score_manifest(manifest, metrics, store ? &*store : nullptr, c.threads);
}

void write_scores(const fs::path& path, std::span<const ScoreRecord> records) {
    std::string text;
    for (const auto& r : records) text += score_record_to_jsonl(r) + "\n";
    write_text_file(path, text);
}

std::vector<ScoreRecord> read_scores(const fs::path& path) {
    std::vector<ScoreRecord> out;
    const auto text = read_text_file(path);
    for (const auto line : jsonl_lines(text)) out.push_back(score_record_from_jsonl(line));
    return out;
}

// ---- build-manifest --------------------------------------------------------

struct ManifestArgs {
    std::string lexicon;
    std::string images;
    std::size_t images_per_cell = 1;
};

int cmd_build_manifest(const Common& c, const ManifestArgs& a, std::ostream& out, std::ostream& err) {
    const Lexicon lex = a.lexicon.empty() ? bundled_mini_lexicon() : load_lexicon(a.lexicon);
    const auto concepts = lex.concepts();
    const ImageMap images = a.images.empty() ? synthesize_images(concepts, a.images_per_cell)
                                             : parse_image_map(read_text_file(a.images));
    std::vector<Instance> manifest;
    try {
        manifest = build_manifest(concepts, kGenders, images, lex.article_overrides);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        for (const auto& o : e.offenders()) err << "  " << o << "\n";
        return kFindings;
    }
    const fs::path dir = c.out;
    std::ostringstream os;
    write_manifest(os, manifest);
    write_text_file(dir / "manifest.jsonl", os.str());

    ordered_json cfg;
    cfg["lexicon"] = a.lexicon.empty() ? ordered_json("bundled") : ordered_json(a.lexicon);
    cfg["images"] = a.images.empty() ? ordered_json(nullptr) : ordered_json(a.images);
    cfg["images_per_cell"] = a.images_per_cell;
    write_run_metadata(dir, "build-manifest", cfg);

    const auto report = validate_manifest(manifest);
    for (const auto& f : report.findings) err << "finding: " << f.instance_id << ": " << f.message << "\n";
    out << "wrote " << manifest.size() << " instances to " << (dir / "manifest.jsonl").string() << "\n";
    return report.clean() ? kOk : kFindings;
}

// ---- synth-fixture ---------------------------------------------------------

struct FixtureArgs {
    std::string lexicon;
    std::size_t images_per_cell = 200;
    std::string planted;
    double offset = 0.05;
    double noise = 0.05;
    double gap = 0.02;
    std::string format = "json";
};

int cmd_synth_fixture(const Common& c, const FixtureArgs& a, std::ostream& out) {
    const Lexicon lex = a.lexicon.empty() ? bundled_mini_lexicon() : load_lexicon(a.lexicon);
    const auto concepts = lex.concepts();
    std::set<std::string> known;
    for (const auto& k : concepts) known.insert(k.word);
    std::map<std::string, Gender> planted;
    for (const auto& item : split_list(a.planted)) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("--planted entries look like concept=gender, got '" + item + "'");
        const auto word = item.substr(0, eq);
        if (!known.count(word)) throw ConfigError("planted concept '" + word + "' is not in the lexicon");
        try {
            planted[word] = parse_gender(item.substr(eq + 1));
        } catch (const InvalidInput& e) {
            throw ConfigError(e.what());
        }
    }
    const auto manifest =
        build_manifest(concepts, kGenders, synthesize_images(concepts, a.images_per_cell), lex.article_overrides);
    PlantedBiasParams p;
    p.offset = a.offset;
    p.noise = a.noise;
    p.gender_gap = a.gap;
    p.seed = c.seed;
    const auto store = plant_bias_embeddings(manifest, planted, p);

    const fs::path dir = c.out;
    std::ostringstream os;
    write_manifest(os, manifest);
    write_text_file(dir / "manifest.jsonl", os.str());
    if (a.format == "binary") {
        write_text_file(dir / "embeddings.emb", encode_store_binary(store));
    } else {
        write_text_file(dir / "embeddings.json", encode_store_json(store));
    }
    ordered_json pj = ordered_json::object();
    for (const auto& [w, g] : planted) pj[w] = std::string(to_string(g));
    write_json(dir / "planted.json", pj);

    ordered_json cfg;
    cfg["seed"] = c.seed;
    cfg["images_per_cell"] = a.images_per_cell;
    cfg["planted"] = pj;
    cfg["offset"] = a.offset;
    cfg["noise"] = a.noise;
    cfg["gap"] = a.gap;
    write_run_metadata(dir, "synth-fixture", cfg);
    out << "wrote fixture with " << manifest.size() << " instances and " << store.size() << " embeddings to "
        << dir.string() << "\n";
    return kOk;
}

// ---- score / audit ---------------------------------------------------------

struct ScoreArgs {
    std::string manifest;
    std::string scores;
    std::size_t embed_dim = 512;
};

int cmd_score(const Common& c, const ScoreArgs& a, std::ostream& out) {
    const auto manifest = read_manifest_arg(a.manifest);
    const auto metrics = parse_metrics(c.metrics);
    const auto records = compute_scores(c, a.embed_dim, manifest, metrics);
    const fs::path dir = c.out;
    write_scores(dir / "scores.jsonl", records);
    write_run_metadata(dir, "score", common_echo(c));
    out << "wrote " << records.size() << " score records\n";
    return kOk;
}

int cmd_audit(const Common& c, const ScoreArgs& a, std::ostream& out) {
    const auto manifest = read_manifest_arg(a.manifest);
    const auto metrics = parse_metrics(c.metrics);
    std::vector<ScoreRecord> records;
    if (!a.scores.empty()) {
        records = read_scores(a.scores);
    } else {
        records = compute_scores(c, a.embed_dim, manifest, metrics);
    }
    const fs::path dir = c.out;
    write_scores(dir / "scores.jsonl", records);

    AuditOptions opts;
    opts.bootstrap_samples = c.bootstrap_samples;
    opts.seed = c.seed;
    opts.alpha = c.alpha;
    opts.bonferroni = c.bonferroni;
    opts.threads = c.threads;
    if (!c.exclude_concepts.empty()) opts.exclude = load_concept_list(c.exclude_concepts);

    ReportBundle bundle;
    for (const auto m : metrics) {
        const bool present = std::any_of(records.begin(), records.end(), [&](const ScoreRecord& r) { return r.metric == m; });
        if (!present) throw ConfigError("no score records for metric '" + std::string(to_string(m)) + "'");
        bundle.audits.push_back(audit_metric(m, records, manifest, opts));
    }
    const auto j = bundle_json(bundle);
    write_json(dir / "audit.json", j);
    write_report(j, dir / "report");

    auto cfg = common_echo(c);
    cfg["manifest"] = a.manifest;
    cfg["scores"] = a.scores.empty() ? ordered_json(nullptr) : ordered_json(a.scores);
    write_run_metadata(dir, "audit", cfg);

    for (const auto& audit : bundle.audits) {
        out << to_string(audit.metric) << ": " << audit.summary.overall.biased << "/" << audit.summary.overall.concepts
            << " concepts biased (" << fmt_percent(audit.summary.overall.percent) << "%)\n";
    }
    return kOk;
}


// ---- analyze-captions ------------------------------------------------------

struct AnalyzeArgs {
    std::string outputs;
    std::string manifest;
    std::string gender_lexicon;
    std::string compare;
    std::string win_metric = "clipscore";
    std::string name = "system";
    std::string compare_name = "baseline";
    bool correct = false;
    std::size_t embed_dim = 512;
};

std::vector<SystemOutput> read_outputs(const std::string& path) {
    return parse_system_outputs(read_text_file(path));
}

CaptionScorer make_scorer(const Common& c, const AnalyzeArgs& a, std::span<const Instance> manifest,
                          std::span<const SystemOutput> outputs_a, std::span<const SystemOutput> outputs_b,
                          std::shared_ptr<EmbeddingStore>& store_holder) {
    Metric metric;
    try {
        metric = parse_metric(a.win_metric);
    } catch (const InvalidInput& e) {
        throw ConfigError(e.what());
    }
    auto idf = std::make_shared<IdfTable>();
    if (metric == Metric::ciderD || metric == Metric::hybrid) {
        std::vector<std::vector<TokenSeq>> docs;
        for (const auto& inst : manifest) docs.push_back({tokenize(inst.triple.reference)});
        *idf = build_idf(docs);
    }
    if (needs_embeddings(metric)) {
        std::vector<std::string> captions;
        std::set<std::string> seen;
        for (auto outputs : {outputs_a, outputs_b}) {
            for (const auto& o : outputs) {
                if (seen.insert(o.caption).second) captions.push_back(o.caption);
            }
        }
        std::vector<std::string> images;
        std::set<std::string> seen_i;
        for (const auto& inst : manifest) {
            if (seen_i.insert(inst.image_ref).second) images.push_back(inst.image_ref);
        }
        auto store = obtain_embeddings(c, a.embed_dim, captions, images);
        if (!store) throw ConfigError("win metric " + a.win_metric + " needs --embeddings FILE or --scorer-url URL");
        std::vector<std::string> missing;
        for (const auto& cap : captions) {
            if (!store->contains(text_key(cap))) missing.push_back(text_key(cap));
        }
        for (const auto& img : images) {
            if (!store->contains(img)) missing.push_back(img);
        }
        if (!missing.empty()) {
            std::string msg = "missing embeddings for " + std::to_string(missing.size()) + " ids:";
            for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
            throw ConfigError(msg);
        }
        store_holder = std::make_shared<EmbeddingStore>(std::move(*store));
    }
    const EmbeddingStore* store = store_holder.get();
    return [metric, idf, store](const Instance& inst, const std::string& caption) {
        const std::vector<TokenSeq> refs{tokenize(inst.triple.reference)};
        const auto cand = tokenize(caption);
        switch (metric) {
        case Metric::clipscore: return clipscore(store->at(text_key(caption)), store->at(inst.image_ref)).value;
        case Metric::hybrid:
            return hybrid(cand, refs, store->at(text_key(caption)), store->at(inst.image_ref), *idf).total;
        default: return score_ngram(metric, cand, refs, idf.get()).value;
        }
    };
}

int cmd_analyze_captions(const Common& c, const AnalyzeArgs& a, std::ostream& out) {
    const auto manifest = read_manifest_arg(a.manifest);
    const auto outputs = read_outputs(a.outputs);
    const auto lex = a.gender_lexicon.empty() ? default_gender_lexicon() : load_gender_lexicon(a.gender_lexicon);
    ErrorOptions opts;
    opts.bootstrap_samples = c.bootstrap_samples;
    opts.seed = c.seed;
    opts.alpha = c.alpha;

    std::vector<std::pair<std::string, ErrorReport>> reports;
    reports.emplace_back(a.name, gender_error_rate(outputs, manifest, lex, opts));
    const fs::path dir = c.out;
    ordered_json extra = ordered_json::object();

    if (a.correct) {
        std::map<std::string, const Instance*> by_id;
        for (const auto& inst : manifest) by_id.emplace(inst.id, &inst);
        std::vector<SystemOutput> corrected;
        std::map<CorrectionStatus, std::size_t> counts;
        std::string text;
        for (const auto& o : outputs) {
            auto it = by_id.find(o.instance_id);
            if (it == by_id.end()) throw InvalidInput("system output for unknown instance '" + o.instance_id + "'");
            auto fix = correct_caption(o.caption, it->second->triple.gender, lex);
            counts[fix.status] += 1;
            corrected.push_back({o.instance_id, std::move(fix.caption)});
            text += system_output_to_jsonl(corrected.back()) + "\n";
        }
        write_text_file(dir / "corrected.jsonl", text);
        reports.emplace_back(a.name + "+corrected", gender_error_rate(corrected, manifest, lex, opts));
        ordered_json cj;
        for (auto s : {CorrectionStatus::corrected, CorrectionStatus::already_correct, CorrectionStatus::not_applicable}) {
            cj[std::string(to_string(s))] = counts[s];
        }
        extra["corrections"] = cj;
    }

    ReportBundle bundle;
    if (!a.compare.empty()) {
        const auto outputs_b = read_outputs(a.compare);
        reports.emplace_back(a.compare_name, gender_error_rate(outputs_b, manifest, lex, opts));
        std::shared_ptr<EmbeddingStore> holder;
        const auto scorer = make_scorer(c, a, manifest, outputs, outputs_b, holder);
        bundle.win_reports.emplace_back(a.name + " vs " + a.compare_name,
                                        compare_systems(outputs, outputs_b, manifest, scorer));
    }
    bundle.error_reports = std::move(reports);

    auto errors = bundle_json({{}, bundle.error_reports, {}, {}});
    for (auto& [k, v] : extra.items()) errors[k] = v;
    write_json(dir / "errors.json", errors);
    if (!bundle.win_reports.empty()) write_json(dir / "wins.json", bundle_json({{}, {}, bundle.win_reports, {}}));

    auto cfg = common_echo(c);
    cfg["outputs"] = a.outputs;
    cfg["manifest"] = a.manifest;
    cfg["gender_lexicon"] = a.gender_lexicon.empty() ? ordered_json("default") : ordered_json(a.gender_lexicon);
    cfg["correct"] = a.correct;
    cfg["compare"] = a.compare.empty() ? ordered_json(nullptr) : ordered_json(a.compare);
    cfg["win_metric"] = a.win_metric;
    write_run_metadata(dir, "analyze-captions", cfg);

    out << render_tables(bundle_json(bundle));
    return kOk;
}

// ---- correlate -------------------------------------------------------------

struct CorrelateArgs {
    std::string judgments;
    int rating_min = 1;
    int rating_max = 4;
    std::size_t embed_dim = 512;
};

int cmd_correlate(const Common& c, const CorrelateArgs& a, std::ostream& out) {
    if (a.judgments.empty()) throw ConfigError("--judgments is required");
    if (a.rating_min >= a.rating_max) throw ConfigError("--rating-min must be below --rating-max");
    const auto judgments = parse_judgments(read_text_file(a.judgments), {a.rating_min, a.rating_max});
    const auto names = split_list(c.metrics);
    if (names.empty()) throw ConfigError("at least one metric must be selected");

    std::optional<EmbeddingStore> store;
    const bool embed = std::any_of(names.begin(), names.end(), [](const std::string& n) {
        return n.find("clipscore") != std::string::npos || n == "hybrid";
    });
    if (embed) {
        std::vector<std::string> captions;
        std::vector<std::string> images;
        std::set<std::string> seen_c;
        std::set<std::string> seen_i;
        for (const auto& j : judgments) {
            if (seen_c.insert(j.candidate).second) captions.push_back(j.candidate);
            if (seen_i.insert(j.image_ref).second) images.push_back(j.image_ref);
        }
        store = obtain_embeddings(c, a.embed_dim, captions, images);
    }
    std::vector<CorrelationRow> rows;
    try {
        rows = correlate_metrics(judgments, names, store ? &*store : nullptr);
    } catch (const InvalidInput& e) {
        throw ConfigError(e.what());
    }

    const fs::path dir = c.out;
    ReportBundle bundle;
    bundle.correlations = rows;
    const auto j = bundle_json(bundle);
    write_json(dir / "correlations.json", j);
    auto cfg = common_echo(c);
    cfg["judgments"] = a.judgments;
    cfg["rating_range"] = {a.rating_min, a.rating_max};
    write_run_metadata(dir, "correlate", cfg);
    out << render_tables(j);
    return kOk;
}

// ---- simulate-rl -----------------------------------------------------------

struct SimArgs {
    std::string config;
    bool seed_given = false;
};

int cmd_simulate_rl(const Common& c, const SimArgs& a, std::ostream& out) {
    if (a.config.empty()) throw ConfigError("--config is required");
    auto cfg = load_sim_config(a.config);
    if (a.seed_given) cfg.train.seed = c.seed;
    const auto result = run_simulation(cfg, default_gender_lexicon(), c.threads);

    const fs::path dir = c.out;
    write_json(dir / "rl_series.json", to_json(result));
    ordered_json echo;
    echo["config"] = a.config;
    echo["seed"] = cfg.train.seed;
    echo["reward"] = std::string(to_string(cfg.reward_kind));
    echo["delta"] = cfg.reward.delta;
    echo["samples_per_step"] = cfg.train.samples_per_step;
    echo["learning_rate"] = cfg.train.learning_rate;
    echo["steps"] = cfg.train.steps;
    echo["images_per_cell"] = cfg.images_per_cell;
    echo["initial_policy"] = to_json(cfg.init);
    write_run_metadata(dir, "simulate-rl", echo);

    const auto& first = result.series.front();
    const auto& last = result.series.back();
    out << fmt::format("greedy gender error: {:.2f}% -> {:.2f}% (man {:.2f}% -> {:.2f}%, woman {:.2f}% -> {:.2f}%)\n",
                       100 * first.greedy_overall, 100 * last.greedy_overall, 100 * first.greedy_man,
                       100 * last.greedy_man, 100 * first.greedy_woman, 100 * last.greedy_woman);
    return kOk;
}

// ---- report ----------------------------------------------------------------

int cmd_report(const Common& c, const std::vector<std::string>& inputs, std::ostream& out) {
    if (inputs.empty()) throw ConfigError("at least one --input is required");
    ordered_json bundle = ordered_json::object();
    for (const auto& path : inputs) {
        ordered_json doc;
        try {
            doc = ordered_json::parse(read_text_file(path));
        } catch (const json::exception& e) {
            throw LoadError("malformed report input " + path + ": " + e.what());
        }
        for (const char* key : {"audits", "gender_errors", "win_rates", "correlations"}) {
            if (!doc.contains(key)) continue;
            auto& dst = bundle[key];
            if (dst.is_null()) dst = ordered_json::array();
            for (const auto& item : doc.at(key)) dst.push_back(item);
        }
    }
    const fs::path dir = c.out;
    try {
        write_report(bundle, dir);
    } catch (const json::exception& e) {
        throw LoadError(std::string("report input has an unexpected shape: ") + e.what());
    }
    ordered_json echo;
    echo["inputs"] = inputs;
    write_run_metadata(dir, "report", echo);
    out << render_tables(bundle);
    return kOk;
}

void check_common(const Common& c) {
    if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw ConfigError("--alpha must lie in (0, 1)");
    if (c.bootstrap_samples < 100) throw ConfigError("--bootstrap-samples must be at least 100");
    if (c.threads == 0) throw ConfigError("--threads must be positive");
}

void add_out(CLI::App* sub, Common& c) {
    sub->add_option("--out", c.out, "Output directory")->capture_default_str();
}

void add_threads(CLI::App* sub, Common& c) {
    sub->add_option("--threads", c.threads, "Worker threads (results do not depend on it)")->capture_default_str();
}

void add_stats(CLI::App* sub, Common& c) {
    sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
    sub->add_option("--bootstrap-samples", c.bootstrap_samples, "Bootstrap resamples (>= 100)")->capture_default_str();
    sub->add_option("--alpha", c.alpha, "Significance level in (0, 1)")->capture_default_str();
}

void add_embeddings(CLI::App* sub, Common& c, std::size_t& dim) {
    sub->add_option("--embeddings", c.embeddings, "Embedding store (EMB1 binary or JSON)");
    sub->add_option("--scorer-url", c.scorer_url, "Embedding service base URL (default: $EMBED_ENDPOINT)");
    sub->add_option("--embed-dim", dim, "Embedding dimension expected from the service")->capture_default_str();
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Gender-bias audit toolkit for caption evaluation metrics"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    Common c;
    ManifestArgs manifest_args;
    FixtureArgs fixture_args;
    ScoreArgs score_args;
    AnalyzeArgs analyze_args;
    CorrelateArgs correlate_args;
    SimArgs sim_args;
    std::vector<std::string> report_inputs;

    auto* build = app.add_subcommand("build-manifest", "Render caption triples for a lexicon and image list");
    build->add_option("--lexicon", manifest_args.lexicon, "Lexicon JSON (default: bundled mini lexicon)");
    build->add_option("--images", manifest_args.images, "Images JSON {concept: {man: [...], woman: [...]}}");
    build->add_option("--images-per-cell", manifest_args.images_per_cell, "Synthetic image refs per cell")
        ->capture_default_str();
    add_out(build, c);

    auto* synth = app.add_subcommand("synth-fixture", "Write a manifest and embeddings with planted gender bias");
    synth->add_option("--lexicon", fixture_args.lexicon, "Lexicon JSON (default: bundled mini lexicon)");
    synth->add_option("--images-per-cell", fixture_args.images_per_cell, "Images per cell")->capture_default_str();
    synth->add_option("--planted", fixture_args.planted, "Planted concepts, e.g. nurse=woman,chef=man");
    synth->add_option("--offset", fixture_args.offset, "Cosine bonus of the favored caption")->capture_default_str();
    synth->add_option("--noise", fixture_args.noise, "Per-image cosine noise sd")->capture_default_str();
    synth->add_option("--gap", fixture_args.gap, "Mean cosine gap between right and wrong caption")
        ->capture_default_str();
    synth->add_option("--format", fixture_args.format, "Embedding file format")
        ->check(CLI::IsMember({"json", "binary"}))
        ->capture_default_str();
    synth->add_option("--seed", c.seed, "Random seed")->capture_default_str();
    add_out(synth, c);

    auto* score = app.add_subcommand("score", "Score good and bad captions of a manifest");
    score->add_option("--manifest", score_args.manifest, "Manifest JSONL")->required();
    score->add_option("--metrics", c.metrics, "Comma-separated metrics")->capture_default_str();
    add_embeddings(score, c, score_args.embed_dim);
    add_threads(score, c);
    add_out(score, c);

    auto* audit = app.add_subcommand("audit", "Bootstrap bias audit per metric and concept");
    audit->add_option("--manifest", score_args.manifest, "Manifest JSONL")->required();
    audit->add_option("--scores", score_args.scores, "Precomputed scores JSONL (otherwise scored here)");
    audit->add_option("--metrics", c.metrics, "Comma-separated metrics")->capture_default_str();
    audit->add_option("--exclude-concepts", c.exclude_concepts, "File listing concepts to drop before testing");
    audit->add_flag("--bonferroni", c.bonferroni, "Divide alpha by the number of concepts tested");
    add_stats(audit, c);
    add_embeddings(audit, c, score_args.embed_dim);
    add_threads(audit, c);
    add_out(audit, c);

    auto* analyze = app.add_subcommand("analyze-captions", "Gender prediction error, correction and system comparison");
    analyze->add_option("--outputs", analyze_args.outputs, "System outputs JSONL")->required();
    analyze->add_option("--manifest", analyze_args.manifest, "Manifest JSONL")->required();
    analyze->add_option("--gender-lexicon", analyze_args.gender_lexicon, "Gender word lists JSON");
    analyze->add_flag("--correct", analyze_args.correct, "Write corrected captions and re-measure");
    analyze->add_option("--compare", analyze_args.compare, "Second system's outputs JSONL");
    analyze->add_option("--win-metric", analyze_args.win_metric, "Metric for win rates")->capture_default_str();
    analyze->add_option("--name", analyze_args.name, "Name of the system")->capture_default_str();
    analyze->add_option("--compare-name", analyze_args.compare_name, "Name of the compared system")
        ->capture_default_str();
    add_stats(analyze, c);
    add_embeddings(analyze, c, analyze_args.embed_dim);
    add_out(analyze, c);

    auto* correlate = app.add_subcommand("correlate", "Kendall tau-c between metrics and human ratings");
    correlate->add_option("--judgments", correlate_args.judgments, "Judgments JSONL")->required();
    correlate->add_option("--metrics", c.metrics, "Metrics, including clipscore+<metric> and hybrid")
        ->capture_default_str();
    correlate->add_option("--rating-min", correlate_args.rating_min, "Lowest rating level")->capture_default_str();
    correlate->add_option("--rating-max", correlate_args.rating_max, "Highest rating level")->capture_default_str();
    add_embeddings(correlate, c, correlate_args.embed_dim);
    add_out(correlate, c);

    auto* sim = app.add_subcommand("simulate-rl", "Minimum risk training of a toy captioner");
    sim->add_option("--config", sim_args.config, "Simulation config JSON")->required();
    auto* sim_seed = sim->add_option("--seed", c.seed, "Override the config's seed");
    add_threads(sim, c);
    add_out(sim, c);

    auto* report = app.add_subcommand("report", "Render tables and scatter plots from result JSON files");
    report->add_option("--input", report_inputs, "audit.json, errors.json, wins.json or correlations.json")
        ->required();
    add_out(report, c);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << "\n";
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        for (auto* sub : app.get_subcommands()) err << sub->help();
        return kUsage;
    }
    sim_args.seed_given = sim_seed->count() > 0;

    try {
        check_common(c);
        if (build->parsed()) return cmd_build_manifest(c, manifest_args, out, err);
        if (synth->parsed()) return cmd_synth_fixture(c, fixture_args, out);
        if (score->parsed()) return cmd_score(c, score_args, out);
        if (audit->parsed()) return cmd_audit(c, score_args, out);
        if (analyze->parsed()) return cmd_analyze_captions(c, analyze_args, out);
        if (correlate->parsed()) return cmd_correlate(c, correlate_args, out);
        if (sim->parsed()) return cmd_simulate_rl(c, sim_args, out);
        if (report->parsed()) return cmd_report(c, report_inputs, out);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        for (const auto& o : e.offenders()) err << "  " << o << "\n";
        return kUsage;
    } catch (const TrainingError& e) {
        err << "error: " << e.what() << "\n";
        return kInternal;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kInternal;
    }
    err << "error: no command given\n";
    return kUsage;
}

} // namespace capbias::cli
