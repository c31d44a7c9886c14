#include "capbias/scoring.hpp"

#include "capbias/errors.hpp"
#include "capbias/parallel.hpp"
#include "capbias/tokenize.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace capbias {

bool needs_embeddings(Metric m) {
    return m == Metric::clipscore || m == Metric::hybrid;
}

std::vector<std::string> missing_embeddings(std::span<const Instance> manifest, const EmbeddingStore& store) {
    std::set<std::string> missing;
    for (const auto& inst : manifest) {
        if (!store.contains(inst.image_ref)) missing.insert(inst.image_ref);
        for (const auto& caption : {inst.triple.good, inst.triple.bad}) {
            const auto key = text_key(caption);
            if (!store.contains(key)) missing.insert(key);
        }
    }
    return {missing.begin(), missing.end()};
}

std::vector<ScoreRecord> score_manifest(std::span<const Instance> manifest, std::span<const Metric> metrics,
                                        const EmbeddingStore* store, unsigned threads, HybridWeights w) {
    const bool embed = std::any_of(metrics.begin(), metrics.end(), needs_embeddings);
    if (embed) {
        if (store == nullptr) throw ConfigError("clipscore/hybrid requested but no embeddings were supplied");
        const auto missing = missing_embeddings(manifest, *store);
        if (!missing.empty()) {
            std::string msg = "missing embeddings for " + std::to_string(missing.size()) + " ids:";
            for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
            if (missing.size() > 20) msg += " ...";
            throw ConfigError(msg);
        }
    }

    struct Tokens {
        TokenSeq good;
        TokenSeq bad;
        std::vector<TokenSeq> refs;
    };
    std::vector<Tokens> tokens(manifest.size());
    parallel_for(manifest.size(), threads, [&](std::size_t i) {
        const auto& t = manifest[i].triple;
        tokens[i] = {tokenize(t.good), tokenize(t.bad), {tokenize(t.reference)}};
    });

    IdfTable idf;
    if (std::any_of(metrics.begin(), metrics.end(), [](Metric m) { return m == Metric::ciderD || m == Metric::hybrid; })) {
        std::vector<std::vector<TokenSeq>> docs;
        docs.reserve(manifest.size());
        for (const auto& t : tokens) docs.push_back(t.refs);
        idf = build_idf(docs);
    }

    const std::size_t n = manifest.size();
    std::vector<ScoreRecord> out(metrics.size() * n);
    parallel_for(out.size(), threads, [&](std::size_t slot) {
        const Metric m = metrics[slot / n];
        const std::size_t i = slot % n;
        const auto& inst = manifest[i];
        const auto& tk = tokens[i];
        ScoreRecord r{inst.id, m, 0.0, 0.0};
        if (m == Metric::clipscore || m == Metric::hybrid) {
            const auto& image = store->at(inst.image_ref);
            const auto& good = store->at(text_key(inst.triple.good));
            const auto& bad = store->at(text_key(inst.triple.bad));
            if (m == Metric::clipscore) {
                r.score_good = clipscore(good, image).value;
                r.score_bad = clipscore(bad, image).value;
            } else {
                r.score_good = hybrid(tk.good, tk.refs, good, image, idf, w).total;
                r.score_bad = hybrid(tk.bad, tk.refs, bad, image, idf, w).total;
            }
        } else {
            r.score_good = score_ngram(m, tk.good, tk.refs, &idf).value;
            r.score_bad = score_ngram(m, tk.bad, tk.refs, &idf).value;
        }
        out[slot] = std::move(r);
    });
    return out;
}

EmbeddingStore plant_bias_embeddings(std::span<const Instance> manifest, const std::map<std::string, Gender>& planted,
                                     const PlantedBiasParams& p) {
    // Caption axes: concept j, gender g -> basis vector 2j + g.
    std::map<std::string, std::size_t> concept_index;
    for (const auto& inst : manifest) concept_index.try_emplace(inst.triple.subject.word, concept_index.size());
    const std::size_t base = 2 * concept_index.size();
    const std::size_t dim = base + std::max<std::size_t>(p.noise_dims, 1);

    EmbeddingStore store(dim);
    auto axis = [&](const std::string& word, Gender g) { return 2 * concept_index.at(word) + (g == Gender::man ? 0 : 1); };
    std::set<std::string> texts_done;
    for (const auto& inst : manifest) {
        const auto& t = inst.triple;
        const std::pair<const std::string*, Gender> captions[] = {{&t.good, t.gender}, {&t.bad, opposite(t.gender)}};
        for (const auto& [caption, g] : captions) {
            const auto key = text_key(*caption);
            if (!texts_done.insert(key).second) continue;
            std::vector<double> v(dim, 0.0);
            v[axis(t.subject.word, g)] = 1.0;
            store.add(key, std::move(v));
        }
    }

    for (const auto& inst : manifest) {
        if (store.contains(inst.image_ref)) continue;
        const auto& t = inst.triple;
        std::mt19937_64 rng(derive_seed(p.seed, inst.image_ref));
        std::normal_distribution<double> noise(0.0, p.noise);
        double cos_true = p.base_cosine + noise(rng);
        double cos_false = p.base_cosine - p.gender_gap + noise(rng);
        if (auto it = planted.find(t.subject.word); it != planted.end()) {
            (it->second == t.gender ? cos_true : cos_false) += p.offset;
        }
        cos_true = std::clamp(cos_true, -0.7, 0.7);
        cos_false = std::clamp(cos_false, -0.7, 0.7);
        std::vector<double> v(dim, 0.0);
        v[axis(t.subject.word, t.gender)] = cos_true;
        v[axis(t.subject.word, opposite(t.gender))] = cos_false;
        // Fill the remaining norm along a random direction in the noise dims.
        std::normal_distribution<double> unit(0.0, 1.0);
        std::vector<double> dir(dim - base);
        double norm = 0.0;
        for (auto& d : dir) {
            d = unit(rng);
            norm += d * d;
        }
        norm = std::sqrt(norm);
        const double rest = std::sqrt(1.0 - cos_true * cos_true - cos_false * cos_false);
        for (std::size_t k = 0; k < dir.size(); ++k) v[base + k] = rest * dir[k] / norm;
        store.add(inst.image_ref, std::move(v));
    }
    return store;
}

} // namespace capbias
