#pragma once

#include "capbias/audit.hpp"
#include "capbias/corpus.hpp"
#include "capbias/embed_score.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace capbias {

/// True when scoring `m` needs embeddings.
bool needs_embeddings(Metric m);

/// Image refs and caption text keys of `manifest` that `store` lacks, sorted.
std::vector<std::string> missing_embeddings(std::span<const Instance> manifest, const EmbeddingStore& store);

/// Scores the good and bad caption of every instance against the instance
/// reference. Records are grouped by metric, in manifest order within a
/// metric. CIDEr statistics come from the manifest's references. Throws
/// ConfigError naming missing ids when an embedding metric lacks vectors.
std::vector<ScoreRecord> score_manifest(std::span<const Instance> manifest, std::span<const Metric> metrics,
                                        const EmbeddingStore* store, unsigned threads = 1, HybridWeights w = {});

struct PlantedBiasParams {
    double base_cosine = 0.30;  // image/correct-caption cosine
    double gender_gap = 0.02;   // mean cosine deficit of the wrong-gender caption
    double noise = 0.05;        // per-image sd of each cosine
    double offset = 0.05;       // bonus for the favored gender's caption on planted concepts
    std::size_t noise_dims = 16;
    std::uint64_t seed = 0;
};

/// Synthetic store in which each caption is a basis vector and each image is
/// placed so that its cosines with the two captions of its concept hit
/// sampled targets exactly. Planted concepts add `offset` to the favored
/// gender's caption.
EmbeddingStore plant_bias_embeddings(std::span<const Instance> manifest, const std::map<std::string, Gender>& planted,
                                     const PlantedBiasParams& p = {});

} // namespace capbias
