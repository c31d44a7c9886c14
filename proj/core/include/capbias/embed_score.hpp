#pragma once

#include "capbias/ngram_metrics.hpp"
#include "capbias/tokenize.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace capbias {

/// A unit-normalized CLIP-style embedding.
struct Embedding {
    std::string id;
    std::vector<double> vector;
};

/// Scales `v` to unit L2 norm. Throws InvalidInput on zero or non-finite input.
void normalize(std::vector<double>& v);

/// Immutable-after-load collection of same-dimension embeddings.
class EmbeddingStore {
  public:
    explicit EmbeddingStore(std::size_t dim = 0) : dim_(dim) {}

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return entries_.size(); }
    bool contains(const std::string& id) const { return entries_.count(id) > 0; }

    /// Normalizes and inserts. Throws LoadError on dimension mismatch,
    /// non-finite entries or a repeated id.
    void add(std::string id, std::vector<double> vector);

    const Embedding& at(const std::string& id) const;
    const Embedding* find(const std::string& id) const;

    const std::map<std::string, Embedding>& entries() const { return entries_; }

  private:
    std::size_t dim_;
    std::map<std::string, Embedding> entries_;
};

/// Store key used for the text embedding of a caption.
std::string text_key(const std::string& caption);

/// Reads an EMB1 binary or JSON store (format detected from the first bytes).
EmbeddingStore load_store(const std::filesystem::path& path);
EmbeddingStore parse_store(std::string_view bytes);

/// EMB1: "EMB1", u32 dim, u32 count, then per record u16 id length, id, dim x f32 (little-endian).
std::string encode_store_binary(const EmbeddingStore& store);
/// `{"dim":D,"entries":{id:[...]}}`
std::string encode_store_json(const EmbeddingStore& store);

/// 2.5 * max(cos, 0).
MetricScore clipscore(const Embedding& text_emb, const Embedding& image_emb);

struct HybridWeights {
    double clip = 1.0;
    double cider = 1.0;
};

/// `clip` and `cider` are the weighted component contributions; total is their sum.
struct HybridScore {
    double clip = 0.0;
    double cider = 0.0;
    double total = 0.0;
};

HybridScore combine(double clip, double cider, HybridWeights w = {});

HybridScore hybrid(const TokenSeq& candidate, std::span<const TokenSeq> references, const Embedding& text_emb,
                   const Embedding& image_emb, const IdfTable& idf, HybridWeights w = {});

struct RemoteConfig {
    std::string endpoint;  // e.g. "http://127.0.0.1:8080"
    std::string token;     // bearer token, optional
    std::size_t dim = 512;
    std::size_t batch_size = 64;
    std::size_t max_in_flight = 4;
    int retries = 2;
    int timeout_seconds = 30;
};

/// Reads EMBED_ENDPOINT / EMBED_TOKEN into a config (other fields default).
RemoteConfig remote_config_from_env();

/// Embeds captions via POST {endpoint}/v1/embed/text. Output order matches input.
std::vector<Embedding> fetch_remote_texts(std::span<const std::string> texts, const RemoteConfig& cfg);

/// Reads each image file, base64-encodes it and POSTs to {endpoint}/v1/embed/image.
std::vector<Embedding> fetch_remote_images(std::span<const std::string> image_refs, const RemoteConfig& cfg);

std::string base64_encode(std::string_view bytes);

} // namespace capbias
