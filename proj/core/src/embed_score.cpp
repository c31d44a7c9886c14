#include "capbias/embed_score.hpp"

#include "capbias/errors.hpp"
#include "capbias/io.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <mutex>
#include <thread>

namespace capbias {

using nlohmann::json;

void normalize(std::vector<double>& v) {
    double sq = 0.0;
    for (const double x : v) {
        if (!std::isfinite(x)) throw InvalidInput("non-finite embedding entry");
        sq += x * x;
    }
    if (sq == 0.0) throw InvalidInput("zero embedding vector");
    const double inv = 1.0 / std::sqrt(sq);
    for (double& x : v) x *= inv;
}

void EmbeddingStore::add(std::string id, std::vector<double> vector) {
    if (dim_ == 0) dim_ = vector.size();
    if (vector.size() != dim_) {
        throw LoadError("embedding '" + id + "' has dim " + std::to_string(vector.size()) + ", store dim is " +
                        std::to_string(dim_));
    }
    try {
        normalize(vector);
    } catch (const InvalidInput& e) {
        throw LoadError("embedding '" + id + "': " + e.what());
    }
    if (entries_.count(id) > 0) throw LoadError("duplicate embedding id '" + id + "'");
    Embedding e{id, std::move(vector)};
    entries_.emplace(std::move(id), std::move(e));
}

const Embedding& EmbeddingStore::at(const std::string& id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw ConfigError("no embedding for '" + id + "'");
    return it->second;
}

const Embedding* EmbeddingStore::find(const std::string& id) const {
    auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : &it->second;
}

std::string text_key(const std::string& caption) {
    return "text:" + caption;
}

namespace {

template <class T>
T read_le(std::string_view bytes, std::size_t& pos) {
    if (pos + sizeof(T) > bytes.size()) throw LoadError("EMB1 store is truncated");
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        auto* p = reinterpret_cast<unsigned char*>(&v);
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
    }
    pos += sizeof(T);
    return v;
}

template <class T>
void write_le(std::string& out, T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto* p = reinterpret_cast<unsigned char*>(&v);
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
    }
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

EmbeddingStore parse_binary(std::string_view bytes) {
    std::size_t pos = 4;
    const auto dim = read_le<std::uint32_t>(bytes, pos);
    const auto count = read_le<std::uint32_t>(bytes, pos);
    if (dim == 0) throw LoadError("EMB1 store declares dim 0");
    EmbeddingStore store(dim);
    for (std::uint32_t r = 0; r < count; ++r) {
        const auto id_len = read_le<std::uint16_t>(bytes, pos);
        if (pos + id_len > bytes.size()) throw LoadError("EMB1 store is truncated");
        std::string id(bytes.substr(pos, id_len));
        pos += id_len;
        std::vector<double> v(dim);
        for (auto& x : v) x = read_le<float>(bytes, pos);
        store.add(std::move(id), std::move(v));
    }
    if (pos != bytes.size()) throw LoadError("EMB1 store has trailing bytes (dim/count mismatch)");
    return store;
}

EmbeddingStore parse_json_store(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed embedding store: ") + e.what());
    }
    try {
        const auto dim = doc.at("dim").get<std::size_t>();
        EmbeddingStore store(dim);
        for (const auto& [id, arr] : doc.at("entries").items()) {
            std::vector<double> v;
            v.reserve(arr.size());
            for (const auto& x : arr) {
                // JSON has no NaN literal; null marks an unrepresentable entry.
                if (!x.is_number()) throw LoadError("embedding '" + id + "' has a non-numeric entry");
                v.push_back(x.get<double>());
            }
            store.add(id, std::move(v));
        }
        return store;
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed embedding store: ") + e.what());
    }
}

} // namespace

EmbeddingStore parse_store(std::string_view bytes) {
    if (bytes.starts_with("EMB1")) return parse_binary(bytes);
    const auto first = bytes.find_first_not_of(" \t\r\n");
    if (first != std::string_view::npos && bytes[first] == '{') return parse_json_store(bytes);
    throw LoadError("embedding store has neither EMB1 magic nor JSON content");
}

EmbeddingStore load_store(const std::filesystem::path& path) {
    return parse_store(read_text_file(path));
}

std::string encode_store_binary(const EmbeddingStore& store) {
    std::string out = "EMB1";
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.dim()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
    for (const auto& [id, e] : store.entries()) {
        write_le<std::uint16_t>(out, static_cast<std::uint16_t>(id.size()));
        out += id;
        for (const double x : e.vector) write_le<float>(out, static_cast<float>(x));
    }
    return out;
}

std::string encode_store_json(const EmbeddingStore& store) {
    json doc;
    doc["dim"] = store.dim();
    doc["entries"] = json::object();
    for (const auto& [id, e] : store.entries()) doc["entries"][id] = e.vector;
    return doc.dump();
}

MetricScore clipscore(const Embedding& text_emb, const Embedding& image_emb) {
    if (text_emb.vector.size() != image_emb.vector.size()) {
        throw InvalidInput("embedding dimension mismatch: " + std::to_string(text_emb.vector.size()) + " vs " +
                           std::to_string(image_emb.vector.size()));
    }
    double dot = 0.0;
    double nt = 0.0;
    double ni = 0.0;
    for (std::size_t i = 0; i < text_emb.vector.size(); ++i) {
        dot += text_emb.vector[i] * image_emb.vector[i];
        nt += text_emb.vector[i] * text_emb.vector[i];
        ni += image_emb.vector[i] * image_emb.vector[i];
    }
    if (nt == 0.0 || ni == 0.0) throw InvalidInput("zero embedding");
    const double cos = std::clamp(dot / std::sqrt(nt * ni), -1.0, 1.0);
    return {Metric::clipscore, 2.5 * std::max(cos, 0.0)};
}

HybridScore combine(double clip, double cider, HybridWeights w) {
    HybridScore h;
    h.clip = w.clip * clip;
    h.cider = w.cider * cider;
    h.total = h.clip + h.cider;
    return h;
}

HybridScore hybrid(const TokenSeq& candidate, std::span<const TokenSeq> references, const Embedding& text_emb,
                   const Embedding& image_emb, const IdfTable& idf, HybridWeights w) {
    const double clip = clipscore(text_emb, image_emb).value;
    const double cider = cider_d(candidate, references, idf).value;
    return combine(clip, cider, w);
}

RemoteConfig remote_config_from_env() {
    RemoteConfig cfg;
    if (const char* e = std::getenv("EMBED_ENDPOINT")) cfg.endpoint = e;
    if (const char* t = std::getenv("EMBED_TOKEN")) cfg.token = t;
    return cfg;
}

std::string base64_encode(std::string_view bytes) {
    static constexpr char kTable[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const auto n = (static_cast<unsigned char>(bytes[i]) << 16) | (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
        out += kTable[(n >> 18) & 63];
        out += kTable[(n >> 12) & 63];
        out += kTable[(n >> 6) & 63];
        out += kTable[n & 63];
    }
    if (i + 1 == bytes.size()) {
        const auto n = static_cast<unsigned char>(bytes[i]) << 16;
        out += kTable[(n >> 18) & 63];
        out += kTable[(n >> 12) & 63];
        out += "==";
    } else if (i + 2 == bytes.size()) {
        const auto n = (static_cast<unsigned char>(bytes[i]) << 16) | (static_cast<unsigned char>(bytes[i + 1]) << 8);
        out += kTable[(n >> 18) & 63];
        out += kTable[(n >> 12) & 63];
        out += kTable[(n >> 6) & 63];
        out += '=';
    }
    return out;
}

namespace {

struct Endpoint {
    std::string origin;  // scheme://host[:port]
    std::string prefix;  // path prefix without trailing slash
};

Endpoint split_endpoint(const std::string& url) {
    if (url.empty()) throw ConfigError("no embedding endpoint configured (set EMBED_ENDPOINT or --scorer-url)");
    const auto scheme = url.find("://");
    const auto path_start = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    Endpoint ep;
    ep.origin = url.substr(0, path_start);
    if (path_start != std::string::npos) ep.prefix = url.substr(path_start);
    while (!ep.prefix.empty() && ep.prefix.back() == '/') ep.prefix.pop_back();
    return ep;
}

std::vector<std::vector<double>> post_batch(const Endpoint& ep, const std::string& route, const json& body,
                                            std::size_t expected, const RemoteConfig& cfg) {
    const int attempts_allowed = 1 + std::max(cfg.retries, 0);
    std::string last_error;
    for (int attempt = 1; attempt <= attempts_allowed; ++attempt) {
        httplib::Client cli(ep.origin);
        cli.set_connection_timeout(cfg.timeout_seconds, 0);
        cli.set_read_timeout(cfg.timeout_seconds, 0);
        httplib::Headers headers;
        if (!cfg.token.empty()) headers.emplace("Authorization", "Bearer " + cfg.token);
        auto res = cli.Post(ep.prefix + route, headers, body.dump(), "application/json");
        if (!res) {
            last_error = "transport failure: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status < 200 || res->status >= 300) {
            last_error = "service returned status " + std::to_string(res->status);
            // Client errors are not transient.
            if (res->status >= 400 && res->status < 500) {
                throw RemoteError(last_error + " for " + route, attempt);
            }
            continue;
        }
        json doc;
        try {
            doc = json::parse(res->body);
            const auto dim = doc.at("dim").get<std::size_t>();
            if (dim != cfg.dim) {
                throw RemoteError("service returned dim " + std::to_string(dim) + ", configured " +
                                      std::to_string(cfg.dim),
                                  attempt);
            }
            auto vectors = doc.at("vectors").get<std::vector<std::vector<double>>>();
            if (vectors.size() != expected) {
                throw RemoteError("service returned " + std::to_string(vectors.size()) + " vectors for " +
                                      std::to_string(expected) + " inputs",
                                  attempt);
            }
            for (auto& v : vectors) {
                if (v.size() != cfg.dim) throw RemoteError("vector length disagrees with declared dim", attempt);
                normalize(v);
            }
            return vectors;
        } catch (const json::exception& e) {
            throw RemoteError(std::string("malformed service response: ") + e.what(), attempt);
        } catch (const InvalidInput& e) {
            throw RemoteError(std::string("bad vector from service: ") + e.what(), attempt);
        }
    }
    throw RemoteError(last_error + " after " + std::to_string(attempts_allowed) + " attempts", attempts_allowed);
}

// Sends fixed-size batches with at most cfg.max_in_flight concurrent requests.
// Results land in input order regardless of completion order.
std::vector<std::vector<double>> fetch_batched(std::span<const std::string> payloads, const std::string& field,
                                               const std::string& route, const RemoteConfig& cfg) {
    std::vector<std::vector<double>> out(payloads.size());
    if (payloads.empty()) return out;
    const Endpoint ep = split_endpoint(cfg.endpoint);
    const std::size_t batch = std::max<std::size_t>(cfg.batch_size, 1);
    const std::size_t n_batches = (payloads.size() + batch - 1) / batch;
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;

    auto worker = [&] {
        while (true) {
            const std::size_t b = next.fetch_add(1);
            if (b >= n_batches) return;
            {
                std::lock_guard lock(failure_mu);
                if (failure) return;
            }
            const std::size_t lo = b * batch;
            const std::size_t hi = std::min(payloads.size(), lo + batch);
            json body;
            body[field] = std::vector<std::string>(payloads.begin() + static_cast<std::ptrdiff_t>(lo),
                                                   payloads.begin() + static_cast<std::ptrdiff_t>(hi));
            try {
                auto vecs = post_batch(ep, route, body, hi - lo, cfg);
                for (std::size_t i = lo; i < hi; ++i) out[i] = std::move(vecs[i - lo]);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };

    const std::size_t n_threads = std::min(std::max<std::size_t>(cfg.max_in_flight, 1), n_batches);
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
    return out;
}

} // namespace

std::vector<Embedding> fetch_remote_texts(std::span<const std::string> texts, const RemoteConfig& cfg) {
    auto vecs = fetch_batched(texts, "texts", "/v1/embed/text", cfg);
    std::vector<Embedding> out;
    out.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) out.push_back({text_key(texts[i]), std::move(vecs[i])});
    return out;
}

std::vector<Embedding> fetch_remote_images(std::span<const std::string> image_refs, const RemoteConfig& cfg) {
    std::vector<std::string> encoded;
    encoded.reserve(image_refs.size());
    for (const auto& ref : image_refs) encoded.push_back(base64_encode(read_text_file(ref)));
    auto vecs = fetch_batched(encoded, "images", "/v1/embed/image", cfg);
    std::vector<Embedding> out;
    out.reserve(image_refs.size());
    for (std::size_t i = 0; i < image_refs.size(); ++i) out.push_back({image_refs[i], std::move(vecs[i])});
    return out;
}

} // namespace capbias
