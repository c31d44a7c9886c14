#include "helpers.hpp"

#include <capbias/embed_score.hpp>
#include <capbias/errors.hpp>

#include <doctest.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <cmath>
#include <functional>
#include <thread>

using namespace capbias;
using nlohmann::json;

namespace {

// Vector whose first coordinate encodes the input's length, so order can be checked.
std::vector<double> fake_vector(const std::string& s, std::size_t dim) {
    std::vector<double> v(dim, 0.0);
    v[0] = static_cast<double>(s.size());
    v[1 % dim] += 1.0;
    return v;
}

class FakeService {
  public:
    std::size_t dim = 8;
    std::atomic<int> failures_left{0};  // answer 503 while positive
    std::atomic<int> requests{0};
    int status_override = 0;            // nonzero: always answer with this status
    std::string last_auth;
    std::string last_field;

    FakeService() {
        auto handler = [this](const std::string& field) {
            return [this, field](const httplib::Request& req, httplib::Response& res) {
                ++requests;
                last_auth = req.get_header_value("Authorization");
                if (status_override != 0) {
                    res.status = status_override;
                    return;
                }
                if (failures_left.fetch_sub(1) > 0) {
                    res.status = 503;
                    return;
                }
                const auto body = json::parse(req.body);
                last_field = field;
                json vectors = json::array();
                for (const auto& item : body.at(field)) vectors.push_back(fake_vector(item.get<std::string>(), dim));
                res.set_content(json{{"dim", dim}, {"vectors", vectors}}.dump(), "application/json");
            };
        };
        server_.Post("/v1/embed/text", handler("texts"));
        server_.Post("/v1/embed/image", handler("images"));
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~FakeService() {
        server_.stop();
        thread_.join();
    }

    RemoteConfig config() const {
        RemoteConfig cfg;
        cfg.endpoint = "http://127.0.0.1:" + std::to_string(port_);
        cfg.dim = dim;
        cfg.timeout_seconds = 5;
        return cfg;
    }

  private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

double norm(const std::vector<double>& v) {
    double s = 0;
    for (const double x : v) s += x * x;
    return std::sqrt(s);
}

} // namespace

TEST_CASE("two texts give two unit vectors of the configured dim") {
    FakeService svc;
    const std::vector<std::string> texts = {"a man", "a woman cooking"};
    const auto out = fetch_remote_texts(texts, svc.config());
    REQUIRE(out.size() == 2);
    CHECK(out[0].id == "text:a man");
    CHECK(out[1].id == "text:a woman cooking");
    for (const auto& e : out) {
        CHECK(e.vector.size() == svc.dim);
        CHECK(norm(e.vector) == doctest::Approx(1.0));
    }
}

TEST_CASE("order is preserved across batches in flight") {
    FakeService svc;
    std::vector<std::string> texts;
    for (int i = 1; i <= 37; ++i) texts.push_back(std::string(static_cast<std::size_t>(i), 'x'));
    auto cfg = svc.config();
    cfg.batch_size = 4;
    cfg.max_in_flight = 4;
    const auto out = fetch_remote_texts(texts, cfg);
    REQUIRE(out.size() == texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        // First coordinate is proportional to the text length before normalization.
        const double ratio = out[i].vector[0] / out[i].vector[1];
        CHECK(ratio == doctest::Approx(static_cast<double>(i + 1)));
    }
    CHECK(svc.requests == 10);
}

TEST_CASE("empty input makes no request") {
    FakeService svc;
    CHECK(fetch_remote_texts({}, svc.config()).empty());
    CHECK(svc.requests == 0);
    // Not even an endpoint is needed.
    CHECK(fetch_remote_texts({}, RemoteConfig{}).empty());
}

TEST_CASE("dimension disagreement is an error") {
    FakeService svc;
    svc.dim = 384;
    auto cfg = svc.config();
    cfg.dim = 512;
    const std::vector<std::string> texts = {"a man"};
    CHECK_THROWS_AS(fetch_remote_texts(texts, cfg), RemoteError);
}

TEST_CASE("transient failures are retried") {
    FakeService svc;
    svc.failures_left = 2;
    auto cfg = svc.config();
    cfg.retries = 2;
    const std::vector<std::string> texts = {"a man"};
    CHECK(fetch_remote_texts(texts, cfg).size() == 1);
    CHECK(svc.requests == 3);
}

TEST_CASE("exhausted retries report the attempt count") {
    FakeService svc;
    svc.failures_left = 100;
    auto cfg = svc.config();
    cfg.retries = 1;
    const std::vector<std::string> texts = {"a man"};
    try {
        (void)fetch_remote_texts(texts, cfg);
        FAIL("expected RemoteError");
    } catch (const RemoteError& e) {
        CHECK(e.attempts() == 2);
    }
    CHECK(svc.requests == 2);
}

TEST_CASE("client errors are not retried") {
    FakeService svc;
    svc.status_override = 413;
    auto cfg = svc.config();
    cfg.retries = 3;
    const std::vector<std::string> texts = {"a man"};
    try {
        (void)fetch_remote_texts(texts, cfg);
        FAIL("expected RemoteError");
    } catch (const RemoteError& e) {
        CHECK(e.attempts() == 1);
    }
    CHECK(svc.requests == 1);
}

TEST_CASE("unreachable service is a remote error") {
    RemoteConfig cfg;
    cfg.endpoint = "http://127.0.0.1:1";
    cfg.retries = 1;
    cfg.timeout_seconds = 2;
    const std::vector<std::string> texts = {"a man"};
    try {
        (void)fetch_remote_texts(texts, cfg);
        FAIL("expected RemoteError");
    } catch (const RemoteError& e) {
        CHECK(e.attempts() == 2);
    }
}

TEST_CASE("bearer token and image upload") {
    FakeService svc;
    testing_support::TempDir dir("remote");
    testing_support::spit(dir / "a.jpg", "abc");
    testing_support::spit(dir / "b.jpg", "abcdef");
    auto cfg = svc.config();
    cfg.token = "secret";
    const std::vector<std::string> refs = {(dir / "a.jpg").string(), (dir / "b.jpg").string()};
    const auto out = fetch_remote_images(refs, cfg);
    REQUIRE(out.size() == 2);
    CHECK(out[0].id == refs[0]);
    // Lengths of the base64 payloads: "YWJj" and "YWJjZGVm".
    CHECK(out[0].vector[0] / out[0].vector[1] == doctest::Approx(4.0));
    CHECK(out[1].vector[0] / out[1].vector[1] == doctest::Approx(8.0));
    CHECK(svc.last_auth == "Bearer secret");
    CHECK(svc.last_field == "images");
}

TEST_CASE("missing endpoint is a configuration error") {
    const std::vector<std::string> texts = {"a man"};
    CHECK_THROWS_AS(fetch_remote_texts(texts, RemoteConfig{}), ConfigError);
}
