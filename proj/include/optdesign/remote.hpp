#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <regex>
#include <semaphore>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "optdesign/oracles.hpp"

#include <httplib.h>
#include <json.hpp>

// <resolv.h>, pulled in by httplib, defines _res, which collides with Eigen parameter names.
#ifdef _res
#undef _res
#endif

namespace optdesign {

/// Wire format of the `POST {endpoint}/sample` predictor protocol.
namespace wire {

using nlohmann::json;

inline json encode_vector(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

/// Parses a JSON array of numbers; anything else is a protocol error.
inline Vector decode_vector(const json& j, const char* what) {
  if (!j.is_array()) throw ProtocolError(std::string(what) + ": expected array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ProtocolError(std::string(what) + ": non-numeric entry");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline json encode_request(std::span<const LabeledExample> history, const Vector& query, std::size_t n_samples,
                           std::optional<std::uint64_t> seed) {
  json hist = json::array();
  for (const auto& ex : history) hist.push_back({{"x", encode_vector(ex.features)}, {"y", encode_vector(ex.label)}});
  json req = {{"history", std::move(hist)}, {"query", encode_vector(query)}, {"n_samples", n_samples}};
  req["seed"] = seed ? json(*seed) : json(nullptr);
  return req;
}

struct SampleRequest {
  std::vector<LabeledExample> history;
  Vector query;
  std::size_t n_samples = 0;
  std::optional<std::uint64_t> seed;
};

/// Server-side decoding of a request; used by stub servers and tests.
inline SampleRequest decode_request(const json& j) {
  if (!j.is_object()) throw ProtocolError("request: expected object");
  for (const char* key : {"history", "query", "n_samples", "seed"}) {
    if (!j.contains(key)) throw ProtocolError(std::string("request: missing field '") + key + "'");
  }
  SampleRequest req;
  if (!j["history"].is_array()) throw ProtocolError("request: history must be an array");
  for (const auto& item : j["history"]) {
    if (!item.is_object() || !item.contains("x") || !item.contains("y")) {
      throw ProtocolError("request: history entries need x and y");
    }
    req.history.push_back({decode_vector(item["x"], "history.x"), decode_vector(item["y"], "history.y")});
  }
  req.query = decode_vector(j["query"], "query");
  if (!j["n_samples"].is_number_unsigned()) throw ProtocolError("request: n_samples must be a nonnegative integer");
  req.n_samples = j["n_samples"].get<std::size_t>();
  if (!j["seed"].is_null()) {
    if (!j["seed"].is_number_unsigned()) throw ProtocolError("request: seed must be uint64 or null");
    req.seed = j["seed"].get<std::uint64_t>();
  }
  return req;
}

inline json encode_response(std::span<const Vector> samples) {
  json arr = json::array();
  for (const auto& s : samples) arr.push_back(encode_vector(s));
  return {{"samples", std::move(arr)}};
}

/// Validates sample count and (when label_dim > 0) the width of every sample.
inline std::vector<Vector> decode_response(const json& j, std::size_t n_samples, Eigen::Index label_dim) {
  if (!j.is_object() || !j.contains("samples")) throw ProtocolError("response: missing 'samples'");
  const json& arr = j["samples"];
  if (!arr.is_array()) throw ProtocolError("response: 'samples' must be an array");
  if (arr.size() != n_samples) {
    throw ProtocolError("response: expected " + std::to_string(n_samples) + " samples, got " +
                        std::to_string(arr.size()));
  }
  std::vector<Vector> out;
  out.reserve(arr.size());
  for (const auto& s : arr) {
    Vector v = decode_vector(s, "response sample");
    if (label_dim > 0 && v.size() != label_dim) throw ProtocolError("response: sample has wrong label width");
    if (v.size() == 0) throw ProtocolError("response: empty sample");
    out.push_back(std::move(v));
  }
  return out;
}

inline std::vector<Vector> decode_response(const std::string& body, std::size_t n_samples, Eigen::Index label_dim) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded()) throw ProtocolError("response: body is not valid JSON");
  return decode_response(j, n_samples, label_dim);
}

}  // namespace wire

struct RemoteOptions {
  /// Base URL, e.g. "http://127.0.0.1:8080" or "http://host:8080/api".
  std::string endpoint;
  std::chrono::milliseconds timeout{10000};
  int retries = 2;
  std::chrono::milliseconds initial_backoff{250};
  std::ptrdiff_t max_in_flight = 4;
  /// Expected label width; 0 accepts whatever width the server returns.
  Eigen::Index label_dim = 1;
};

/// Client for a remote predictor (for example an LLM wrapped behind the
/// sample protocol). Retries transport failures with exponential backoff;
/// HTTP errors and malformed responses fail immediately.
class RemotePredictorOracle final : public PredictiveOracle {
 public:
  explicit RemotePredictorOracle(RemoteOptions options)
      : options_(std::move(options)),
        in_flight_(std::make_unique<std::counting_semaphore<>>(std::max<std::ptrdiff_t>(1, options_.max_in_flight))) {
    static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(options_.endpoint, m, url)) {
      throw InvalidArgument("remote oracle: malformed endpoint '" + options_.endpoint + "'");
    }
    host_ = m[1].str();
    std::string prefix = m[2].matched ? m[2].str() : "";
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    path_ = prefix + "/sample";
  }

  [[nodiscard]] OracleCapabilities capabilities() const override {
    return {.can_sample_predictions = true, .concurrent_safe = true, .label_dim = std::max<Eigen::Index>(1, options_.label_dim)};
  }

  [[nodiscard]] const RemoteOptions& options() const noexcept { return options_; }

  [[nodiscard]] Vector sample_label(const Vector& features, std::span<const LabeledExample> history,
                                    Rng& rng) const override {
    auto draws = sample_prediction(features, history, 1, rng);
    return std::move(draws.front());
  }

  [[nodiscard]] std::vector<Vector> sample_prediction(const Vector& query, std::span<const LabeledExample> history,
                                                      std::size_t n, Rng& rng) const override {
    if (n == 0) return {};
    const std::string body = wire::encode_request(history, query, n, rng.next_u64()).dump();
    return wire::decode_response(post(body), n, options_.label_dim);
  }

 private:
  struct Permit {
    std::counting_semaphore<>& sem;
    explicit Permit(std::counting_semaphore<>& s) : sem(s) { sem.acquire(); }
    ~Permit() { sem.release(); }
    Permit(const Permit&) = delete;
    Permit& operator=(const Permit&) = delete;
  };

  std::string post(const std::string& body) const {
    Permit permit(*in_flight_);
    auto backoff = options_.initial_backoff;
    for (int attempt = 0;; ++attempt) {
      httplib::Client client(host_);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
      client.set_connection_timeout(secs.count(), usecs.count());
      client.set_read_timeout(secs.count(), usecs.count());
      client.set_write_timeout(secs.count(), usecs.count());
      auto res = client.Post(path_, body, "application/json");
      if (res) {
        if (res->status < 200 || res->status >= 300) {
          throw OracleError("remote oracle: HTTP " + std::to_string(res->status) + " from " + host_ + path_);
        }
        return res->body;
      }
      if (attempt >= options_.retries) {
        throw TransportError("remote oracle: " + httplib::to_string(res.error()) + " after " +
                             std::to_string(attempt + 1) + " attempt(s) to " + host_ + path_);
      }
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }

  RemoteOptions options_;
  std::string host_;
  std::string path_;
  std::unique_ptr<std::counting_semaphore<>> in_flight_;
};

}  // namespace optdesign
