#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "draftforge/jsonl.hpp"

namespace draftforge::infer {

struct SamplingParams {
    double temperature = 0.6;
    double top_p = 0.95;
    int max_tokens = 4096;
    int n = 1;             // samples per prompt
    std::int64_t seed = 0;

    void validate() const {
        if (max_tokens < 1) throw Error("SamplingParams: max_tokens must be >= 1");
        if (n < 1) throw Error("SamplingParams: n must be >= 1");
        if (temperature < 0) throw Error("SamplingParams: temperature must be >= 0");
        if (!(top_p > 0 && top_p <= 1)) throw Error("SamplingParams: top_p must be in (0,1]");
        if (temperature == 0 && n != 1) throw Error("SamplingParams: temperature 0 (greedy) requires n=1");
    }
};

struct ModelEndpoint {
    std::string base_url;       // e.g. http://127.0.0.1:8000
    std::string model_name;
    std::string api_key_env;    // name of the env var holding the key; may be empty
    int max_in_flight = 4;
    int timeout_seconds = 300;  // long completions need generous timeouts
    int retry_backoff_ms = 500;

    void validate() const {
        if (base_url.empty()) throw Error("ModelEndpoint: base_url required");
        if (max_in_flight < 1) throw Error("ModelEndpoint: max_in_flight must be >= 1");
    }
};

enum class FinishReason { stop, length, error };

inline std::string to_string(FinishReason r) {
    switch (r) {
        case FinishReason::stop: return "stop";
        case FinishReason::length: return "length";
        case FinishReason::error: return "error";
    }
    return "?";
}

inline FinishReason finish_reason_from_string(const std::string& s) {
    if (s == "length") return FinishReason::length;
    if (s == "error") return FinishReason::error;
    return FinishReason::stop;
}

struct RolloutRecord {
    std::string problem_id;
    std::string variant;
    std::int64_t seed = 0;
    int sample_index = 0;
    std::string text;
    int token_count = 0;
    FinishReason finish_reason = FinishReason::stop;
    std::optional<double> mean_token_entropy_nats;
    std::optional<bool> correct_strict;
    std::optional<bool> correct_quasi;

    jsonl::Json to_json() const {
        jsonl::Json j;
        j["problem_id"] = problem_id;
        j["variant"] = variant;
        j["seed"] = seed;
        j["sample_index"] = sample_index;
        j["text"] = text;
        j["token_count"] = token_count;
        j["finish_reason"] = to_string(finish_reason);
        if (mean_token_entropy_nats) j["mean_token_entropy_nats"] = *mean_token_entropy_nats;
        if (correct_strict) j["correct_strict"] = *correct_strict;
        if (correct_quasi) j["correct_quasi"] = *correct_quasi;
        return j;
    }

    static RolloutRecord from_json(const jsonl::Json& j) {
        RolloutRecord r;
        r.problem_id = j.at("problem_id").get<std::string>();
        r.variant = j.at("variant").get<std::string>();
        r.seed = j.at("seed").get<std::int64_t>();
        r.sample_index = j.at("sample_index").get<int>();
        r.text = j.at("text").get<std::string>();
        r.token_count = j.at("token_count").get<int>();
        r.finish_reason = finish_reason_from_string(j.at("finish_reason").get<std::string>());
        if (j.contains("mean_token_entropy_nats") && !j.at("mean_token_entropy_nats").is_null())
            r.mean_token_entropy_nats = j.at("mean_token_entropy_nats").get<double>();
        if (j.contains("correct_strict") && !j.at("correct_strict").is_null())
            r.correct_strict = j.at("correct_strict").get<bool>();
        if (j.contains("correct_quasi") && !j.at("correct_quasi").is_null())
            r.correct_quasi = j.at("correct_quasi").get<bool>();
        return r;
    }
};

// Lower-bound entropy estimate from top-k log-probabilities: the unreported
// residual probability mass is lumped into a single pseudo-token. Servers
// rarely expose the full distribution, so this proxy tracks trends only.
inline double entropy_lower_bound_nats(const std::vector<double>& top_logprobs) {
    double sum_p = 0.0;
    double h = 0.0;
    for (double lp : top_logprobs) {
        double p = std::exp(lp);
        if (p <= 0) continue;
        sum_p += p;
        h -= p * lp;
    }
    double residual = 1.0 - sum_p;
    if (residual > 1e-12) h -= residual * std::log(residual);
    return h < 0 ? 0.0 : h;
}

inline std::optional<double> mean_token_entropy(const std::vector<std::vector<double>>& per_token_top_logprobs) {
    if (per_token_top_logprobs.empty()) return std::nullopt;
    double total = 0.0;
    for (const auto& tok : per_token_top_logprobs) total += entropy_lower_bound_nats(tok);
    return total / static_cast<double>(per_token_top_logprobs.size());
}

}  // namespace draftforge::infer
