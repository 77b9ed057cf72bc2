#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>

#include "draftforge/common.hpp"
#include "draftforge/rollout.hpp"

namespace draftforge::infer {

namespace detail {

struct ParsedUrl {
    std::string origin;       // scheme://host[:port]
    std::string path_prefix;  // leading path, possibly empty
};

inline ParsedUrl parse_base_url(const std::string& base_url) {
    auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos) throw Error("endpoint base_url must include a scheme: " + base_url);
    auto path_start = base_url.find('/', scheme_end + 3);
    ParsedUrl u;
    if (path_start == std::string::npos) {
        u.origin = base_url;
    } else {
        u.origin = base_url.substr(0, path_start);
        u.path_prefix = base_url.substr(path_start);
        while (!u.path_prefix.empty() && u.path_prefix.back() == '/') u.path_prefix.pop_back();
    }
    return u;
}

}  // namespace detail

// Canonical /v1/completions request body. Field order is fixed so that
// reruns produce byte-identical requests; the per-sample seed is derived
// from (master seed, problem id, sample index).
inline std::string build_request_body(const ModelEndpoint& endpoint, const std::string& problem_id,
                                      const std::string& prompt, const SamplingParams& params,
                                      int sample_index) {
    const std::uint64_t derived =
        derive_seed(static_cast<std::uint64_t>(params.seed), problem_id,
                    static_cast<std::uint64_t>(sample_index)) &
        0x7fffffffffffffffull;
    jsonl::Json body;
    body["model"] = endpoint.model_name;
    body["prompt"] = prompt;
    body["max_tokens"] = params.max_tokens;
    body["temperature"] = params.temperature;
    body["top_p"] = params.top_p;
    body["n"] = 1;
    body["seed"] = derived;
    body["logprobs"] = 5;
    return body.dump();
}

// Content address for resume checkpoints: endpoint + prompt + params + index.
// A config change invalidates the cache instead of silently reusing it.
inline std::string checkpoint_key(const ModelEndpoint& endpoint, const std::string& prompt,
                                  const SamplingParams& params, const std::string& problem_id,
                                  int sample_index) {
    jsonl::Json pj;
    pj["temperature"] = params.temperature;
    pj["top_p"] = params.top_p;
    pj["max_tokens"] = params.max_tokens;
    pj["n"] = params.n;
    pj["seed"] = params.seed;
    std::uint64_t h = fnv1a64(endpoint.base_url + "\n" + endpoint.model_name);
    h = mix64(h, fnv1a64(prompt));
    h = mix64(h, fnv1a64(pj.dump()));
    h = mix64(h, fnv1a64(problem_id));
    h = mix64(h, static_cast<std::uint64_t>(sample_index));
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

class CompletionClient {
public:
    explicit CompletionClient(ModelEndpoint endpoint) : endpoint_(std::move(endpoint)) {
        endpoint_.validate();
        url_ = detail::parse_base_url(endpoint_.base_url);
    }

    const ModelEndpoint& endpoint() const { return endpoint_; }

    // Exactly params.n records; failed requests come back with
    // finish_reason=error instead of aborting the run.
    std::vector<RolloutRecord> complete(const std::string& problem_id, const std::string& prompt,
                                        const SamplingParams& params,
                                        const std::string& variant = "") const {
        params.validate();
        auto client = make_client();
        std::vector<RolloutRecord> out;
        out.reserve(params.n);
        for (int i = 0; i < params.n; ++i) {
            out.push_back(run_unit(*client, problem_id, prompt, params, i, variant));
        }
        return out;
    }

    // All prompts x n samples with a bounded in-flight window. When a
    // checkpoint path is given, finished units are recorded there and reused
    // on resume. Output sorted by (problem_id, sample_index).
    std::vector<RolloutRecord> run_batch(const std::vector<std::pair<std::string, std::string>>& prompts,
                                         const SamplingParams& params, const std::string& variant = "",
                                         const std::filesystem::path& checkpoint_path = {}) const {
        params.validate();
        struct Unit {
            const std::string* problem_id;
            const std::string* prompt;
            int sample_index;
            std::string key;
        };
        std::vector<Unit> units;
        units.reserve(prompts.size() * static_cast<std::size_t>(params.n));
        for (const auto& [id, prompt] : prompts) {
            for (int i = 0; i < params.n; ++i) {
                units.push_back({&id, &prompt, i, checkpoint_key(endpoint_, prompt, params, id, i)});
            }
        }

        std::map<std::string, RolloutRecord> done;
        std::ofstream ckpt_out;
        std::mutex ckpt_mutex;
        if (!checkpoint_path.empty()) {
            if (std::filesystem::exists(checkpoint_path)) {
                jsonl::for_each_record(checkpoint_path, [&](std::size_t, const jsonl::Json& j) {
                    done[j.at("key").get<std::string>()] = RolloutRecord::from_json(j.at("record"));
                });
            }
            std::filesystem::create_directories(checkpoint_path.parent_path());
            ckpt_out.open(checkpoint_path, std::ios::app);
            if (!ckpt_out) throw Error("cannot open checkpoint file " + checkpoint_path.string());
        }

        std::vector<RolloutRecord> results(units.size());
        std::vector<char> pending(units.size(), 0);
        for (std::size_t u = 0; u < units.size(); ++u) {
            auto it = done.find(units[u].key);
            if (it != done.end()) {
                results[u] = it->second;
            } else {
                pending[u] = 1;
            }
        }

        std::atomic<std::size_t> next{0};
        std::mutex error_mutex;
        std::string first_error;
        const int workers = std::max(1, std::min<int>(endpoint_.max_in_flight,
                                                      static_cast<int>(units.size())));
        auto work = [&]() {
            auto client = make_client();
            while (true) {
                const std::size_t u = next.fetch_add(1);
                if (u >= units.size()) break;
                if (!pending[u]) continue;
                try {
                    RolloutRecord rec = run_unit(*client, *units[u].problem_id, *units[u].prompt, params,
                                                 units[u].sample_index, variant);
                    results[u] = rec;
                    if (ckpt_out.is_open()) {
                        jsonl::Json line;
                        line["key"] = units[u].key;
                        line["record"] = rec.to_json();
                        std::lock_guard<std::mutex> lock(ckpt_mutex);
                        ckpt_out << line.dump() << '\n';
                        ckpt_out.flush();
                    }
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (first_error.empty()) first_error = e.what();
                    return;
                }
            }
        };
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
        if (!first_error.empty()) throw Error(first_error);

        std::stable_sort(results.begin(), results.end(), [](const RolloutRecord& a, const RolloutRecord& b) {
            if (a.problem_id != b.problem_id) return a.problem_id < b.problem_id;
            return a.sample_index < b.sample_index;
        });
        return results;
    }

private:
    std::unique_ptr<httplib::Client> make_client() const {
        auto client = std::make_unique<httplib::Client>(url_.origin);
        client->set_connection_timeout(std::chrono::seconds(10));
        client->set_read_timeout(std::chrono::seconds(endpoint_.timeout_seconds));
        client->set_write_timeout(std::chrono::seconds(endpoint_.timeout_seconds));
        if (!endpoint_.api_key_env.empty()) {
            if (const char* key = std::getenv(endpoint_.api_key_env.c_str()); key && *key) {
                client->set_default_headers({{"Authorization", std::string("Bearer ") + key}});
            }
        }
        return client;
    }

    static bool transient_status(int status) {
        return status == 408 || status == 429 || status >= 500;
    }

    RolloutRecord run_unit(httplib::Client& client, const std::string& problem_id,
                           const std::string& prompt, const SamplingParams& params, int sample_index,
                           const std::string& variant) const {
        RolloutRecord rec;
        rec.problem_id = problem_id;
        rec.variant = variant;
        rec.seed = params.seed;
        rec.sample_index = sample_index;

        const std::string body = build_request_body(endpoint_, problem_id, prompt, params, sample_index);
        const std::string path = url_.path_prefix + "/v1/completions";

        httplib::Result res;
        for (int attempt = 0; attempt < 3; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(
                    std::chrono::milliseconds(endpoint_.retry_backoff_ms << (attempt - 1)));
            }
            res = client.Post(path, body, "application/json");
            if (res && !transient_status(res->status)) break;
        }
        if (!res || res->status != 200) {
            rec.finish_reason = FinishReason::error;
            return rec;
        }

        jsonl::Json j = jsonl::Json::parse(res->body, nullptr, false);
        if (j.is_discarded() || !j.contains("choices") || !j.at("choices").is_array() ||
            j.at("choices").empty()) {
            throw Error("malformed completion response from " + endpoint_.base_url + " for problem '" +
                        problem_id + "'");
        }
        const auto& choice = j.at("choices").at(0);
        if (!choice.contains("text") || !choice.at("text").is_string()) {
            throw Error("malformed completion choice from " + endpoint_.base_url + " for problem '" +
                        problem_id + "'");
        }
        rec.text = choice.at("text").get<std::string>();
        if (choice.contains("finish_reason") && choice.at("finish_reason").is_string()) {
            rec.finish_reason = finish_reason_from_string(choice.at("finish_reason").get<std::string>());
        }

        std::vector<std::vector<double>> per_token;
        if (choice.contains("logprobs") && choice.at("logprobs").is_object()) {
            const auto& lp = choice.at("logprobs");
            if (lp.contains("top_logprobs") && lp.at("top_logprobs").is_array()) {
                for (const auto& tok : lp.at("top_logprobs")) {
                    std::vector<double> tops;
                    if (tok.is_object()) {
                        for (const auto& [k, v] : tok.items()) tops.push_back(v.get<double>());
                    }
                    if (!tops.empty()) per_token.push_back(std::move(tops));
                }
            } else if (lp.contains("token_logprobs") && lp.at("token_logprobs").is_array()) {
                for (const auto& v : lp.at("token_logprobs")) {
                    if (v.is_number()) per_token.push_back({v.get<double>()});
                }
            }
        }
        rec.mean_token_entropy_nats = mean_token_entropy(per_token);

        if (j.contains("usage") && j.at("usage").contains("completion_tokens")) {
            rec.token_count = j.at("usage").at("completion_tokens").get<int>();
        } else if (!per_token.empty()) {
            rec.token_count = static_cast<int>(per_token.size());
        }
        if (rec.token_count > params.max_tokens) rec.token_count = params.max_tokens;
        return rec;
    }

    ModelEndpoint endpoint_;
    detail::ParsedUrl url_;
};

}  // namespace draftforge::infer
