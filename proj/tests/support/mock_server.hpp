#pragma once

// In-process OpenAI-compatible /v1/completions endpoint for tests. The
// default handler answers arithmetic prompts deterministically from a hash of
// (prompt, seed), so recorded-replay behavior falls out for free.

#include <atomic>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "draftforge/common.hpp"

namespace testutil {

using Json = nlohmann::ordered_json;

// first two nonnegative integers appearing in the text
inline std::pair<long long, long long> first_two_ints(const std::string& s) {
    long long vals[2] = {0, 0};
    int found = 0;
    std::size_t i = 0;
    while (i < s.size() && found < 2) {
        if (s[i] >= '0' && s[i] <= '9') {
            long long v = 0;
            while (i < s.size() && s[i] >= '0' && s[i] <= '9') {
                v = v * 10 + (s[i] - '0');
                ++i;
            }
            vals[found++] = v;
        } else {
            ++i;
        }
    }
    return {vals[0], vals[1]};
}

// Deterministic completion for "a+b"-style problems: the hash bucket decides
// between boxed-correct, unboxed-correct, boxed-wrong, and no-answer replies.
inline Json arithmetic_completion(const Json& request) {
    const std::string prompt = request.at("prompt").get<std::string>();
    const std::uint64_t seed = request.value("seed", 0ull);
    auto [a, b] = first_two_ints(prompt);
    const long long sum = a + b;
    const std::uint64_t h = draftforge::mix64(draftforge::fnv1a64(prompt), seed);
    std::string text;
    switch (h % 4) {
        case 0:
            text = "Adding gives " + std::to_string(sum) + ".\n\\boxed{" + std::to_string(sum) + "}";
            break;
        case 1: text = "The answer is " + std::to_string(sum) + "."; break;
        case 2:
            text = "Careless slip.\n\\boxed{" + std::to_string(sum + 1 + (h >> 8) % 5) + "}";
            break;
        default: text = "I cannot decide. (token " + std::to_string(h % 997) + ")"; break;
    }
    Json logprob_entry;
    logprob_entry["a"] = -0.3 - static_cast<double>(h % 7) / 10.0;
    logprob_entry["b"] = -1.7;
    Json reply;
    reply["id"] = "cmpl-mock";
    reply["choices"] = Json::array();
    Json choice;
    choice["text"] = text;
    choice["index"] = 0;
    choice["finish_reason"] = "stop";
    Json lp;
    lp["top_logprobs"] = Json::array({logprob_entry, logprob_entry, logprob_entry});
    choice["logprobs"] = lp;
    reply["choices"].push_back(choice);
    Json usage;
    usage["completion_tokens"] = 3;
    reply["usage"] = usage;
    return reply;
}

class MockServer {
public:
    using Handler = std::function<Json(const Json&)>;

    explicit MockServer(Handler handler = arithmetic_completion) : handler_(std::move(handler)) {
        server_.Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
            requests_.fetch_add(1);
            {
                std::lock_guard<std::mutex> lock(mutex_);
                bodies_.push_back(req.body);
                auth_headers_.push_back(req.get_header_value("Authorization"));
            }
            int fails = fail_next_.load();
            while (fails > 0 && !fail_next_.compare_exchange_weak(fails, fails - 1)) {
            }
            if (fails > 0 || fail_all_.load()) {
                res.status = 500;
                res.set_content("mock failure", "text/plain");
                return;
            }
            if (garbage_.load()) {
                res.set_content("{\"unexpected\": true}", "application/json");
                return;
            }
            const Json body = Json::parse(req.body);
            res.set_content(handler_(body).dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~MockServer() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    int request_count() const { return requests_.load(); }
    void reset_count() { requests_.store(0); }
    void set_fail_all(bool value) { fail_all_.store(value); }
    void fail_next(int n) { fail_next_.store(n); }
    void set_garbage(bool value) { garbage_.store(value); }

    std::vector<std::string> bodies() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return bodies_;
    }
    std::vector<std::string> auth_headers() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return auth_headers_;
    }
    void clear_captures() {
        std::lock_guard<std::mutex> lock(mutex_);
        bodies_.clear();
        auth_headers_.clear();
    }

private:
    Handler handler_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> requests_{0};
    std::atomic<int> fail_next_{0};
    std::atomic<bool> fail_all_{false};
    std::atomic<bool> garbage_{false};
    mutable std::mutex mutex_;
    std::vector<std::string> bodies_;
    std::vector<std::string> auth_headers_;
};

}  // namespace testutil
