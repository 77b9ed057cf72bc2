#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "draftforge/common.hpp"
#include "draftforge/jsonl.hpp"
#include "draftforge/verifier.hpp"

namespace draftforge::grpo {

struct GrpoConfig {
    int group_size = 16;
    double kl_beta = 0.0;  // no KL penalty in this recipe
    double learning_rate = 5e-6;
    int grad_accum = 4;
    int steps = 2222;
    int checkpoint_every = 50;

    void validate() const {
        if (group_size < 2) throw Error("GrpoConfig: group_size must be >= 2");
        if (grad_accum < 1) throw Error("GrpoConfig: grad_accum must be >= 1");
        if (steps < 1) throw Error("GrpoConfig: steps must be >= 1");
        if (checkpoint_every < 1) throw Error("GrpoConfig: checkpoint_every must be >= 1");
    }
};

// Binary outcome reward: the lenient correctness predicate lifted to {0,1}.
// No format, length, or process shaping.
inline double binary_reward(std::string_view completion, std::string_view gold) {
    return verifier::quasi_correct(completion, gold) ? 1.0 : 0.0;
}

// Mean-baseline advantages: a_i = r_i - mean(r). No standard-deviation
// normalization.
inline std::vector<double> group_advantages(const std::vector<double>& rewards) {
    if (rewards.size() < 2) throw Error("group_advantages: need a group of >= 2 rewards");
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(rewards.size());
    std::vector<double> advantages;
    advantages.reserve(rewards.size());
    for (double r : rewards) advantages.push_back(r - mean);
    return advantages;
}

// loss = -(1/G) sum_i a_i sum_t logpi(token_t^i). Every sequence contributes
// its full token sum; there is no per-sequence length normalization.
inline double drgrpo_loss(const std::vector<std::vector<double>>& token_logprobs,
                          const std::vector<double>& advantages) {
    if (token_logprobs.size() != advantages.size())
        throw Error("drgrpo_loss: token_logprobs and advantages length mismatch");
    const double g = static_cast<double>(advantages.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < advantages.size(); ++i) {
        if (token_logprobs[i].empty() && advantages[i] != 0.0)
            throw Error("drgrpo_loss: empty token sequence with nonzero advantage");
        double seq_sum = 0.0;
        for (double lp : token_logprobs[i]) seq_sum += lp;
        loss -= advantages[i] * seq_sum / g;
    }
    return loss;
}

namespace detail {

inline double log_sum_exp(const std::vector<double>& logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : logits) s += std::exp(v - mx);
    return mx + std::log(s);
}

}  // namespace detail

// Loss evaluated from raw logits: logits[i][t] is the vocabulary-sized logit
// vector under which tokens[i][t] was sampled. This is the reference surface
// for gradient checks.
inline double drgrpo_loss_from_logits(const std::vector<std::vector<std::vector<double>>>& logits,
                                      const std::vector<std::vector<int>>& tokens,
                                      const std::vector<double>& advantages) {
    if (logits.size() != tokens.size() || logits.size() != advantages.size())
        throw Error("drgrpo_loss_from_logits: shape mismatch");
    std::vector<std::vector<double>> logprobs(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (logits[i].size() != tokens[i].size()) throw Error("drgrpo_loss_from_logits: shape mismatch");
        for (std::size_t t = 0; t < logits[i].size(); ++t) {
            const auto& row = logits[i][t];
            logprobs[i].push_back(row.at(tokens[i][t]) - detail::log_sum_exp(row));
        }
    }
    return drgrpo_loss(logprobs, advantages);
}

// Analytic dLoss/dlogits: -(1/G) a_i (1[v = token] - softmax_v) at every
// sampled position.
inline std::vector<std::vector<std::vector<double>>> drgrpo_grad_logits(
    const std::vector<std::vector<std::vector<double>>>& logits,
    const std::vector<std::vector<int>>& tokens, const std::vector<double>& advantages) {
    if (logits.size() != tokens.size() || logits.size() != advantages.size())
        throw Error("drgrpo_grad_logits: shape mismatch");
    const double g = static_cast<double>(advantages.size());
    std::vector<std::vector<std::vector<double>>> grad(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        grad[i].resize(logits[i].size());
        for (std::size_t t = 0; t < logits[i].size(); ++t) {
            const auto& row = logits[i][t];
            const double lse = detail::log_sum_exp(row);
            auto& out = grad[i][t];
            out.resize(row.size());
            for (std::size_t v = 0; v < row.size(); ++v) {
                const double softmax_v = std::exp(row[v] - lse);
                const double indicator = (static_cast<int>(v) == tokens[i][t]) ? 1.0 : 0.0;
                out[v] = -(advantages[i] / g) * (indicator - softmax_v);
            }
        }
    }
    return grad;
}

// Trailing mean with ramp-in: element i averages the last min(i+1, window)
// values.
inline std::vector<double> rolling_mean(const std::vector<double>& series, int window) {
    if (window < 1) throw Error("rolling_mean: window must be >= 1");
    std::vector<double> out;
    out.reserve(series.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < series.size(); ++i) {
        acc += series[i];
        if (i >= static_cast<std::size_t>(window)) acc -= series[i - window];
        const double denom = std::min<std::size_t>(i + 1, window);
        out.push_back(acc / static_cast<double>(denom));
    }
    return out;
}

struct TrainingLogEntry {
    int step = 0;
    double mean_reward = 0.0;
    double mean_len = 0.0;
    double mean_entropy_nats = 0.0;
    double loss = 0.0;
};

struct TrainingLog {
    std::vector<TrainingLogEntry> entries;

    std::string to_csv() const {
        std::string out = "step,mean_reward,mean_len,mean_entropy_nats,loss\n";
        char buf[256];
        for (const auto& e : entries) {
            std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g\n", e.step, e.mean_reward,
                          e.mean_len, e.mean_entropy_nats, e.loss);
            out += buf;
        }
        return out;
    }

    std::vector<jsonl::Json> to_jsonl() const {
        std::vector<jsonl::Json> out;
        for (const auto& e : entries) {
            jsonl::Json j;
            j["step"] = e.step;
            j["mean_reward"] = e.mean_reward;
            j["mean_len"] = e.mean_len;
            j["mean_entropy_nats"] = e.mean_entropy_nats;
            j["loss"] = e.loss;
            out.push_back(j);
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Toy verifiable environment: 2-digit addition
// ---------------------------------------------------------------------------

// Vocabulary: digits 0..9, an end-of-answer token, and one unused pad slot
// (12 tokens). An answer is the decimal digits of a+b terminated by EOS.
class ToyAdditionEnv {
public:
    static constexpr int kEos = 10;
    static constexpr int kPad = 11;

    ToyAdditionEnv(int num_contexts, std::uint64_t seed, int max_sum = 98) {
        if (num_contexts < 1) throw Error("ToyAdditionEnv: need at least one context");
        if (max_sum < 20 || max_sum > 198) throw Error("ToyAdditionEnv: max_sum out of range for 2-digit operands");
        std::mt19937_64 rng(derive_seed(seed, "toy-addition-env"));
        while (static_cast<int>(prompts_.size()) < num_contexts) {
            const int a = 10 + static_cast<int>(uniform_below(rng, 90));
            const int b = 10 + static_cast<int>(uniform_below(rng, 90));
            if (a + b > max_sum) continue;
            prompts_.push_back(std::to_string(a) + "+" + std::to_string(b));
            golds_.push_back(std::to_string(a + b));
        }
    }

    int vocab_size() const { return 12; }
    int max_completion_len() const { return 4; }  // up to 3 digits plus EOS
    int num_contexts() const { return static_cast<int>(prompts_.size()); }
    const std::string& prompt(int ctx) const { return prompts_.at(ctx); }
    const std::string& gold(int ctx) const { return golds_.at(ctx); }

    // Decodes digits up to the first EOS and scores the result with the
    // binary outcome reward. Unterminated sequences score 0.
    double reward(int ctx, const std::vector<int>& tokens) const {
        std::string digits;
        bool terminated = false;
        for (int tok : tokens) {
            if (tok == kEos) {
                terminated = true;
                break;
            }
            digits.push_back(tok >= 0 && tok <= 9 ? static_cast<char>('0' + tok) : '#');
        }
        if (!terminated || digits.empty()) return 0.0;
        return binary_reward("answer = " + digits, golds_.at(ctx));
    }

private:
    std::vector<std::string> prompts_;
    std::vector<std::string> golds_;
};

// Snapshot of the tabular policy, exposed to checkpoint callbacks and tests.
using ToyPolicyParams = std::vector<std::vector<std::vector<double>>>;  // [ctx][pos][vocab]

using CheckpointFn = std::function<void(int step, const ToyPolicyParams&)>;

// Plain-gradient Dr.GRPO on a context-conditioned tabular softmax policy.
// Each optimizer step draws grad_accum fresh rollout groups (round-robin over
// contexts) from the current policy and applies one update, so the ratio
// between behavior and target policy is exactly 1.
template <typename Env>
TrainingLog toy_train(const Env& env, const GrpoConfig& config, std::uint64_t seed,
                      const CheckpointFn& on_checkpoint = nullptr,
                      ToyPolicyParams* final_params = nullptr) {
    config.validate();
    const int num_ctx = env.num_contexts();
    const int vocab = env.vocab_size();
    const int max_len = env.max_completion_len();
    const int g = config.group_size;

    ToyPolicyParams theta(num_ctx,
                          std::vector<std::vector<double>>(max_len, std::vector<double>(vocab, 0.0)));
    std::mt19937_64 rng(derive_seed(seed, "toy-train"));

    auto softmax_row = [&](const std::vector<double>& row) {
        std::vector<double> p(row.size());
        const double lse = detail::log_sum_exp(row);
        for (std::size_t v = 0; v < row.size(); ++v) p[v] = std::exp(row[v] - lse);
        return p;
    };
    auto sample_from = [&](const std::vector<double>& probs) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        double acc = 0.0;
        for (std::size_t v = 0; v < probs.size(); ++v) {
            acc += probs[v];
            if (u < acc) return static_cast<int>(v);
        }
        return static_cast<int>(probs.size()) - 1;
    };

    TrainingLog log;
    long long rollout_counter = 0;
    for (int step = 0; step < config.steps; ++step) {
        ToyPolicyParams grad(num_ctx,
                             std::vector<std::vector<double>>(max_len, std::vector<double>(vocab, 0.0)));
        double step_reward = 0.0;
        double step_len = 0.0;
        double step_entropy = 0.0;
        double step_loss = 0.0;
        long long positions = 0;

        for (int slice = 0; slice < config.grad_accum; ++slice) {
            const int ctx = static_cast<int>((static_cast<long long>(step) * config.grad_accum + slice) %
                                             num_ctx);
            std::vector<std::vector<int>> tokens(g);
            std::vector<std::vector<double>> logprobs(g);
            std::vector<double> rewards(g);
            for (int i = 0; i < g; ++i) {
                for (int pos = 0; pos < max_len; ++pos) {
                    const auto probs = softmax_row(theta[ctx][pos]);
                    const int tok = sample_from(probs);
                    tokens[i].push_back(tok);
                    logprobs[i].push_back(std::log(probs[tok]));
                    double h = 0.0;
                    for (double p : probs) {
                        if (p > 0) h -= p * std::log(p);
                    }
                    step_entropy += h;
                    ++positions;
                    if (tok == Env::kEos) break;
                }
                rewards[i] = env.reward(ctx, tokens[i]);
                step_reward += rewards[i];
                step_len += static_cast<double>(tokens[i].size());
                ++rollout_counter;
            }
            const auto advantages = group_advantages(rewards);
            const double loss = drgrpo_loss(logprobs, advantages);
            if (!std::isfinite(loss))
                throw Error("toy_train: non-finite loss at step " + std::to_string(step));
            step_loss += loss / config.grad_accum;
            for (int i = 0; i < g; ++i) {
                if (advantages[i] == 0.0) continue;
                for (std::size_t pos = 0; pos < tokens[i].size(); ++pos) {
                    const auto probs = softmax_row(theta[ctx][pos]);
                    const double scale = -(advantages[i] / g) / config.grad_accum;
                    for (int v = 0; v < vocab; ++v) {
                        const double indicator = (v == tokens[i][pos]) ? 1.0 : 0.0;
                        grad[ctx][pos][v] += scale * (indicator - probs[v]);
                    }
                }
            }
        }

        for (int c = 0; c < num_ctx; ++c) {
            for (int pos = 0; pos < max_len; ++pos) {
                for (int v = 0; v < vocab; ++v) {
                    theta[c][pos][v] -= config.learning_rate * grad[c][pos][v];
                }
            }
        }

        const double rollouts_this_step = static_cast<double>(g) * config.grad_accum;
        TrainingLogEntry entry;
        entry.step = step;
        entry.mean_reward = step_reward / rollouts_this_step;
        entry.mean_len = step_len / rollouts_this_step;
        entry.mean_entropy_nats = positions > 0 ? step_entropy / static_cast<double>(positions) : 0.0;
        entry.loss = step_loss;
        log.entries.push_back(entry);

        if (on_checkpoint && (step + 1) % config.checkpoint_every == 0) on_checkpoint(step + 1, theta);
    }
    if (final_params) *final_params = theta;
    return log;
}

}  // namespace draftforge::grpo
