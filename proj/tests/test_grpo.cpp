#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "draftforge/grpo.hpp"

using namespace draftforge;

TEST_CASE("binary_reward is the lenient predicate lifted to {0,1}") {
    CHECK(grpo::binary_reward("\\boxed{42}", "42") == 1.0);
    CHECK(grpo::binary_reward("", "42") == 0.0);
    CHECK(grpo::binary_reward("the answer is 42", "42") == 1.0);  // unboxed still rewarded

    const std::string completions[] = {"\\boxed{7}", "The answer is 7.", "n = 7",
                                       "$7$",        "no answer",        "\\boxed{8}"};
    for (const auto& c : completions) {
        CHECK(grpo::binary_reward(c, "7") == (verifier::quasi_correct(c, "7") ? 1.0 : 0.0));
    }
}

TEST_CASE("group_advantages pinned values") {
    CHECK(grpo::group_advantages({1, 1, 0, 0}) == std::vector<double>{0.5, 0.5, -0.5, -0.5});
    CHECK(grpo::group_advantages({0, 0, 0, 0}) == std::vector<double>{0, 0, 0, 0});

    std::vector<double> one_winner(16, 0.0);
    one_winner[3] = 1.0;
    auto adv = grpo::group_advantages(one_winner);
    CHECK(adv[3] == Catch::Approx(15.0 / 16.0).margin(1e-15));
    for (int i = 0; i < 16; ++i) {
        if (i != 3) CHECK(adv[i] == Catch::Approx(-1.0 / 16.0).margin(1e-15));
    }

    CHECK_THROWS_AS(grpo::group_advantages({1.0}), Error);
}

TEST_CASE("group_advantages invariants on random groups") {
    std::mt19937_64 rng(1234);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t g = 2 + rng() % 31;
        std::vector<double> rewards(g);
        for (auto& r : rewards) r = static_cast<double>(rng() % 1000) / 250.0 - 2.0;
        auto adv = grpo::group_advantages(rewards);
        double sum = 0.0;
        for (double a : adv) sum += a;
        CHECK(std::fabs(sum) <= 1e-12 * static_cast<double>(g));

        // shift invariance
        std::vector<double> shifted = rewards;
        for (auto& r : shifted) r += 3.25;
        auto adv_shift = grpo::group_advantages(shifted);
        for (std::size_t i = 0; i < g; ++i) CHECK(adv_shift[i] == Catch::Approx(adv[i]).margin(1e-12));

        // positive scaling scales advantages
        std::vector<double> scaled = rewards;
        for (auto& r : scaled) r *= 4.0;
        auto adv_scale = grpo::group_advantages(scaled);
        for (std::size_t i = 0; i < g; ++i)
            CHECK(adv_scale[i] == Catch::Approx(4.0 * adv[i]).margin(1e-12));
    }
}

TEST_CASE("drgrpo_loss basics") {
    SECTION("all advantages zero gives zero loss") {
        CHECK(grpo::drgrpo_loss({{-1.0, -2.0}, {-0.5}}, {0.0, 0.0}) == 0.0);
    }
    SECTION("raising a positive-advantage sequence's logprobs lowers the loss") {
        const double lo = grpo::drgrpo_loss({{-2.0, -2.0}, {-1.0}}, {0.5, -0.5});
        const double hi = grpo::drgrpo_loss({{-1.0, -1.0}, {-1.0}}, {0.5, -0.5});
        CHECK(hi < lo);
    }
    SECTION("empty sequence with nonzero advantage is a hard error") {
        CHECK_THROWS_AS(grpo::drgrpo_loss({{}, {-1.0}}, {0.5, -0.5}), Error);
        CHECK_NOTHROW(grpo::drgrpo_loss({{}, {-1.0}}, {0.0, 0.0}));
    }
}

namespace {

// central finite differences on the logits surface
void check_gradient(const std::vector<std::vector<std::vector<double>>>& logits,
                    const std::vector<std::vector<int>>& tokens, const std::vector<double>& advantages,
                    double rel_tol) {
    auto grad = grpo::drgrpo_grad_logits(logits, tokens, advantages);
    auto perturbed = logits;
    const double eps = 1e-4;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        for (std::size_t t = 0; t < logits[i].size(); ++t) {
            for (std::size_t v = 0; v < logits[i][t].size(); ++v) {
                perturbed[i][t][v] = logits[i][t][v] + eps;
                const double up = grpo::drgrpo_loss_from_logits(perturbed, tokens, advantages);
                perturbed[i][t][v] = logits[i][t][v] - eps;
                const double down = grpo::drgrpo_loss_from_logits(perturbed, tokens, advantages);
                perturbed[i][t][v] = logits[i][t][v];
                const double fd = (up - down) / (2.0 * eps);
                const double scale = std::max({std::fabs(fd), std::fabs(grad[i][t][v]), 1e-8});
                CHECK(std::fabs(fd - grad[i][t][v]) / scale < rel_tol);
            }
        }
    }
}

}  // namespace

TEST_CASE("drgrpo analytic gradient matches finite differences") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        const int g = 2 + static_cast<int>(rng() % 3);
        const int vocab = 3 + static_cast<int>(rng() % 4);
        std::vector<std::vector<std::vector<double>>> logits(g);
        std::vector<std::vector<int>> tokens(g);
        std::vector<double> rewards(g);
        for (int i = 0; i < g; ++i) {
            const int len = 1 + static_cast<int>(rng() % 5);
            for (int t = 0; t < len; ++t) {
                std::vector<double> row(vocab);
                for (auto& x : row) x = static_cast<double>(rng() % 2000) / 500.0 - 2.0;
                logits[i].push_back(row);
                tokens[i].push_back(static_cast<int>(rng() % vocab));
            }
            rewards[i] = static_cast<double>(rng() % 2);
        }
        check_gradient(logits, tokens, grpo::group_advantages(rewards), 1e-5);
    }
}

TEST_CASE("longer sequences dominate the gradient under equal |advantage|") {
    // two sequences, equal-magnitude opposite-sign advantages, lengths 10 and
    // 100: with no length normalization the long one contributes 10x the
    // gradient mass
    std::mt19937_64 rng(5150);
    std::vector<std::vector<std::vector<double>>> logits(2);
    std::vector<std::vector<int>> tokens(2);
    const int vocab = 5;
    const int lens[2] = {10, 100};
    for (int i = 0; i < 2; ++i) {
        for (int t = 0; t < lens[i]; ++t) {
            std::vector<double> row(vocab);
            for (auto& x : row) x = static_cast<double>(rng() % 1000) / 500.0 - 1.0;
            logits[i].push_back(row);
            tokens[i].push_back(static_cast<int>(rng() % vocab));
        }
    }
    const std::vector<double> advantages{0.5, -0.5};
    check_gradient(logits, tokens, advantages, 1e-5);
    auto grad = grpo::drgrpo_grad_logits(logits, tokens, advantages);
    double norm_short = 0.0, norm_long = 0.0;
    for (const auto& pos : grad[0])
        for (double v : pos) norm_short += std::fabs(v);
    for (const auto& pos : grad[1])
        for (double v : pos) norm_long += std::fabs(v);
    CHECK(norm_long > 5.0 * norm_short);
}

TEST_CASE("rolling_mean") {
    CHECK(grpo::rolling_mean({1, 2, 3, 4}, 2) == std::vector<double>{1.0, 1.5, 2.5, 3.5});
    CHECK(grpo::rolling_mean({7, 3, 9}, 1) == std::vector<double>{7.0, 3.0, 9.0});
    CHECK(grpo::rolling_mean({2, 2, 2, 2, 2}, 3) == std::vector<double>{2.0, 2.0, 2.0, 2.0, 2.0});
    CHECK_THROWS_AS(grpo::rolling_mean({1.0}, 0), Error);
}

TEST_CASE("toy addition environment scoring") {
    grpo::ToyAdditionEnv env(4, 42);
    REQUIRE(env.num_contexts() == 4);
    CHECK(env.vocab_size() == 12);

    // build the exact token sequence for context 0's gold answer
    const std::string& gold = env.gold(0);
    std::vector<int> tokens;
    for (char c : gold) tokens.push_back(c - '0');
    tokens.push_back(grpo::ToyAdditionEnv::kEos);
    CHECK(env.reward(0, tokens) == 1.0);

    // zero-padded form is still the same number
    std::vector<int> padded{0};
    padded.insert(padded.end(), tokens.begin(), tokens.end());
    if (padded.size() <= static_cast<std::size_t>(env.max_completion_len()))
        CHECK(env.reward(0, padded) == 1.0);

    // missing EOS scores zero even with the right digits
    std::vector<int> unterminated(tokens.begin(), tokens.end() - 1);
    CHECK(env.reward(0, unterminated) == 0.0);

    // wrong digits score zero
    std::vector<int> wrong = tokens;
    wrong[0] = (wrong[0] + 1) % 10;
    CHECK(env.reward(0, wrong) == 0.0);

    // empty answer scores zero
    CHECK(env.reward(0, {grpo::ToyAdditionEnv::kEos}) == 0.0);
}

TEST_CASE("toy environment supports 3-digit sums") {
    grpo::ToyAdditionEnv env(32, 7, 198);
    bool saw_three_digit = false;
    for (int c = 0; c < env.num_contexts(); ++c) {
        const std::string& gold = env.gold(c);
        std::vector<int> tokens;
        for (char ch : gold) tokens.push_back(ch - '0');
        tokens.push_back(grpo::ToyAdditionEnv::kEos);
        if (gold.size() == 3) {
            saw_three_digit = true;
            // a 3-digit answer plus EOS exactly fills the window
            REQUIRE(tokens.size() == static_cast<std::size_t>(env.max_completion_len()));
        }
        CHECK(env.reward(c, tokens) == 1.0);
    }
    CHECK(saw_three_digit);
}

namespace {

// every rollout is correct: rewards are uniform, advantages vanish
struct AlwaysCorrectEnv {
    static constexpr int kEos = 2;
    int vocab_size() const { return 3; }
    int max_completion_len() const { return 3; }
    int num_contexts() const { return 2; }
    double reward(int, const std::vector<int>&) const { return 1.0; }
};

}  // namespace

TEST_CASE("uniform-reward environments produce exactly zero parameter movement") {
    AlwaysCorrectEnv env;
    grpo::GrpoConfig cfg;
    cfg.group_size = 8;
    cfg.grad_accum = 2;
    cfg.steps = 25;
    cfg.learning_rate = 10.0;
    grpo::ToyPolicyParams params;
    auto log = grpo::toy_train(env, cfg, 42, nullptr, &params);
    REQUIRE(log.entries.size() == 25);
    for (const auto& e : log.entries) CHECK(e.mean_reward == 1.0);
    for (const auto& ctx : params)
        for (const auto& pos : ctx)
            for (double v : pos) CHECK(v == 0.0);
}

TEST_CASE("toy_train is deterministic given the seed") {
    grpo::ToyAdditionEnv env(3, 9);
    grpo::GrpoConfig cfg;
    cfg.group_size = 4;
    cfg.grad_accum = 2;
    cfg.steps = 40;
    cfg.learning_rate = 5.0;
    auto a = grpo::toy_train(env, cfg, 123);
    auto b = grpo::toy_train(env, cfg, 123);
    CHECK(a.to_csv() == b.to_csv());
    auto c = grpo::toy_train(env, cfg, 124);
    CHECK(a.to_csv() != c.to_csv());
}

TEST_CASE("learning_rate zero leaves the policy untouched") {
    grpo::ToyAdditionEnv env(3, 11);
    grpo::GrpoConfig cfg;
    cfg.group_size = 8;
    cfg.grad_accum = 1;
    cfg.steps = 30;
    cfg.learning_rate = 0.0;
    grpo::ToyPolicyParams params;
    grpo::toy_train(env, cfg, 77, nullptr, &params);
    for (const auto& ctx : params)
        for (const auto& pos : ctx)
            for (double v : pos) CHECK(v == 0.0);
}

TEST_CASE("training log serialization") {
    grpo::TrainingLog log;
    log.entries.push_back({0, 0.5, 3.0, 2.48, -0.01});
    const auto csv = log.to_csv();
    CHECK(csv.rfind("step,mean_reward,mean_len,mean_entropy_nats,loss\n", 0) == 0);
    CHECK(csv.find("0,0.5,3,2.48,-0.01") != std::string::npos);
    auto lines = log.to_jsonl();
    REQUIRE(lines.size() == 1);
    CHECK(lines[0].at("mean_reward").get<double>() == 0.5);
}

TEST_CASE("checkpoint callback fires on the configured cadence") {
    grpo::ToyAdditionEnv env(2, 5);
    grpo::GrpoConfig cfg;
    cfg.group_size = 4;
    cfg.grad_accum = 1;
    cfg.steps = 10;
    cfg.checkpoint_every = 4;
    std::vector<int> steps;
    grpo::toy_train(env, cfg, 1, [&](int step, const grpo::ToyPolicyParams&) { steps.push_back(step); });
    CHECK(steps == std::vector<int>{4, 8});
}
