#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>

#include "draftforge/config.hpp"
#include "support/test_util.hpp"

using namespace draftforge;

namespace {

const char* kSampleConfig = R"(# run configuration
seeds = [42, 137]

[paths]
corpus_dir = "work/corpus"
draft_dir = "work/drafts"
dataset_dir = "work/datasets"
rollout_dir = "work/rollouts"
report_dir = "work/reports"

[endpoints.learner]
base_url = "http://127.0.0.1:8000"
model = "learner-model"
max_in_flight = 8

[endpoints.drafter]
base_url = "http://127.0.0.1:8001"   # the weaker model
model = "drafter-model"

[sampling.draft]
temperature = 0.8
top_p = 0.95
max_tokens = 2560
n = 32

[grpo]
group_size = 16
kl_beta = 0.0
learning_rate = 5e-6
grad_accum = 4
steps = 2222
checkpoint_every = 50

[toy]
num_contexts = 4
max_sum = 98
)";

}  // namespace

TEST_CASE("toml subset parsing") {
    auto doc = config::parse_toml(kSampleConfig);
    CHECK(doc.at("seeds").at(0).get<int>() == 42);
    CHECK(doc.at("seeds").at(1).get<int>() == 137);
    CHECK(doc.at("endpoints").at("learner").at("base_url").get<std::string>() == "http://127.0.0.1:8000");
    CHECK(doc.at("endpoints").at("drafter").at("model").get<std::string>() == "drafter-model");
    CHECK(doc.at("sampling").at("draft").at("temperature").get<double>() == 0.8);
    CHECK(doc.at("grpo").at("learning_rate").get<double>() == 5e-6);
    CHECK(doc.at("grpo").at("steps").get<int>() == 2222);
}

TEST_CASE("toml value forms") {
    auto doc = config::parse_toml(
        "flag = true\n"
        "off = false\n"
        "num = -17\n"
        "pi = 3.25\n"
        "name = \"with \\\"escapes\\\" and \\n newline\"\n"
        "multi = [1,\n  2,\n  3]\n"
        "dotted.key = 9\n");
    CHECK(doc.at("flag").get<bool>());
    CHECK_FALSE(doc.at("off").get<bool>());
    CHECK(doc.at("num").get<int>() == -17);
    CHECK(doc.at("pi").get<double>() == 3.25);
    CHECK(doc.at("name").get<std::string>() == "with \"escapes\" and \n newline");
    CHECK(doc.at("multi").size() == 3);
    CHECK(doc.at("dotted").at("key").get<int>() == 9);
}

TEST_CASE("toml errors carry line numbers") {
    try {
        config::parse_toml("ok = 1\nbroken ~ 2\n");
        FAIL("expected parse error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("environment interpolation") {
    setenv("DRAFTFORGE_TEST_HOST", "10.0.0.5", 1);
    auto doc = config::parse_toml("url = \"http://${DRAFTFORGE_TEST_HOST}:9000\"\n");
    CHECK(doc.at("url").get<std::string>() == "http://10.0.0.5:9000");
    unsetenv("DRAFTFORGE_TEST_HOST");
    CHECK_THROWS_AS(config::parse_toml("url = \"${DRAFTFORGE_TEST_HOST_MISSING}\"\n"), Error);
}

TEST_CASE("run config resolution and defaults") {
    auto cfg = config::RunConfig::from_toml(config::parse_toml(kSampleConfig));
    CHECK(cfg.seeds == std::vector<std::int64_t>{42, 137});
    CHECK(cfg.endpoint("learner").max_in_flight == 8);
    // default API-key env var name is derived from the endpoint name
    CHECK(cfg.endpoint("drafter").api_key_env == "DRAFTFORGE_API_KEY_DRAFTER");
    CHECK(cfg.profile("draft").n == 32);
    // profiles not mentioned in the file keep their defaults
    CHECK(cfg.profile("greedy").temperature == 0.0);
    CHECK(cfg.profile("eval_sampling").max_tokens == 4096);
    CHECK(cfg.grpo.group_size == 16);
    CHECK(cfg.grpo.kl_beta == 0.0);
    CHECK(cfg.toy.num_contexts == 4);
    CHECK_THROWS_AS(cfg.endpoint("nonexistent"), Error);
    CHECK_THROWS_AS(cfg.profile("nonexistent"), Error);
}

TEST_CASE("seeds must be non-empty") {
    CHECK_THROWS_AS(config::RunConfig::from_toml(config::parse_toml("seeds = []\n")), Error);
}

TEST_CASE("config hash tracks effective settings") {
    auto a = config::RunConfig::from_toml(config::parse_toml(kSampleConfig));
    auto b = config::RunConfig::from_toml(config::parse_toml(kSampleConfig));
    CHECK(a.hash() == b.hash());
    std::string changed = kSampleConfig;
    auto pos = changed.find("group_size = 16");
    changed.replace(pos, 15, "group_size = 32");
    auto c = config::RunConfig::from_toml(config::parse_toml(changed));
    CHECK(a.hash() != c.hash());
}

TEST_CASE("config file loading") {
    testutil::TempDir tmp;
    const auto path = tmp / "run.toml";
    std::ofstream(path) << kSampleConfig;
    auto cfg = config::RunConfig::from_file(path);
    CHECK(cfg.paths.corpus_dir == std::filesystem::path("work/corpus"));
    CHECK_THROWS_AS(config::RunConfig::from_file(tmp / "missing.toml"), Error);
}
