#include <catch2/catch_amalgamated.hpp>

#include <string>

#include "draftforge/rigor.hpp"
#include "support/mock_server.hpp"

using namespace draftforge;
using rigor::Resolution;
using rigor::Tier;

namespace {

corpus::Problem problem() {
    corpus::Problem p;
    p.id = "2026-P8";
    p.statement = "Find the remainder when N is divided by 1000.";
    p.gold_answer = "244";
    p.split = corpus::Split::aime2026;
    return p;
}

infer::RolloutRecord correct_rollout() {
    infer::RolloutRecord r;
    r.problem_id = "2026-P8";
    r.seed = 42;
    r.sample_index = 5;
    r.text = "A careful derivation ending in \\boxed{244}";
    r.correct_strict = true;
    return r;
}

infer::ModelEndpoint judge_endpoint(const testutil::MockServer& server, const std::string& name) {
    infer::ModelEndpoint e;
    e.base_url = server.base_url();
    e.model_name = name;
    e.retry_backoff_ms = 1;
    e.timeout_seconds = 10;
    return e;
}

testutil::Json verdict_reply(const std::string& text) {
    testutil::Json reply;
    reply["choices"] = testutil::Json::array();
    testutil::Json choice;
    choice["text"] = text;
    choice["finish_reason"] = "stop";
    reply["choices"].push_back(choice);
    return reply;
}

rigor::RigorVerdict make_verdict(Tier tier, const std::string& judge) {
    rigor::RigorVerdict v;
    v.rollout_id = "2026-P8#42#5";
    v.judge_id = judge;
    v.tier = tier;
    return v;
}

}  // namespace

TEST_CASE("verdict parsing") {
    CHECK(rigor::parse_verdict("VERDICT: rigorous\nAll steps valid.") == Tier::rigorous);
    CHECK(rigor::parse_verdict("verdict: mostly — minor slip in step 3") == Tier::mostly);
    CHECK(rigor::parse_verdict("Verdict: wrong. The lifting is invalid.") == Tier::wrong);
    CHECK(rigor::parse_verdict("VERDICT: not sure") == Tier::not_sure);
    CHECK_FALSE(rigor::parse_verdict("I think it is fine."));
    CHECK_FALSE(rigor::parse_verdict(""));
}

TEST_CASE("judge prompt is blind") {
    const auto prompt = rigor::build_judge_prompt(problem(), correct_rollout());
    CHECK(prompt.find("Find the remainder") != std::string::npos);
    CHECK(prompt.find("244") != std::string::npos);
    CHECK(prompt.find("careful derivation") != std::string::npos);
    // nothing that identifies the producing model or variant
    for (const auto& forbidden :
         {"mismatched", "matched", "nodraft", "learner", "drafter", "mock-judge", "seed"}) {
        CHECK(prompt.find(forbidden) == std::string::npos);
    }
}

TEST_CASE("judge_rollout parses a clean verdict") {
    testutil::MockServer server([](const testutil::Json&) {
        return verdict_reply("VERDICT: wrong\nThe asserted lifting is incorrect.");
    });
    infer::CompletionClient judge(judge_endpoint(server, "judge-a"));
    auto v = rigor::judge_rollout(correct_rollout(), problem(), judge);
    CHECK(v.tier == Tier::wrong);
    CHECK(v.judge_id == "judge-a");
    CHECK(v.rollout_id == "2026-P8#42#5");
    CHECK(server.request_count() == 1);
}

TEST_CASE("unparseable judge replies retry once, then not_sure") {
    testutil::MockServer server([](const testutil::Json&) { return verdict_reply("no tier here"); });
    infer::CompletionClient judge(judge_endpoint(server, "judge-a"));
    auto v = rigor::judge_rollout(correct_rollout(), problem(), judge);
    CHECK(v.tier == Tier::not_sure);
    CHECK(server.request_count() == 2);
}

TEST_CASE("judge endpoint failure becomes not_sure with a note") {
    testutil::MockServer server;
    server.set_fail_all(true);
    infer::CompletionClient judge(judge_endpoint(server, "judge-a"));
    auto v = rigor::judge_rollout(correct_rollout(), problem(), judge);
    CHECK(v.tier == Tier::not_sure);
    CHECK(v.rationale.find("failed") != std::string::npos);
}

TEST_CASE("only strictly correct rollouts may be judged") {
    testutil::MockServer server;
    infer::CompletionClient judge(judge_endpoint(server, "judge-a"));
    auto r = correct_rollout();
    r.correct_strict = false;
    CHECK_THROWS_AS(rigor::judge_rollout(r, problem(), judge), Error);
}

TEST_CASE("consensus rules") {
    SECTION("exact agreement") {
        auto r = rigor::consensus({make_verdict(Tier::wrong, "a"), make_verdict(Tier::wrong, "b")});
        CHECK(r.final_tier == Tier::wrong);
        CHECK(r.resolution == Resolution::consensus);
    }
    SECTION("disagreement goes to the escalation judge") {
        auto r = rigor::consensus({make_verdict(Tier::rigorous, "a"), make_verdict(Tier::wrong, "b")},
                                  [] { return make_verdict(Tier::wrong, "c"); });
        CHECK(r.final_tier == Tier::wrong);
        CHECK(r.resolution == Resolution::escalated);
    }
    SECTION("rigorous vs mostly is still a disagreement (no tier merging)") {
        auto r = rigor::consensus({make_verdict(Tier::rigorous, "a"), make_verdict(Tier::mostly, "b")},
                                  [] { return make_verdict(Tier::mostly, "c"); });
        CHECK(r.resolution == Resolution::escalated);
        CHECK(r.final_tier == Tier::mostly);
    }
    SECTION("no escalation judge: manual, verdicts preserved") {
        auto r = rigor::consensus({make_verdict(Tier::mostly, "a"), make_verdict(Tier::wrong, "b")});
        CHECK(r.resolution == Resolution::manual);
        REQUIRE(r.verdicts.size() == 2);
        CHECK(r.verdicts[0].tier == Tier::mostly);
        CHECK(r.verdicts[1].tier == Tier::wrong);
    }
    SECTION("exactly two primary verdicts required") {
        CHECK_THROWS_AS(rigor::consensus({make_verdict(Tier::wrong, "a")}), Error);
        CHECK_THROWS_AS(rigor::consensus({make_verdict(Tier::wrong, "a"), make_verdict(Tier::wrong, "b"),
                                          make_verdict(Tier::wrong, "c")}),
                        Error);
    }
    SECTION("deterministic: same verdicts, same final tier") {
        for (int i = 0; i < 5; ++i) {
            auto r = rigor::consensus({make_verdict(Tier::mostly, "a"), make_verdict(Tier::mostly, "b")});
            CHECK(r.final_tier == Tier::mostly);
        }
    }
}

TEST_CASE("scan_summary counts and percentages") {
    std::vector<rigor::ConsensusResult> results;
    auto add = [&](Tier t, int count) {
        for (int i = 0; i < count; ++i) {
            rigor::ConsensusResult r;
            r.rollout_id = "r" + std::to_string(results.size());
            r.final_tier = t;
            results.push_back(r);
        }
    };
    add(Tier::wrong, 231);
    add(Tier::rigorous, 6);
    add(Tier::mostly, 2);

    auto s = rigor::scan_summary(results);
    CHECK(s.total == 239);
    CHECK(s.wrong == 231);
    CHECK(s.rigorous == 6);
    CHECK(s.mostly == 2);
    CHECK(s.valid_enough() == 8);
    CHECK(s.rigorous + s.mostly + s.wrong + s.not_sure == s.total);  // conservation
    CHECK(s.pct(s.wrong) == Catch::Approx(96.7).margin(0.05));

    const auto md = s.to_markdown();
    CHECK(md.find("| 231 | 96.7% |") != std::string::npos);
    CHECK(md.find("| 8 | 3.3% |") != std::string::npos);
    CHECK(md.find("| Total | 239 | 100% |") != std::string::npos);

    SECTION("all rigorous") {
        std::vector<rigor::ConsensusResult> all;
        for (int i = 0; i < 5; ++i) {
            rigor::ConsensusResult r;
            r.final_tier = Tier::rigorous;
            all.push_back(r);
        }
        auto sa = rigor::scan_summary(all);
        CHECK(sa.pct(sa.valid_enough()) == Catch::Approx(100.0));
    }
    SECTION("empty input") {
        auto se = rigor::scan_summary({});
        CHECK(se.total == 0);
        CHECK(se.to_markdown().find("| Total | 0 | 100% |") != std::string::npos);
    }
}

TEST_CASE("verdicts and consensus round-trip through json") {
    auto v = make_verdict(Tier::mostly, "judge-b");
    v.rationale = "minor algebra slip";
    auto v2 = rigor::RigorVerdict::from_json(v.to_json());
    CHECK(v2.tier == Tier::mostly);
    CHECK(v2.rationale == v.rationale);

    auto r = rigor::consensus({make_verdict(Tier::wrong, "a"), make_verdict(Tier::wrong, "b")});
    auto r2 = rigor::ConsensusResult::from_json(r.to_json());
    CHECK(r2.final_tier == Tier::wrong);
    CHECK(r2.resolution == Resolution::consensus);
    CHECK(r2.verdicts.size() == 2);
}
