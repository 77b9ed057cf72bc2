#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "draftforge/draftcraft.hpp"

using namespace draftforge;
using draftcraft::SelectionTier;
using draftcraft::Variant;

namespace {

infer::RolloutRecord sample(const std::string& id, int index, const std::string& text) {
    infer::RolloutRecord r;
    r.problem_id = id;
    r.sample_index = index;
    r.text = text;
    return r;
}

corpus::Problem problem(const std::string& id, const std::string& statement,
                        const std::string& gold = "42") {
    corpus::Problem p;
    p.id = id;
    p.statement = statement;
    p.gold_answer = gold;
    p.level = 3;
    p.split = corpus::Split::train;
    return p;
}

}  // namespace

TEST_CASE("select_wrong_draft tier priority") {
    const std::string gold = "42";

    SECTION("quasi-wrong samples take priority") {
        std::vector<infer::RolloutRecord> samples;
        for (int i = 0; i < 32; ++i) {
            // 10 quasi-wrong, 22 correct
            samples.push_back(sample("p", i,
                                     i < 10 ? "the answer is 999" : "\\boxed{42}"));
        }
        std::set<std::string> seen;
        for (std::uint64_t seed = 0; seed < 40; ++seed) {
            auto d = draftcraft::select_wrong_draft(samples, gold, seed);
            CHECK(d.selection_tier == SelectionTier::wrong_nontrivial);
            CHECK_FALSE(d.quasi_correct);
            seen.insert(d.draft_text);
            CHECK(d.draft_text == "the answer is 999");
        }
    }
    SECTION("fall back to strict-rejected when everything is quasi-correct") {
        std::vector<infer::RolloutRecord> samples;
        for (int i = 0; i < 32; ++i) {
            // 3 unboxed (quasi-only), 29 boxed
            samples.push_back(sample("p", i, i < 3 ? "the answer is 42 (#" + std::to_string(i) + ")"
                                                   : "\\boxed{42}"));
        }
        auto d = draftcraft::select_wrong_draft(samples, gold, 7);
        CHECK(d.selection_tier == SelectionTier::wrong_strict_only);
        CHECK(d.quasi_correct);
        CHECK_FALSE(d.strict_correct);
        CHECK(d.draft_text.find("the answer is 42") == 0);
    }
    SECTION("finally any completion") {
        std::vector<infer::RolloutRecord> samples;
        for (int i = 0; i < 32; ++i) samples.push_back(sample("p", i, "\\boxed{42}"));
        auto d = draftcraft::select_wrong_draft(samples, gold, 3);
        CHECK(d.selection_tier == SelectionTier::any_fallback);
        CHECK(d.strict_correct);
    }
    SECTION("empty samples are a hard error") {
        CHECK_THROWS_AS(draftcraft::select_wrong_draft({}, gold, 0), Error);
    }
    SECTION("deterministic given the seed") {
        std::vector<infer::RolloutRecord> samples;
        for (int i = 0; i < 32; ++i)
            samples.push_back(sample("p", i, "the answer is " + std::to_string(100 + i)));
        auto a = draftcraft::select_wrong_draft(samples, gold, 99);
        auto b = draftcraft::select_wrong_draft(samples, gold, 99);
        CHECK(a.draft_text == b.draft_text);
    }
}

TEST_CASE("select_correct_draft") {
    const std::string gold = "42";

    SECTION("strictly correct first") {
        std::vector<infer::RolloutRecord> samples;
        for (int i = 0; i < 32; ++i) {
            samples.push_back(sample("p", i, i < 5 ? "\\boxed{42}" : "the answer is 999"));
        }
        auto d = draftcraft::select_correct_draft(samples, gold, 1);
        REQUIRE(d);
        CHECK(d->selection_tier == SelectionTier::correct);
        CHECK(d->strict_correct);
    }
    SECTION("quasi-correct fallback") {
        std::vector<infer::RolloutRecord> samples;
        for (int i = 0; i < 8; ++i) {
            samples.push_back(sample("p", i, i < 2 ? "the answer is 42" : "garbage"));
        }
        auto d = draftcraft::select_correct_draft(samples, gold, 1);
        REQUIRE(d);
        CHECK(d->quasi_correct);
        CHECK_FALSE(d->strict_correct);
    }
    SECTION("no correct sample is an exclusion, not a crash") {
        std::vector<infer::RolloutRecord> samples;
        for (int i = 0; i < 8; ++i) samples.push_back(sample("p", i, "the answer is 999"));
        CHECK_FALSE(draftcraft::select_correct_draft(samples, gold, 1));
    }
}

TEST_CASE("derange basics") {
    SECTION("two ids swap") {
        auto d = draftcraft::derange({"a", "b"}, 7);
        CHECK(d.mapping.at("a") == "b");
        CHECK(d.mapping.at("b") == "a");
    }
    SECTION("no fixed points, bijective at n=8800") {
        std::vector<std::string> ids;
        for (int i = 0; i < 8800; ++i) ids.push_back("p" + std::to_string(i));
        auto d = draftcraft::derange(ids, 42);
        REQUIRE(d.mapping.size() == ids.size());
        std::set<std::string> image;
        for (const auto& [from, to] : d.mapping) {
            CHECK(from != to);
            image.insert(to);
        }
        CHECK(image.size() == ids.size());  // pigeonhole: image = domain
    }
    SECTION("deterministic given the seed") {
        std::vector<std::string> ids;
        for (int i = 0; i < 100; ++i) ids.push_back("p" + std::to_string(i));
        auto a = draftcraft::derange(ids, 5);
        auto b = draftcraft::derange(ids, 5);
        CHECK(a.mapping == b.mapping);
        auto c = draftcraft::derange(ids, 6);
        CHECK(a.mapping != c.mapping);
    }
    SECTION("n=1 and duplicates are hard errors") {
        CHECK_THROWS_AS(draftcraft::derange({"only"}, 0), Error);
        CHECK_THROWS_AS(draftcraft::derange({"a", "a", "b"}, 0), Error);
    }
}

TEST_CASE("render_prompt emits the exact templates") {
    auto p = problem("p1", "What is 2+2?", "4");

    const std::string with_draft =
        draftcraft::render_prompt(p, "I think it is 5 because reasons.", draftcraft::PromptFormat::nodraft_template);
    CHECK(with_draft ==
          "Problem: What is 2+2?\n\n"
          "Thinking: I think it is 5 because reasons.\n\n"
          "The thinking section may contain errors. Solve the math problem step by step. "
          "Write your own correct solution. Put your final answer within \\boxed{}.\n\n"
          "Correct Solution:");

    const std::string eval_time =
        draftcraft::render_prompt(p, draftcraft::kDraftPlaceholder, draftcraft::PromptFormat::nodraft_template);
    CHECK(eval_time.find("Thinking: N/A\n\n") != std::string::npos);

    const std::string inst = draftcraft::render_prompt(p, "", draftcraft::PromptFormat::inst_chat);
    CHECK(inst ==
          "[INST] What is 2+2?\n\n"
          "Please reason step by step, and put your final answer within \\boxed{}. [/INST]");
}

TEST_CASE("prompt budget truncates only the draft tail") {
    auto p = problem("p1", "Short statement.");
    const std::string long_draft(40000, 'x');
    auto r = draftcraft::render_prompt_budgeted(p, long_draft, draftcraft::PromptFormat::nodraft_template);
    CHECK(r.draft_truncated);
    CHECK(r.text.size() <= draftcraft::kMaxPromptChars);
    CHECK(r.text.find("Short statement.") != std::string::npos);
    CHECK(r.text.find("Correct Solution:") != std::string::npos);

    auto small = draftcraft::render_prompt_budgeted(p, "tiny", draftcraft::PromptFormat::nodraft_template);
    CHECK_FALSE(small.draft_truncated);
}

TEST_CASE("build_dataset per variant") {
    std::vector<corpus::Problem> problems;
    std::map<std::string, draftcraft::DraftRecord> drafts;
    std::vector<std::string> ids;
    for (int i = 0; i < 88; ++i) {
        const std::string id = "p" + std::to_string(i);
        problems.push_back(problem(id, "statement for problem " + std::to_string(i)));
        drafts[id] = draftcraft::DraftRecord{id, "draft text " + std::to_string(i),
                                             SelectionTier::wrong_nontrivial, false, false};
        ids.push_back(id);
    }
    auto sigma = draftcraft::derange(ids, 42);

    SECTION("mismatched_wrong pairs every problem with another problem's draft") {
        auto ds = draftcraft::build_dataset(problems, drafts, Variant::mismatched_wrong, sigma);
        REQUIRE(ds.size() == problems.size());
        for (const auto& e : ds) {
            CHECK(e.draft_source_id != e.problem_id);
            CHECK(e.variant == Variant::mismatched_wrong);
            CHECK(e.prompt_text.find(drafts.at(e.draft_source_id).draft_text) != std::string::npos);
        }
    }
    SECTION("nodraft uses the N/A placeholder everywhere") {
        auto ds = draftcraft::build_dataset(problems, {}, Variant::nodraft, std::nullopt);
        REQUIRE(ds.size() == problems.size());
        for (const auto& e : ds) {
            CHECK(e.draft_source_id == "N/A");
            CHECK(e.prompt_text.find("Thinking: N/A") != std::string::npos);
        }
    }
    SECTION("matched_wrong pairs every problem with its own draft") {
        auto ds = draftcraft::build_dataset(problems, drafts, Variant::matched_wrong, std::nullopt);
        for (const auto& e : ds) CHECK(e.draft_source_id == e.problem_id);
    }
    SECTION("the statement appears verbatim exactly once in each prompt") {
        auto ds = draftcraft::build_dataset(problems, drafts, Variant::mismatched_wrong, sigma);
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const auto& stmt = problems[i].statement;
            std::size_t count = 0, pos = 0;
            while ((pos = ds[i].prompt_text.find(stmt, pos)) != std::string::npos) {
                ++count;
                pos += stmt.size();
            }
            CHECK(count == 1);
        }
    }
    SECTION("missing draft names the id") {
        drafts.erase(sigma.mapping.at("p0"));
        try {
            draftcraft::build_dataset(problems, drafts, Variant::mismatched_wrong, sigma);
            FAIL("expected missing-draft error");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find(sigma.mapping.at("p0")) != std::string::npos);
        }
    }
    SECTION("mismatched without a derangement is an error") {
        CHECK_THROWS_AS(draftcraft::build_dataset(problems, drafts, Variant::mismatched_wrong, std::nullopt),
                        Error);
    }
    SECTION("derangement over the wrong id set is rejected") {
        auto other = draftcraft::derange({"x", "y", "z"}, 1);
        CHECK_THROWS_AS(draftcraft::build_dataset(problems, drafts, Variant::mismatched_wrong, other),
                        Error);
    }
}

TEST_CASE("records round-trip through json") {
    draftcraft::DraftRecord d{"p1", "some draft", SelectionTier::wrong_strict_only, true, false};
    auto d2 = draftcraft::DraftRecord::from_json(d.to_json());
    CHECK(d2.problem_id == d.problem_id);
    CHECK(d2.selection_tier == d.selection_tier);
    CHECK(d2.quasi_correct == d.quasi_correct);

    draftcraft::PairedExample e{"p1", "p2", Variant::mismatched_wrong, "prompt", "42", false};
    auto e2 = draftcraft::PairedExample::from_json(e.to_json());
    CHECK(e2.draft_source_id == "p2");
    CHECK(e2.variant == Variant::mismatched_wrong);

    auto sigma = draftcraft::derange({"a", "b", "c"}, 3);
    auto sigma2 = draftcraft::Derangement::from_json(sigma.to_json());
    CHECK(sigma2.mapping == sigma.mapping);
    CHECK(sigma2.seed == sigma.seed);
}
