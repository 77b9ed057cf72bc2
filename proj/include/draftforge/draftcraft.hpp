#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "draftforge/common.hpp"
#include "draftforge/corpus.hpp"
#include "draftforge/rollout.hpp"
#include "draftforge/verifier.hpp"

namespace draftforge::draftcraft {

enum class SelectionTier { wrong_nontrivial, wrong_strict_only, any_fallback, correct };

inline std::string to_string(SelectionTier t) {
    switch (t) {
        case SelectionTier::wrong_nontrivial: return "wrong_nontrivial";
        case SelectionTier::wrong_strict_only: return "wrong_strict_only";
        case SelectionTier::any_fallback: return "any_fallback";
        case SelectionTier::correct: return "correct";
    }
    return "?";
}

inline SelectionTier selection_tier_from_string(const std::string& s) {
    if (s == "wrong_nontrivial") return SelectionTier::wrong_nontrivial;
    if (s == "wrong_strict_only") return SelectionTier::wrong_strict_only;
    if (s == "any_fallback") return SelectionTier::any_fallback;
    if (s == "correct") return SelectionTier::correct;
    throw Error("unknown selection tier '" + s + "'");
}

struct DraftRecord {
    std::string problem_id;
    std::string draft_text;
    SelectionTier selection_tier = SelectionTier::any_fallback;
    bool quasi_correct = false;
    bool strict_correct = false;

    jsonl::Json to_json() const {
        jsonl::Json j;
        j["problem_id"] = problem_id;
        j["draft_text"] = draft_text;
        j["selection_tier"] = to_string(selection_tier);
        j["quasi_correct"] = quasi_correct;
        j["strict_correct"] = strict_correct;
        return j;
    }

    static DraftRecord from_json(const jsonl::Json& j) {
        DraftRecord d;
        d.problem_id = j.at("problem_id").get<std::string>();
        d.draft_text = j.at("draft_text").get<std::string>();
        d.selection_tier = selection_tier_from_string(j.at("selection_tier").get<std::string>());
        d.quasi_correct = j.at("quasi_correct").get<bool>();
        d.strict_correct = j.at("strict_correct").get<bool>();
        return d;
    }
};

enum class Variant { nodraft, matched_wrong, matched_correct, mismatched_wrong, mismatched_correct };

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::nodraft: return "nodraft";
        case Variant::matched_wrong: return "matched_wrong";
        case Variant::matched_correct: return "matched_correct";
        case Variant::mismatched_wrong: return "mismatched_wrong";
        case Variant::mismatched_correct: return "mismatched_correct";
    }
    return "?";
}

inline Variant variant_from_string(const std::string& s) {
    if (s == "nodraft") return Variant::nodraft;
    if (s == "matched_wrong") return Variant::matched_wrong;
    if (s == "matched_correct") return Variant::matched_correct;
    if (s == "mismatched_wrong") return Variant::mismatched_wrong;
    if (s == "mismatched_correct") return Variant::mismatched_correct;
    throw Error("unknown variant '" + s + "'");
}

inline bool is_mismatched(Variant v) {
    return v == Variant::mismatched_wrong || v == Variant::mismatched_correct;
}

inline bool is_wrong_content(Variant v) {
    return v == Variant::matched_wrong || v == Variant::mismatched_wrong;
}

struct PairedExample {
    std::string problem_id;
    std::string draft_source_id;  // "N/A" for the nodraft variant
    Variant variant = Variant::nodraft;
    std::string prompt_text;
    std::string gold_answer;
    bool draft_truncated = false;

    jsonl::Json to_json() const {
        jsonl::Json j;
        j["problem_id"] = problem_id;
        j["draft_source_id"] = draft_source_id;
        j["variant"] = to_string(variant);
        j["prompt_text"] = prompt_text;
        j["gold_answer"] = gold_answer;
        if (draft_truncated) j["draft_truncated"] = true;
        return j;
    }

    static PairedExample from_json(const jsonl::Json& j) {
        PairedExample e;
        e.problem_id = j.at("problem_id").get<std::string>();
        e.draft_source_id = j.at("draft_source_id").get<std::string>();
        e.variant = variant_from_string(j.at("variant").get<std::string>());
        e.prompt_text = j.at("prompt_text").get<std::string>();
        e.gold_answer = j.at("gold_answer").get<std::string>();
        if (j.contains("draft_truncated")) e.draft_truncated = j.at("draft_truncated").get<bool>();
        return e;
    }
};

namespace detail {

struct ScoredSample {
    const infer::RolloutRecord* record;
    bool quasi;
    bool strict;
};

inline std::vector<ScoredSample> score_samples(const std::vector<infer::RolloutRecord>& samples,
                                               std::string_view gold) {
    std::vector<ScoredSample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        ScoredSample sc;
        sc.record = &s;
        sc.quasi = s.correct_quasi ? *s.correct_quasi : verifier::quasi_correct(s.text, gold);
        sc.strict = s.correct_strict ? *s.correct_strict : verifier::strict_correct(s.text, gold);
        out.push_back(sc);
    }
    return out;
}

inline DraftRecord make_record(const ScoredSample& s, SelectionTier tier) {
    return DraftRecord{s.record->problem_id, s.record->text, tier, s.quasi, s.strict};
}

}  // namespace detail

// Uniform choice among quasi-wrong samples; falls back to samples rejected by
// the strict boxed-only criterion, then to any completion.
inline DraftRecord select_wrong_draft(const std::vector<infer::RolloutRecord>& samples,
                                      std::string_view gold, std::uint64_t rng_seed) {
    if (samples.empty()) throw Error("select_wrong_draft: no samples");
    auto scored = detail::score_samples(samples, gold);
    std::mt19937_64 rng(rng_seed);

    std::vector<const detail::ScoredSample*> pool;
    for (const auto& s : scored) {
        if (!s.quasi) pool.push_back(&s);
    }
    if (!pool.empty()) {
        return detail::make_record(*pool[uniform_below(rng, pool.size())],
                                   SelectionTier::wrong_nontrivial);
    }
    for (const auto& s : scored) {
        if (!s.strict) pool.push_back(&s);
    }
    if (!pool.empty()) {
        return detail::make_record(*pool[uniform_below(rng, pool.size())],
                                   SelectionTier::wrong_strict_only);
    }
    for (const auto& s : scored) pool.push_back(&s);
    return detail::make_record(*pool[uniform_below(rng, pool.size())], SelectionTier::any_fallback);
}

// Uniform choice among strictly correct samples, falling back to quasi-correct
// ones. No correct sample at all is an exclusion, not an error.
inline std::optional<DraftRecord> select_correct_draft(const std::vector<infer::RolloutRecord>& samples,
                                                       std::string_view gold, std::uint64_t rng_seed) {
    if (samples.empty()) throw Error("select_correct_draft: no samples");
    auto scored = detail::score_samples(samples, gold);
    std::mt19937_64 rng(rng_seed);

    std::vector<const detail::ScoredSample*> pool;
    for (const auto& s : scored) {
        if (s.strict) pool.push_back(&s);
    }
    if (pool.empty()) {
        for (const auto& s : scored) {
            if (s.quasi) pool.push_back(&s);
        }
    }
    if (pool.empty()) return std::nullopt;
    return detail::make_record(*pool[uniform_below(rng, pool.size())], SelectionTier::correct);
}

struct Derangement {
    std::map<std::string, std::string> mapping;
    std::int64_t seed = 0;

    jsonl::Json to_json() const {
        jsonl::Json j;
        j["seed"] = seed;
        jsonl::Json map = jsonl::Json::object();
        for (const auto& [from, to] : mapping) map[from] = to;
        j["mapping"] = map;
        return j;
    }

    static Derangement from_json(const jsonl::Json& j) {
        Derangement d;
        d.seed = j.at("seed").get<std::int64_t>();
        for (const auto& [from, to] : j.at("mapping").items()) d.mapping[from] = to.get<std::string>();
        return d;
    }
};

// Uniform over derangements via rejection sampling of uniform permutations:
// resample whenever any fixed point remains (P(success) -> 1/e, so the
// expected number of tries stays below 3).
inline Derangement derange(const std::vector<std::string>& ids, std::uint64_t seed) {
    if (ids.size() < 2) throw Error("derange: need at least 2 ids (no derangement exists for n=1)");
    std::set<std::string> unique(ids.begin(), ids.end());
    if (unique.size() != ids.size()) throw Error("derange: ids must be unique");

    std::mt19937_64 rng(derive_seed(seed, "derangement"));
    const std::size_t n = ids.size();
    std::vector<std::size_t> perm(n);
    while (true) {
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        for (std::size_t i = n - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_below(rng, i + 1));
            std::swap(perm[i], perm[j]);
        }
        bool has_fixed_point = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (perm[i] == i) {
                has_fixed_point = true;
                break;
            }
        }
        if (!has_fixed_point) break;
    }

    Derangement d;
    d.seed = static_cast<std::int64_t>(seed);
    for (std::size_t i = 0; i < n; ++i) d.mapping[ids[i]] = ids[perm[i]];
    return d;
}

enum class PromptFormat { nodraft_template, inst_chat };

inline PromptFormat prompt_format_from_string(const std::string& s) {
    if (s == "nodraft_template") return PromptFormat::nodraft_template;
    if (s == "inst_chat") return PromptFormat::inst_chat;
    throw Error("unknown prompt format '" + s + "'");
}

inline constexpr std::string_view kDraftPlaceholder = "N/A";

inline std::string render_prompt(const corpus::Problem& problem, std::string_view draft_text,
                                 PromptFormat format) {
    if (format == PromptFormat::inst_chat) {
        return "[INST] " + problem.statement +
               "\n\nPlease reason step by step, and put your final answer within \\boxed{}. [/INST]";
    }
    std::string out = "Problem: " + problem.statement + "\n\nThinking: ";
    out += draft_text;
    out +=
        "\n\nThe thinking section may contain errors. Solve the math problem step by step. "
        "Write your own correct solution. Put your final answer within \\boxed{}.\n\nCorrect Solution:";
    return out;
}

// Prompt budget from the 3072-token limit under a 4 chars/token heuristic;
// only the draft tail is truncated, never the problem statement.
inline constexpr std::size_t kMaxPromptChars = 3072 * 4;

struct RenderedPrompt {
    std::string text;
    bool draft_truncated = false;
};

inline RenderedPrompt render_prompt_budgeted(const corpus::Problem& problem, std::string_view draft_text,
                                             PromptFormat format,
                                             std::size_t max_chars = kMaxPromptChars) {
    RenderedPrompt r;
    r.text = render_prompt(problem, draft_text, format);
    if (format == PromptFormat::nodraft_template && r.text.size() > max_chars) {
        const std::size_t excess = r.text.size() - max_chars;
        const std::size_t keep = draft_text.size() > excess ? draft_text.size() - excess : 0;
        r.text = render_prompt(problem, draft_text.substr(0, keep), format);
        r.draft_truncated = true;
    }
    return r;
}

namespace detail {

inline void validate_derangement_over(const Derangement& derangement,
                                      const std::vector<corpus::Problem>& problems) {
    std::set<std::string> ids;
    for (const auto& p : problems) ids.insert(p.id);
    if (derangement.mapping.size() != ids.size())
        throw Error("build_dataset: derangement domain does not match the problem set");
    std::set<std::string> image;
    for (const auto& [from, to] : derangement.mapping) {
        if (!ids.count(from) || !ids.count(to))
            throw Error("build_dataset: derangement mentions unknown id '" + from + "' -> '" + to + "'");
        if (from == to) throw Error("build_dataset: derangement has fixed point at '" + from + "'");
        image.insert(to);
    }
    if (image.size() != ids.size()) throw Error("build_dataset: derangement is not a bijection");
}

}  // namespace detail

// One PairedExample per problem. Mismatched variants read the draft of
// sigma(x); matched variants the problem's own draft; nodraft ignores drafts.
inline std::vector<PairedExample> build_dataset(const std::vector<corpus::Problem>& problems,
                                                const std::map<std::string, DraftRecord>& drafts,
                                                Variant variant,
                                                const std::optional<Derangement>& derangement) {
    if (is_mismatched(variant)) {
        if (!derangement) throw Error("build_dataset: mismatched variants require a derangement");
        detail::validate_derangement_over(*derangement, problems);
    }
    std::vector<PairedExample> out;
    out.reserve(problems.size());
    for (const auto& p : problems) {
        PairedExample e;
        e.problem_id = p.id;
        e.variant = variant;
        e.gold_answer = p.gold_answer;
        if (variant == Variant::nodraft) {
            e.draft_source_id = std::string(kDraftPlaceholder);
            auto r = render_prompt_budgeted(p, kDraftPlaceholder, PromptFormat::nodraft_template);
            e.prompt_text = std::move(r.text);
            e.draft_truncated = r.draft_truncated;
        } else {
            e.draft_source_id = is_mismatched(variant) ? derangement->mapping.at(p.id) : p.id;
            auto it = drafts.find(e.draft_source_id);
            if (it == drafts.end())
                throw Error("build_dataset: missing draft for id '" + e.draft_source_id + "'");
            auto r = render_prompt_budgeted(p, it->second.draft_text, PromptFormat::nodraft_template);
            e.prompt_text = std::move(r.text);
            e.draft_truncated = r.draft_truncated;
        }
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace draftforge::draftcraft
