#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "draftforge/config.hpp"
#include "draftforge/corpus.hpp"
#include "draftforge/draftcraft.hpp"
#include "draftforge/evalkit.hpp"
#include "draftforge/grpo.hpp"
#include "draftforge/inference.hpp"
#include "draftforge/rigor.hpp"

namespace draftforge::pipeline {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitDependency = 2;

// Wrong arguments or config: exit code 1.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Missing prior-stage artifact: exit code 2, message names the stage to run.
class DependencyError : public Error {
public:
    using Error::Error;
};

enum class Stage {
    curate,
    assign,
    build,
    rollout,
    train_toy,
    eval_greedy,
    eval_passk,
    analyze,
    solve_matrix,
    rigor_scan,
    report
};

inline std::string to_string(Stage s) {
    switch (s) {
        case Stage::curate: return "curate";
        case Stage::assign: return "assign";
        case Stage::build: return "build";
        case Stage::rollout: return "rollout";
        case Stage::train_toy: return "train-toy";
        case Stage::eval_greedy: return "eval-greedy";
        case Stage::eval_passk: return "eval-passk";
        case Stage::analyze: return "analyze";
        case Stage::solve_matrix: return "solve-matrix";
        case Stage::rigor_scan: return "rigor-scan";
        case Stage::report: return "report";
    }
    return "?";
}

inline Stage stage_from_string(const std::string& s) {
    static const std::map<std::string, Stage> names = {
        {"curate", Stage::curate},         {"assign", Stage::assign},
        {"build", Stage::build},           {"rollout", Stage::rollout},
        {"train-toy", Stage::train_toy},   {"eval-greedy", Stage::eval_greedy},
        {"eval-passk", Stage::eval_passk}, {"analyze", Stage::analyze},
        {"solve-matrix", Stage::solve_matrix}, {"rigor-scan", Stage::rigor_scan},
        {"report", Stage::report}};
    auto it = names.find(s);
    if (it == names.end()) throw ValidationError("unknown stage '" + s + "'");
    return it->second;
}

struct StageOverrides {
    std::optional<std::int64_t> seed;
    std::optional<std::string> variant;
    std::vector<long long> ks;
    bool force = false;
    std::optional<std::string> split;                 // corpus file stem, e.g. "train", "math500"
    std::optional<std::string> endpoint;              // endpoint name for rollout
    std::optional<std::string> profile;               // sampling profile for rollout
    std::optional<std::string> format;                // "nodraft_template" | "inst_chat"
    std::vector<std::string> judges;                  // rigor-scan judge endpoint names
    std::optional<std::string> escalation;            // rigor-scan escalation endpoint name
    std::optional<std::string> base;                  // analyze: baseline outcomes file
    std::optional<std::string> ours;                  // analyze: treated outcomes file
    std::vector<std::pair<std::string, std::string>> inputs;  // name=file pairs
    std::optional<long long> k;
    std::optional<int> limit;                         // rigor-scan per-problem cap
};

struct StageResult {
    int exit_code = kExitOk;
    bool skipped = false;  // idempotent no-op
    std::string message;
    std::vector<std::filesystem::path> outputs;
};

namespace detail {

inline std::string now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace detail

struct Manifest {
    std::string stage;
    std::string tag;
    std::string config_hash;
    std::vector<std::string> outputs;
    jsonl::Json extra = jsonl::Json::object();
    std::string created_at;

    jsonl::Json to_json() const {
        jsonl::Json j;
        j["stage"] = stage;
        j["tag"] = tag;
        j["config_hash"] = config_hash;
        j["outputs"] = outputs;
        j["extra"] = extra;
        j["created_at"] = created_at;
        return j;
    }

    static Manifest from_json(const jsonl::Json& j) {
        Manifest m;
        m.stage = j.at("stage").get<std::string>();
        m.tag = j.at("tag").get<std::string>();
        m.config_hash = j.at("config_hash").get<std::string>();
        for (const auto& o : j.at("outputs")) m.outputs.push_back(o.get<std::string>());
        if (j.contains("extra")) m.extra = j.at("extra");
        m.created_at = j.value("created_at", "");
        return m;
    }
};

// One manifest per stage invocation, next to its artifacts. Rerunning a
// completed stage with the same config hash is a no-op; a hash mismatch is
// refused unless forced.
class StageGate {
public:
    StageGate(std::filesystem::path dir, std::string stage, std::string tag,
              const config::RunConfig& cfg, bool force)
        : manifest_path_(dir / (tag + ".manifest.json")),
          stage_(std::move(stage)),
          tag_(std::move(tag)),
          config_hash_(cfg.hash()),
          force_(force) {}

    // Returns true when the stage can be skipped entirely.
    bool already_done() const {
        if (!std::filesystem::exists(manifest_path_)) return false;
        Manifest m = Manifest::from_json(jsonl::Json::parse(detail::read_text(manifest_path_)));
        if (m.config_hash != config_hash_) {
            if (!force_)
                throw ValidationError("config hash mismatch for stage '" + stage_ + "' (" + tag_ +
                                      "): artifacts were produced under a different config; "
                                      "pass --force to overwrite");
            return false;
        }
        for (const auto& o : m.outputs) {
            if (!std::filesystem::exists(o)) return false;
        }
        return true;
    }

    void commit(const std::vector<std::filesystem::path>& outputs,
                jsonl::Json extra = jsonl::Json::object()) const {
        Manifest m;
        m.stage = stage_;
        m.tag = tag_;
        m.config_hash = config_hash_;
        for (const auto& o : outputs) m.outputs.push_back(o.string());
        m.extra = std::move(extra);
        m.created_at = detail::now_iso8601();
        detail::write_text(manifest_path_, m.to_json().dump(2) + "\n");
    }

    const std::filesystem::path& manifest_path() const { return manifest_path_; }

private:
    std::filesystem::path manifest_path_;
    std::string stage_;
    std::string tag_;
    std::string config_hash_;
    bool force_;
};

namespace detail {

inline std::filesystem::path require_file(const std::filesystem::path& path, const std::string& producer) {
    if (!std::filesystem::exists(path))
        throw DependencyError("missing artifact " + path.string() + "; run '" + producer + "' first");
    return path;
}

inline std::vector<corpus::Problem> load_split(const config::RunConfig& cfg, const std::string& split) {
    const auto path = cfg.paths.corpus_dir / (split + ".jsonl");
    if (!std::filesystem::exists(path))
        throw DependencyError("missing corpus file " + path.string() +
                              "; place the problem set there (JSON-lines schema)");
    corpus::Split tag = corpus::Split::custom;
    try {
        tag = corpus::split_from_string(split);
    } catch (const Error&) {
        // file stems beyond the named splits load as custom
    }
    return corpus::load_corpus(path, tag);
}

// Rollout records -> per (problem, seed) outcome counts, strict correctness.
inline std::vector<evalkit::ProblemOutcome> outcomes_from_rollouts(
    const std::vector<infer::RolloutRecord>& rollouts) {
    std::map<std::pair<std::string, std::int64_t>, std::pair<long long, long long>> acc;
    for (const auto& r : rollouts) {
        auto& slot = acc[{r.problem_id, r.seed}];
        slot.first += 1;
        if (r.correct_strict && *r.correct_strict) slot.second += 1;
    }
    std::vector<evalkit::ProblemOutcome> out;
    for (const auto& [key, nc] : acc) {
        out.push_back({key.first, key.second, nc.first, nc.second});
    }
    return out;
}

// Accepts either outcome records {problem_id, seed, n, c} or raw rollout
// lines, which are aggregated on the fly.
inline std::vector<evalkit::ProblemOutcome> load_outcomes(const std::filesystem::path& path) {
    std::vector<evalkit::ProblemOutcome> outcomes;
    std::vector<infer::RolloutRecord> rollouts;
    jsonl::for_each_record(require_file(path, "rollout or eval-passk"), [&](std::size_t, const jsonl::Json& j) {
        if (j.contains("n") && j.contains("c")) {
            outcomes.push_back(evalkit::ProblemOutcome::from_json(j));
        } else {
            rollouts.push_back(infer::RolloutRecord::from_json(j));
        }
    });
    if (!rollouts.empty()) {
        auto agg = outcomes_from_rollouts(rollouts);
        outcomes.insert(outcomes.end(), agg.begin(), agg.end());
    }
    return outcomes;
}

inline std::vector<infer::RolloutRecord> load_rollouts(const std::filesystem::path& path) {
    std::vector<infer::RolloutRecord> out;
    jsonl::for_each_record(require_file(path, "rollout"), [&](std::size_t, const jsonl::Json& j) {
        out.push_back(infer::RolloutRecord::from_json(j));
    });
    return out;
}

inline void score_rollout(infer::RolloutRecord& r, const std::string& gold) {
    if (r.finish_reason == infer::FinishReason::error) {
        r.correct_strict = false;
        r.correct_quasi = false;
        return;
    }
    r.correct_strict = verifier::strict_correct(r.text, gold);
    r.correct_quasi = verifier::quasi_correct(r.text, gold);
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage: curate
// ---------------------------------------------------------------------------

inline StageResult run_curate(const config::RunConfig& cfg, const StageOverrides& ov) {
    const std::int64_t seed = ov.seed.value_or(cfg.seeds.front());
    const std::string tag = "curate_seed" + std::to_string(seed);
    std::filesystem::create_directories(cfg.paths.draft_dir);
    StageGate gate(cfg.paths.draft_dir, "curate", tag, cfg, ov.force);
    if (gate.already_done()) return {kExitOk, true, "curate already complete (" + tag + ")", {}};

    auto problems = detail::load_split(cfg, ov.split.value_or("train"));
    infer::CompletionClient drafter(cfg.endpoint("drafter"));
    infer::SamplingParams params = cfg.profile("draft");
    params.seed = seed;

    std::vector<std::pair<std::string, std::string>> prompts;
    for (const auto& p : problems) {
        prompts.emplace_back(p.id, p.statement +
                                       "\n\nPlease reason step by step, and put your final answer "
                                       "within \\boxed{}.");
    }
    auto samples = drafter.run_batch(prompts, params, "draft",
                                     cfg.paths.draft_dir / (tag + "_checkpoint.jsonl"));

    std::map<std::string, std::vector<infer::RolloutRecord>> by_problem;
    std::map<std::string, std::string> gold;
    for (const auto& p : problems) gold[p.id] = p.gold_answer;
    for (auto& s : samples) {
        detail::score_rollout(s, gold.at(s.problem_id));
        by_problem[s.problem_id].push_back(s);
    }

    const auto samples_path = cfg.paths.draft_dir / (tag + "_samples.jsonl");
    {
        jsonl::Writer w(samples_path);
        for (const auto& p : problems) {
            for (const auto& s : by_problem[p.id]) w.write(s.to_json());
        }
    }

    const auto wrong_path = cfg.paths.draft_dir / "drafts_wrong.jsonl";
    const auto correct_path = cfg.paths.draft_dir / "drafts_correct.jsonl";
    const auto exclusions_path = cfg.paths.draft_dir / "correct_exclusions.jsonl";
    jsonl::Writer wrong_out(wrong_path);
    jsonl::Writer correct_out(correct_path);
    jsonl::Writer excl_out(exclusions_path);
    int excluded = 0;
    for (const auto& p : problems) {
        const auto& group = by_problem[p.id];
        if (group.empty()) throw Error("curate: no draft samples for problem '" + p.id + "'");
        const std::uint64_t sel_seed = derive_seed(static_cast<std::uint64_t>(seed), p.id);
        wrong_out.write(draftcraft::select_wrong_draft(group, p.gold_answer, sel_seed).to_json());
        if (auto correct = draftcraft::select_correct_draft(group, p.gold_answer, sel_seed)) {
            correct_out.write(correct->to_json());
        } else {
            jsonl::Json j;
            j["problem_id"] = p.id;
            j["reason"] = "no strictly or quasi correct sample among " + std::to_string(group.size());
            excl_out.write(j);
            ++excluded;
        }
    }

    std::vector<std::filesystem::path> outputs{samples_path, wrong_path, correct_path, exclusions_path};
    jsonl::Json extra;
    extra["problems"] = problems.size();
    extra["correct_exclusions"] = excluded;
    extra["seed"] = seed;
    gate.commit(outputs, extra);
    return {kExitOk, false,
            "curated drafts for " + std::to_string(problems.size()) + " problems (" +
                std::to_string(excluded) + " correct-variant exclusions)",
            outputs};
}

// ---------------------------------------------------------------------------
// Stage: assign
// ---------------------------------------------------------------------------

inline StageResult run_assign(const config::RunConfig& cfg, const StageOverrides& ov) {
    if (!ov.variant) throw ValidationError("assign requires --variant");
    const auto variant = draftcraft::variant_from_string(*ov.variant);
    const std::int64_t seed = ov.seed.value_or(cfg.seeds.front());
    const std::string tag = "assign_" + *ov.variant + "_seed" + std::to_string(seed);
    std::filesystem::create_directories(cfg.paths.dataset_dir);
    StageGate gate(cfg.paths.dataset_dir, "assign", tag, cfg, ov.force);
    if (gate.already_done()) return {kExitOk, true, "assign already complete (" + tag + ")", {}};

    auto problems = detail::load_split(cfg, ov.split.value_or("train"));

    // Correct-content variants cover only problems that have a correct draft;
    // exclusions were logged by curate.
    std::set<std::string> available;
    if (variant != draftcraft::Variant::nodraft) {
        const auto drafts_path = cfg.paths.draft_dir / (draftcraft::is_wrong_content(variant)
                                                            ? "drafts_wrong.jsonl"
                                                            : "drafts_correct.jsonl");
        jsonl::for_each_record(detail::require_file(drafts_path, "curate"),
                               [&](std::size_t, const jsonl::Json& j) {
                                   available.insert(j.at("problem_id").get<std::string>());
                               });
        std::vector<corpus::Problem> kept;
        for (auto& p : problems) {
            if (available.count(p.id)) kept.push_back(std::move(p));
        }
        if (draftcraft::is_wrong_content(variant) && kept.size() != problems.size())
            throw Error("assign: drafts_wrong.jsonl does not cover the corpus; rerun curate");
        problems = std::move(kept);
    }

    std::optional<draftcraft::Derangement> derangement;
    if (draftcraft::is_mismatched(variant)) {
        std::vector<std::string> ids;
        for (const auto& p : problems) ids.push_back(p.id);
        derangement = draftcraft::derange(ids, static_cast<std::uint64_t>(seed));
    }

    const auto assignment_path = cfg.paths.dataset_dir / (tag + ".jsonl");
    {
        jsonl::Writer w(assignment_path);
        for (const auto& p : problems) {
            jsonl::Json j;
            j["problem_id"] = p.id;
            if (variant == draftcraft::Variant::nodraft) {
                j["draft_source_id"] = std::string(draftcraft::kDraftPlaceholder);
            } else if (draftcraft::is_mismatched(variant)) {
                j["draft_source_id"] = derangement->mapping.at(p.id);
            } else {
                j["draft_source_id"] = p.id;
            }
            j["variant"] = draftcraft::to_string(variant);
            w.write(j);
        }
    }
    std::vector<std::filesystem::path> outputs{assignment_path};
    if (derangement) {
        const auto dpath = cfg.paths.dataset_dir / (tag + "_derangement.json");
        detail::write_text(dpath, derangement->to_json().dump(2) + "\n");
        outputs.push_back(dpath);
    }
    jsonl::Json extra;
    extra["variant"] = *ov.variant;
    extra["seed"] = seed;
    extra["problems"] = problems.size();
    gate.commit(outputs, extra);
    return {kExitOk, false, "assigned " + std::to_string(problems.size()) + " problems (" + tag + ")",
            outputs};
}

// ---------------------------------------------------------------------------
// Stage: build
// ---------------------------------------------------------------------------

inline StageResult run_build(const config::RunConfig& cfg, const StageOverrides& ov) {
    if (!ov.variant) throw ValidationError("build requires --variant");
    const auto variant = draftcraft::variant_from_string(*ov.variant);
    const std::int64_t seed = ov.seed.value_or(cfg.seeds.front());
    const std::string assign_tag = "assign_" + *ov.variant + "_seed" + std::to_string(seed);
    const std::string tag = "dataset_" + *ov.variant + "_seed" + std::to_string(seed);
    StageGate gate(cfg.paths.dataset_dir, "build", tag, cfg, ov.force);
    if (gate.already_done()) return {kExitOk, true, "build already complete (" + tag + ")", {}};

    const auto assignment_path =
        detail::require_file(cfg.paths.dataset_dir / (assign_tag + ".jsonl"), "assign");

    std::map<std::string, std::string> source_of;
    std::vector<std::string> order;
    jsonl::for_each_record(assignment_path, [&](std::size_t, const jsonl::Json& j) {
        const auto id = j.at("problem_id").get<std::string>();
        source_of[id] = j.at("draft_source_id").get<std::string>();
        order.push_back(id);
    });

    auto all_problems = detail::load_split(cfg, ov.split.value_or("train"));
    std::map<std::string, const corpus::Problem*> by_id;
    for (const auto& p : all_problems) by_id.emplace(p.id, &p);
    std::vector<corpus::Problem> problems;
    for (const auto& id : order) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw Error("build: assignment references unknown problem '" + id + "'");
        problems.push_back(*it->second);
    }

    std::map<std::string, draftcraft::DraftRecord> drafts;
    std::optional<draftcraft::Derangement> derangement;
    if (variant != draftcraft::Variant::nodraft) {
        const auto drafts_path = cfg.paths.draft_dir / (draftcraft::is_wrong_content(variant)
                                                            ? "drafts_wrong.jsonl"
                                                            : "drafts_correct.jsonl");
        jsonl::for_each_record(detail::require_file(drafts_path, "curate"),
                               [&](std::size_t, const jsonl::Json& j) {
                                   auto d = draftcraft::DraftRecord::from_json(j);
                                   drafts[d.problem_id] = std::move(d);
                               });
        if (draftcraft::is_mismatched(variant)) {
            derangement = draftcraft::Derangement{};
            derangement->seed = seed;
            for (const auto& [id, src] : source_of) derangement->mapping[id] = src;
        }
    }

    auto dataset = draftcraft::build_dataset(problems, drafts, variant, derangement);

    const auto dataset_path = cfg.paths.dataset_dir / (tag + ".jsonl");
    {
        jsonl::Writer w(dataset_path);
        for (const auto& e : dataset) w.write(e.to_json());
    }
    jsonl::Json extra;
    extra["variant"] = *ov.variant;
    extra["seed"] = seed;
    extra["examples"] = dataset.size();
    gate.commit({dataset_path}, extra);
    return {kExitOk, false, "built " + std::to_string(dataset.size()) + " examples (" + tag + ")",
            {dataset_path}};
}

// ---------------------------------------------------------------------------
// Stage: rollout
// ---------------------------------------------------------------------------

inline StageResult run_rollout(const config::RunConfig& cfg, const StageOverrides& ov) {
    const std::string split = ov.split.value_or("math500");
    const std::string endpoint_name = ov.endpoint.value_or("learner");
    const std::string profile_name = ov.profile.value_or("eval_sampling");
    const auto format = draftcraft::prompt_format_from_string(ov.format.value_or("nodraft_template"));
    auto problems = detail::load_split(cfg, split);
    infer::CompletionClient client(cfg.endpoint(endpoint_name));

    std::vector<std::pair<std::string, std::string>> prompts;
    for (const auto& p : problems) {
        prompts.emplace_back(
            p.id, draftcraft::render_prompt_budgeted(p, draftcraft::kDraftPlaceholder, format).text);
    }
    std::map<std::string, std::string> gold;
    for (const auto& p : problems) gold[p.id] = p.gold_answer;

    std::vector<std::int64_t> seeds = ov.seed ? std::vector<std::int64_t>{*ov.seed} : cfg.seeds;
    std::filesystem::create_directories(cfg.paths.rollout_dir);
    std::vector<std::filesystem::path> outputs;
    for (std::int64_t seed : seeds) {
        const std::string tag = "rollouts_" + split + "_" + endpoint_name + "_" + profile_name + "_" +
                                ov.format.value_or("nodraft_template") + "_seed" + std::to_string(seed);
        StageGate gate(cfg.paths.rollout_dir, "rollout", tag, cfg, ov.force);
        if (gate.already_done()) continue;
        infer::SamplingParams params = cfg.profile(profile_name);
        params.seed = seed;
        auto records = client.run_batch(prompts, params, endpoint_name,
                                        cfg.paths.rollout_dir / (tag + "_checkpoint.jsonl"));
        for (auto& r : records) detail::score_rollout(r, gold.at(r.problem_id));
        const auto path = cfg.paths.rollout_dir / (tag + ".jsonl");
        {
            jsonl::Writer w(path);
            for (const auto& r : records) w.write(r.to_json());
        }
        jsonl::Json extra;
        extra["split"] = split;
        extra["seed"] = seed;
        extra["records"] = records.size();
        gate.commit({path}, extra);
        outputs.push_back(path);
    }
    return {kExitOk, outputs.empty(), "rollout wrote " + std::to_string(outputs.size()) + " file(s)",
            outputs};
}

// ---------------------------------------------------------------------------
// Stage: train-toy
// ---------------------------------------------------------------------------

inline StageResult run_train_toy(const config::RunConfig& cfg, const StageOverrides& ov) {
    const std::int64_t seed = ov.seed.value_or(cfg.seeds.front());
    const std::string tag = "toylog_seed" + std::to_string(seed);
    std::filesystem::create_directories(cfg.paths.report_dir);
    StageGate gate(cfg.paths.report_dir, "train-toy", tag, cfg, ov.force);
    if (gate.already_done()) return {kExitOk, true, "train-toy already complete (" + tag + ")", {}};

    grpo::ToyAdditionEnv env(cfg.toy.num_contexts, static_cast<std::uint64_t>(seed), cfg.toy.max_sum);
    std::vector<std::filesystem::path> outputs;
    auto checkpoint = [&](int step, const grpo::ToyPolicyParams& theta) {
        jsonl::Json j;
        j["step"] = step;
        j["theta"] = theta;
        const auto path = cfg.paths.report_dir / (tag + "_ckpt" + std::to_string(step) + ".json");
        detail::write_text(path, j.dump() + "\n");
        outputs.push_back(path);
    };
    auto log = grpo::toy_train(env, cfg.grpo, static_cast<std::uint64_t>(seed), checkpoint);

    const auto csv_path = cfg.paths.report_dir / (tag + ".csv");
    detail::write_text(csv_path, log.to_csv());
    const auto jsonl_path = cfg.paths.report_dir / (tag + ".jsonl");
    jsonl::write_all(jsonl_path, log.to_jsonl());
    outputs.push_back(csv_path);
    outputs.push_back(jsonl_path);

    std::vector<double> rewards;
    for (const auto& e : log.entries) rewards.push_back(e.mean_reward);
    const auto rolling = grpo::rolling_mean(rewards, 20);
    const double final_rolling = rolling.empty() ? 0.0 : rolling.back();

    jsonl::Json extra;
    extra["seed"] = seed;
    extra["steps"] = log.entries.size();
    extra["final_rolling_mean_reward"] = final_rolling;
    gate.commit(outputs, extra);
    char msg[128];
    std::snprintf(msg, sizeof(msg), "toy training done: final 20-step rolling mean reward %.3f",
                  final_rolling);
    return {kExitOk, false, msg, outputs};
}

// ---------------------------------------------------------------------------
// Stage: eval-greedy
// ---------------------------------------------------------------------------

inline StageResult run_eval_greedy(const config::RunConfig& cfg, const StageOverrides& ov) {
    if (ov.inputs.empty()) throw ValidationError("eval-greedy requires --inputs name=rollouts.jsonl");
    const std::string split = ov.split.value_or("math500");
    auto problems = detail::load_split(cfg, split);
    std::filesystem::create_directories(cfg.paths.report_dir);

    std::vector<std::filesystem::path> outputs;
    for (const auto& [name, file] : ov.inputs) {
        auto rollouts = detail::load_rollouts(file);
        auto report = evalkit::greedy_pass1(rollouts, problems);
        std::ostringstream csv;
        csv << "seed,overall";
        std::set<int> levels;
        for (const auto& per : report.seeds) {
            for (const auto& [lvl, acc] : per.by_level) levels.insert(lvl);
        }
        for (int lvl : levels) csv << ",L" << lvl;
        csv << "\n";
        char buf[64];
        for (const auto& per : report.seeds) {
            csv << per.seed;
            std::snprintf(buf, sizeof(buf), ",%.2f", per.overall.pct());
            csv << buf;
            for (int lvl : levels) {
                auto it = per.by_level.find(lvl);
                std::snprintf(buf, sizeof(buf), ",%.2f", it == per.by_level.end() ? 0.0 : it->second.pct());
                csv << buf;
            }
            csv << "\n";
        }
        csv << "mean";
        std::snprintf(buf, sizeof(buf), ",%.2f", report.overall_pct_mean);
        csv << buf;
        for (int lvl : levels) {
            auto it = report.by_level_pct_mean.find(lvl);
            std::snprintf(buf, sizeof(buf), ",%.2f", it == report.by_level_pct_mean.end() ? 0.0 : it->second);
            csv << buf;
        }
        csv << "\n";
        const auto path = cfg.paths.report_dir / ("greedy_" + split + "_" + name + ".csv");
        detail::write_text(path, csv.str());
        outputs.push_back(path);
        for (const auto& w : report.warnings) {
            std::fprintf(stderr, "warning: %s\n", w.c_str());
        }
    }
    return {kExitOk, false, "eval-greedy wrote " + std::to_string(outputs.size()) + " file(s)", outputs};
}

// ---------------------------------------------------------------------------
// Stage: eval-passk
// ---------------------------------------------------------------------------

inline StageResult run_eval_passk(const config::RunConfig& cfg, const StageOverrides& ov) {
    if (ov.inputs.empty()) throw ValidationError("eval-passk requires --inputs name=rollouts.jsonl");
    std::filesystem::create_directories(cfg.paths.report_dir);
    std::ostringstream plot;
    plot << "k,variant,estimate\n";
    std::vector<std::filesystem::path> outputs;
    char buf[96];
    for (const auto& [name, file] : ov.inputs) {
        auto outcomes = detail::load_outcomes(file);
        if (outcomes.empty()) throw DependencyError("no outcomes in " + file + "; run 'rollout' first");
        std::vector<long long> ks = ov.ks;
        if (ks.empty()) ks = evalkit::default_ks(outcomes.front().n);
        auto c = evalkit::curve(outcomes, ks);

        const auto outcome_path = cfg.paths.report_dir / ("outcomes_" + name + ".jsonl");
        {
            jsonl::Writer w(outcome_path);
            for (const auto& o : outcomes) w.write(o.to_json());
        }
        std::ostringstream csv;
        csv << "k,estimate\n";
        for (std::size_t i = 0; i < c.ks.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%lld,%.6f\n", c.ks[i], c.estimates[i]);
            csv << buf;
            std::snprintf(buf, sizeof(buf), "%lld,%s,%.6f\n", c.ks[i], name.c_str(), c.estimates[i]);
            plot << buf;
        }
        const auto path = cfg.paths.report_dir / ("passk_" + name + ".csv");
        detail::write_text(path, csv.str());
        outputs.push_back(path);
        outputs.push_back(outcome_path);
    }
    const auto plot_path = cfg.paths.report_dir / "passk_plotdata.csv";
    detail::write_text(plot_path, plot.str());
    outputs.push_back(plot_path);
    return {kExitOk, false, "eval-passk wrote " + std::to_string(outputs.size()) + " file(s)", outputs};
}

// ---------------------------------------------------------------------------
// Stage: analyze
// ---------------------------------------------------------------------------

inline StageResult run_analyze(const config::RunConfig& cfg, const StageOverrides& ov) {
    if (!ov.base || !ov.ours) throw ValidationError("analyze requires --base FILE and --ours FILE");
    const long long k = ov.k.value_or(1024);
    auto base = detail::load_outcomes(*ov.base);
    auto ours = detail::load_outcomes(*ov.ours);
    auto report = evalkit::per_problem_analysis(base, ours, k);
    std::filesystem::create_directories(cfg.paths.report_dir);
    const auto path = cfg.paths.report_dir / ("analysis_k" + std::to_string(k) + ".json");
    detail::write_text(path, report.to_json().dump(2) + "\n");
    std::ostringstream msg;
    msg << "pass@" << k << ": " << report.creation_ids.size() << " creation, "
        << report.inverse_ids.size() << " inverse, " << report.gains_ge_30pp << " gains >=30pp, "
        << report.losses_ge_30pp << " losses >=30pp";
    return {kExitOk, false, msg.str(), {path}};
}

// ---------------------------------------------------------------------------
// Stage: solve-matrix
// ---------------------------------------------------------------------------

inline StageResult run_solve_matrix(const config::RunConfig& cfg, const StageOverrides& ov) {
    if (ov.inputs.size() < 1) throw ValidationError("solve-matrix requires --inputs name=outcomes.jsonl,...");
    std::vector<std::pair<std::string, std::vector<evalkit::ProblemOutcome>>> by_model;
    for (const auto& [name, file] : ov.inputs) {
        by_model.emplace_back(name, detail::load_outcomes(file));
    }
    auto matrix = evalkit::solve_matrix(by_model);
    std::filesystem::create_directories(cfg.paths.report_dir);
    const auto txt_path = cfg.paths.report_dir / "solve_matrix.txt";
    detail::write_text(txt_path, evalkit::render_solve_matrix(matrix));

    std::ostringstream counts;
    counts << "model,solved,total\n";
    for (std::size_t i = 0; i < matrix.model_names.size(); ++i) {
        counts << detail::csv_escape(matrix.model_names[i]) << "," << matrix.solved_counts[i] << ","
               << matrix.problem_ids.size() << "\n";
    }
    const auto counts_path = cfg.paths.report_dir / "solved_counts.csv";
    detail::write_text(counts_path, counts.str());

    // pairwise creation/inverse of the last-listed model against the others
    jsonl::Json pairwise = jsonl::Json::object();
    const std::string& ours = by_model.back().first;
    for (std::size_t i = 0; i + 1 < by_model.size(); ++i) {
        auto diff = evalkit::pairwise_diff(matrix, ours, by_model[i].first);
        jsonl::Json j;
        j["creation"] = diff.creation;
        j["inverse"] = diff.inverse;
        pairwise[by_model[i].first] = j;
    }
    const auto pairwise_path = cfg.paths.report_dir / "pairwise.json";
    detail::write_text(pairwise_path, pairwise.dump(2) + "\n");
    return {kExitOk, false, "solve-matrix wrote 3 file(s)", {txt_path, counts_path, pairwise_path}};
}

// ---------------------------------------------------------------------------
// Stage: rigor-scan
// ---------------------------------------------------------------------------

inline StageResult run_rigor_scan(const config::RunConfig& cfg, const StageOverrides& ov) {
    if (ov.judges.size() != 2)
        throw ValidationError("rigor-scan requires exactly two primary judges: --judges A,B");
    if (ov.inputs.empty()) throw ValidationError("rigor-scan requires --inputs name=rollouts.jsonl");
    const std::string split = ov.split.value_or("math500");
    auto problems = detail::load_split(cfg, split);
    std::map<std::string, const corpus::Problem*> by_id;
    for (const auto& p : problems) by_id.emplace(p.id, &p);

    infer::CompletionClient judge_a(cfg.endpoint(ov.judges[0]));
    infer::CompletionClient judge_b(cfg.endpoint(ov.judges[1]));
    std::optional<infer::CompletionClient> escalation;
    if (ov.escalation) escalation.emplace(cfg.endpoint(*ov.escalation));

    std::vector<infer::RolloutRecord> targets;
    std::map<std::string, int> per_problem;
    for (const auto& [name, file] : ov.inputs) {
        for (auto& r : detail::load_rollouts(file)) {
            if (!by_id.count(r.problem_id)) continue;
            const bool strict = r.correct_strict
                                    ? *r.correct_strict
                                    : verifier::strict_correct(r.text, by_id.at(r.problem_id)->gold_answer);
            if (!strict) continue;  // only correct rollouts are scanned
            if (ov.limit && per_problem[r.problem_id] >= *ov.limit) continue;
            per_problem[r.problem_id] += 1;
            targets.push_back(std::move(r));
        }
    }

    std::filesystem::create_directories(cfg.paths.report_dir);
    const auto verdicts_path = cfg.paths.report_dir / "rigor_verdicts.jsonl";
    const auto consensus_path = cfg.paths.report_dir / "rigor_consensus.jsonl";
    jsonl::Writer verdicts_out(verdicts_path);
    jsonl::Writer consensus_out(consensus_path);
    std::vector<rigor::ConsensusResult> results;
    for (const auto& r : targets) {
        const auto& problem = *by_id.at(r.problem_id);
        auto va = rigor::judge_rollout(r, problem, judge_a);
        auto vb = rigor::judge_rollout(r, problem, judge_b);
        verdicts_out.write(va.to_json());
        verdicts_out.write(vb.to_json());
        rigor::EscalationFn escalate;
        if (escalation) {
            escalate = [&]() { return rigor::judge_rollout(r, problem, *escalation); };
        }
        auto result = rigor::consensus({va, vb}, escalate);
        consensus_out.write(result.to_json());
        results.push_back(std::move(result));
    }

    auto summary = rigor::scan_summary(results);
    const auto summary_csv = cfg.paths.report_dir / "rigor_summary.csv";
    detail::write_text(summary_csv, summary.to_csv());
    const auto summary_md = cfg.paths.report_dir / "rigor_summary.md";
    detail::write_text(summary_md, summary.to_markdown());
    std::ostringstream msg;
    msg << "scanned " << summary.total << " correct rollouts: " << summary.wrong << " wrong, "
        << summary.valid_enough() << " valid-enough";
    return {kExitOk, false, msg.str(), {verdicts_path, consensus_path, summary_csv, summary_md}};
}

// ---------------------------------------------------------------------------
// Stage: report
// ---------------------------------------------------------------------------

inline StageResult run_report(const config::RunConfig& cfg, const StageOverrides&) {
    const auto dir = cfg.paths.report_dir;
    if (!std::filesystem::exists(dir))
        throw DependencyError("report directory " + dir.string() + " does not exist; run eval stages first");
    std::ostringstream doc;
    doc << "# draftforge run report\n\ngenerated " << detail::now_iso8601() << "\n";

    const auto plot_path = dir / "passk_plotdata.csv";
    if (std::filesystem::exists(plot_path)) {
        // endpoint table: pass@1 and pass@max-k per variant
        std::map<std::string, std::map<long long, double>> series;
        std::istringstream in(detail::read_text(plot_path));
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            std::istringstream row(line);
            std::string k_s, name, est_s;
            if (!std::getline(row, k_s, ',') || !std::getline(row, name, ',') ||
                !std::getline(row, est_s, ','))
                continue;
            series[name][std::stoll(k_s)] = std::stod(est_s);
        }
        doc << "\n## pass@k endpoints\n\n| variant | pass@1 | pass@max-k |\n|---|---:|---:|\n";
        char buf[128];
        for (const auto& [name, points] : series) {
            const double p1 = points.count(1) ? points.at(1) : 0.0;
            const double pmax = points.empty() ? 0.0 : points.rbegin()->second;
            std::snprintf(buf, sizeof(buf), "| %s | %.2f | %.2f |\n", name.c_str(), 100.0 * p1,
                          100.0 * pmax);
            doc << buf;
        }
    }

    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("greedy_", 0) == 0 && entry.path().extension() == ".csv") {
            doc << "\n## " << name << "\n\n```\n" << detail::read_text(entry.path()) << "```\n";
        }
    }

    const auto matrix_path = dir / "solve_matrix.txt";
    if (std::filesystem::exists(matrix_path)) {
        doc << "\n## solve matrix\n\n```\n" << detail::read_text(matrix_path) << "```\n";
    }
    const auto pairwise_path = dir / "pairwise.json";
    if (std::filesystem::exists(pairwise_path)) {
        doc << "\n## pairwise creation/inverse\n\n```json\n" << detail::read_text(pairwise_path)
            << "```\n";
    }
    const auto rigor_path = dir / "rigor_summary.md";
    if (std::filesystem::exists(rigor_path)) {
        doc << "\n## rigor scan\n\n" << detail::read_text(rigor_path);
    }
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("analysis_", 0) == 0 && entry.path().extension() == ".json") {
            doc << "\n## " << name << "\n\n```json\n" << detail::read_text(entry.path()) << "```\n";
        }
    }

    const auto out_path = dir / "report.md";
    detail::write_text(out_path, doc.str());
    return {kExitOk, false, "report written to " + out_path.string(), {out_path}};
}

inline StageResult run_stage(Stage stage, const config::RunConfig& cfg, const StageOverrides& ov) {
    switch (stage) {
        case Stage::curate: return run_curate(cfg, ov);
        case Stage::assign: return run_assign(cfg, ov);
        case Stage::build: return run_build(cfg, ov);
        case Stage::rollout: return run_rollout(cfg, ov);
        case Stage::train_toy: return run_train_toy(cfg, ov);
        case Stage::eval_greedy: return run_eval_greedy(cfg, ov);
        case Stage::eval_passk: return run_eval_passk(cfg, ov);
        case Stage::analyze: return run_analyze(cfg, ov);
        case Stage::solve_matrix: return run_solve_matrix(cfg, ov);
        case Stage::rigor_scan: return run_rigor_scan(cfg, ov);
        case Stage::report: return run_report(cfg, ov);
    }
    throw ValidationError("unhandled stage");
}

}  // namespace draftforge::pipeline
