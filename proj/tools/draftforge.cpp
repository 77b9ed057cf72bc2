#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "draftforge/pipeline.hpp"

namespace {

using draftforge::pipeline::kExitDependency;
using draftforge::pipeline::kExitOk;
using draftforge::pipeline::kExitValidation;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw draftforge::pipeline::ValidationError("cannot read file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// name=file pairs from --inputs
std::vector<std::pair<std::string, std::string>> parse_inputs(const std::vector<std::string>& raw) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& item : raw) {
        auto eq = item.find('=');
        if (eq == std::string::npos)
            throw draftforge::pipeline::ValidationError("--inputs expects name=file, got '" + item + "'");
        out.emplace_back(item.substr(0, eq), item.substr(eq + 1));
    }
    return out;
}

int run_verify(const std::string& completion_path, const std::string& gold) {
    namespace verifier = draftforge::verifier;
    const std::string text = read_file(completion_path);
    std::printf("extraction chain (first match wins):\n");
    for (const auto& step : verifier::extraction_trace(text)) {
        std::printf("  %-12s %s", verifier::to_string(step.method).c_str(),
                    step.matched ? "matched" : "no match");
        if (step.matched) std::printf(": %s", step.value.c_str());
        std::printf("\n");
    }
    auto chain = verifier::extract_fallback(text);
    if (chain) {
        std::printf("chain result: '%s' via %s\n", chain->value.c_str(),
                    verifier::to_string(chain->method).c_str());
        std::printf("math_equal(extracted, gold): %s\n",
                    verifier::math_equal(chain->value, gold) ? "true" : "false");
    } else {
        std::printf("chain result: no extractable answer\n");
    }
    std::printf("quasi_correct:  %s\n", verifier::quasi_correct(text, gold) ? "true" : "false");
    std::printf("strict_correct: %s\n", verifier::strict_correct(text, gold) ? "true" : "false");
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"draftforge: wrong-draft RLVR pipeline toolkit"};
    app.require_subcommand(1);

    std::string config_path = "draftforge.toml";
    draftforge::pipeline::StageOverrides ov;
    std::int64_t seed_arg = -1;
    std::string variant_arg, split_arg, endpoint_arg, profile_arg, format_arg;
    std::string escalation_arg, base_arg, ours_arg;
    std::vector<std::string> inputs_arg;
    std::vector<long long> ks_arg;
    long long k_arg = -1;
    int limit_arg = -1;

    auto add_stage = [&](const std::string& name, const std::string& desc) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->add_option("--config", config_path, "run configuration (TOML)");
        sub->add_option("--seed", seed_arg, "seed override (default: first config seed)");
        sub->add_flag("--force", ov.force, "overwrite artifacts from a different config hash");
        return sub;
    };

    auto* curate = add_stage("curate", "sample drafts and select wrong/correct ones per problem");
    curate->add_option("--split", split_arg, "corpus file stem (default train)");

    auto* assign = add_stage("assign", "fix the draft assignment (derangement for mismatched variants)");
    assign->add_option("--variant", variant_arg, "nodraft|matched_wrong|matched_correct|mismatched_wrong|mismatched_correct")->required();
    assign->add_option("--split", split_arg, "corpus file stem (default train)");

    auto* build = add_stage("build", "render the paired training dataset for a variant");
    build->add_option("--variant", variant_arg, "dataset variant")->required();
    build->add_option("--split", split_arg, "corpus file stem (default train)");

    auto* rollout = add_stage("rollout", "sample completions for an eval split");
    rollout->add_option("--split", split_arg, "corpus file stem (default math500)");
    rollout->add_option("--endpoint", endpoint_arg, "endpoint name (default learner)");
    rollout->add_option("--profile", profile_arg, "sampling profile (default eval_sampling)");
    rollout->add_option("--format", format_arg, "nodraft_template|inst_chat");

    add_stage("train-toy", "run the desk-scale GRPO trainer on the toy addition task");

    auto* eval_greedy = add_stage("eval-greedy", "greedy pass@1 accuracy by difficulty level");
    eval_greedy->add_option("--split", split_arg, "corpus file stem (default math500)");
    eval_greedy->add_option("--inputs", inputs_arg, "name=rollouts.jsonl pairs")->delimiter(',');

    auto* eval_passk = add_stage("eval-passk", "unbiased pass@k curves from sampled rollouts");
    eval_passk->add_option("--inputs", inputs_arg, "name=rollouts.jsonl pairs")->delimiter(',');
    eval_passk->add_option("--k", ks_arg, "k grid (default: powers of two)")->delimiter(',');

    auto* analyze = add_stage("analyze", "per-problem creation/inverse analysis of two outcome sets");
    analyze->add_option("--base", base_arg, "baseline outcomes/rollouts file")->required();
    analyze->add_option("--ours", ours_arg, "treated outcomes/rollouts file")->required();
    analyze->add_option("--k", k_arg, "pass@k to compare at (default 1024)");

    auto* solve = add_stage("solve-matrix", "cross-model solved/unsolved grid");
    solve->add_option("--inputs", inputs_arg, "name=outcomes.jsonl pairs; last one is 'ours'")
        ->delimiter(',');

    auto* rigor = add_stage("rigor-scan", "blind two-judge rigor audit of correct rollouts");
    rigor->add_option("--judges", ov.judges, "two judge endpoint names")->delimiter(',');
    rigor->add_option("--escalation", escalation_arg, "escalation judge endpoint name");
    rigor->add_option("--inputs", inputs_arg, "name=rollouts.jsonl pairs")->delimiter(',');
    rigor->add_option("--split", split_arg, "corpus file stem with problems/gold answers");
    rigor->add_option("--limit", limit_arg, "max rollouts scanned per problem");

    add_stage("report", "collate evaluation artifacts into one document");

    auto* verify = app.add_subcommand("verify", "debug: extraction trace for one completion");
    std::string completion_path, gold_text;
    verify->add_option("--completion", completion_path, "file with the completion text")->required();
    verify->add_option("--gold", gold_text, "gold answer to compare against")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (verify->parsed()) return run_verify(completion_path, gold_text);

        if (seed_arg >= 0) ov.seed = seed_arg;
        if (!variant_arg.empty()) ov.variant = variant_arg;
        if (!split_arg.empty()) ov.split = split_arg;
        if (!endpoint_arg.empty()) ov.endpoint = endpoint_arg;
        if (!profile_arg.empty()) ov.profile = profile_arg;
        if (!format_arg.empty()) ov.format = format_arg;
        if (!escalation_arg.empty()) ov.escalation = escalation_arg;
        if (!base_arg.empty()) ov.base = base_arg;
        if (!ours_arg.empty()) ov.ours = ours_arg;
        if (!inputs_arg.empty()) ov.inputs = parse_inputs(inputs_arg);
        if (!ks_arg.empty()) ov.ks = ks_arg;
        if (k_arg > 0) ov.k = k_arg;
        if (limit_arg > 0) ov.limit = limit_arg;

        auto cfg = draftforge::config::RunConfig::from_file(config_path);
        const std::string stage_name = app.get_subcommands().at(0)->get_name();
        auto stage = draftforge::pipeline::stage_from_string(stage_name);
        auto result = draftforge::pipeline::run_stage(stage, cfg, ov);
        if (result.skipped) {
            std::printf("%s (no-op)\n", result.message.c_str());
        } else {
            std::printf("%s\n", result.message.c_str());
        }
        return result.exit_code;
    } catch (const draftforge::pipeline::DependencyError& e) {
        std::fprintf(stderr, "dependency error: %s\n", e.what());
        return kExitDependency;
    } catch (const draftforge::pipeline::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    }
}
