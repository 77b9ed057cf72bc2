#pragma once

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "draftforge/common.hpp"
#include "draftforge/grpo.hpp"
#include "draftforge/jsonl.hpp"
#include "draftforge/rollout.hpp"

namespace draftforge::config {

using Json = jsonl::Json;

// ${VAR} references resolve against the environment; unset variables are a
// configuration error rather than a silent empty string.
inline std::string interpolate_env(const std::string& s) {
    std::string out;
    std::size_t i = 0;
    while (i < s.size()) {
        if (s[i] == '$' && i + 1 < s.size() && s[i + 1] == '{') {
            auto close = s.find('}', i + 2);
            if (close == std::string::npos) throw Error("unterminated ${...} in config string: " + s);
            const std::string name = s.substr(i + 2, close - i - 2);
            const char* value = std::getenv(name.c_str());
            if (!value) throw Error("config references unset environment variable '" + name + "'");
            out += value;
            i = close + 1;
        } else {
            out.push_back(s[i]);
            ++i;
        }
    }
    return out;
}

namespace detail {

inline std::string parse_basic_string(std::string_view sv, std::size_t& i) {
    // sv[i] == '"'
    std::string out;
    ++i;
    while (i < sv.size() && sv[i] != '"') {
        if (sv[i] == '\\' && i + 1 < sv.size()) {
            ++i;
            switch (sv[i]) {
                case 'n': out.push_back('\n'); break;
                case 't': out.push_back('\t'); break;
                case 'r': out.push_back('\r'); break;
                case '"': out.push_back('"'); break;
                case '\\': out.push_back('\\'); break;
                default: throw Error(std::string("unsupported escape \\") + sv[i] + " in config string");
            }
            ++i;
        } else {
            out.push_back(sv[i]);
            ++i;
        }
    }
    if (i >= sv.size()) throw Error("unterminated string in config");
    ++i;  // closing quote
    return interpolate_env(out);
}

inline Json parse_scalar(std::string_view sv) {
    sv = trim_view(sv);
    if (sv.empty()) throw Error("empty value in config");
    if (sv == "true") return Json(true);
    if (sv == "false") return Json(false);
    std::string buf(sv);
    char* end = nullptr;
    if (sv.find_first_of(".eE") != std::string_view::npos &&
        sv.find_first_not_of("+-0123456789.eE_") == std::string_view::npos) {
        const double d = std::strtod(buf.c_str(), &end);
        if (end == buf.c_str() + buf.size()) return Json(d);
    }
    errno = 0;
    const long long v = std::strtoll(buf.c_str(), &end, 10);
    if (end == buf.c_str() + buf.size() && errno == 0) return Json(v);
    const double d = std::strtod(buf.c_str(), &end);
    if (end == buf.c_str() + buf.size()) return Json(d);
    throw Error("cannot parse config value '" + std::string(sv) + "'");
}

inline Json parse_value(std::string_view sv);

inline Json parse_array(std::string_view sv) {
    // sv starts with '[' and ends with ']'
    Json arr = Json::array();
    std::size_t i = 1;
    const std::size_t end = sv.size() - 1;
    while (i < end) {
        while (i < end && (sv[i] == ' ' || sv[i] == '\t' || sv[i] == '\n' || sv[i] == '\r' || sv[i] == ','))
            ++i;
        if (i >= end) break;
        if (sv[i] == '"') {
            std::size_t j = i;
            arr.push_back(Json(parse_basic_string(sv, j)));
            i = j;
        } else if (sv[i] == '[') {
            int depth = 0;
            std::size_t j = i;
            bool in_str = false;
            for (; j < end; ++j) {
                if (sv[j] == '"' && (j == 0 || sv[j - 1] != '\\')) in_str = !in_str;
                if (in_str) continue;
                if (sv[j] == '[') ++depth;
                if (sv[j] == ']' && --depth == 0) break;
            }
            if (depth != 0) throw Error("unterminated array in config");
            arr.push_back(parse_array(sv.substr(i, j - i + 1)));
            i = j + 1;
        } else {
            std::size_t j = i;
            while (j < end && sv[j] != ',') ++j;
            arr.push_back(parse_scalar(sv.substr(i, j - i)));
            i = j;
        }
    }
    return arr;
}

inline Json parse_value(std::string_view sv) {
    sv = trim_view(sv);
    if (sv.empty()) throw Error("empty value in config");
    if (sv.front() == '"') {
        std::size_t i = 0;
        std::string s = parse_basic_string(sv, i);
        if (trim_view(sv.substr(i)).size() > 0) throw Error("trailing content after string value");
        return Json(s);
    }
    if (sv.front() == '[') {
        if (sv.back() != ']') throw Error("unterminated array value");
        return parse_array(sv);
    }
    return parse_scalar(sv);
}

// Strips a # comment, respecting double-quoted strings.
inline std::string_view strip_comment(std::string_view line) {
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_str = !in_str;
        if (line[i] == '#' && !in_str) return line.substr(0, i);
    }
    return line;
}

inline std::vector<std::string> split_dotted_key(std::string_view key) {
    std::vector<std::string> parts;
    std::string current;
    for (char c : key) {
        if (c == '.') {
            if (current.empty()) throw Error("empty key segment in config");
            parts.push_back(current);
            current.clear();
        } else if (c != ' ' && c != '\t') {
            current.push_back(c);
        }
    }
    if (current.empty()) throw Error("empty key segment in config");
    parts.push_back(current);
    return parts;
}

}  // namespace detail

// Minimal TOML subset: [table.sub] headers, key = value pairs with strings,
// numbers, booleans, and (possibly multi-line) arrays, plus # comments.
// Dates, inline tables, and multi-line strings are not supported.
inline Json parse_toml(const std::string& text) {
    Json root = Json::object();
    Json* table = &root;
    std::istringstream in(text);
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string_view line = trim_view(detail::strip_comment(raw));
        if (line.empty()) continue;
        try {
            if (line.front() == '[') {
                if (line.back() != ']') throw Error("malformed table header");
                auto parts = detail::split_dotted_key(line.substr(1, line.size() - 2));
                table = &root;
                for (const auto& p : parts) table = &((*table)[p]);
                if (table->is_null()) *table = Json::object();
                continue;
            }
            auto eq = line.find('=');
            if (eq == std::string_view::npos) throw Error("expected key = value");
            auto key_parts = detail::split_dotted_key(trim_view(line.substr(0, eq)));
            std::string value_text(trim_view(line.substr(eq + 1)));
            // multi-line array: keep consuming lines until brackets balance
            if (!value_text.empty() && value_text.front() == '[') {
                auto balance = [](std::string_view s) {
                    int depth = 0;
                    bool in_str = false;
                    for (std::size_t i = 0; i < s.size(); ++i) {
                        if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
                        if (in_str) continue;
                        if (s[i] == '[') ++depth;
                        if (s[i] == ']') --depth;
                    }
                    return depth;
                };
                while (balance(value_text) > 0 && std::getline(in, raw)) {
                    ++lineno;
                    value_text += ' ';
                    value_text += trim_view(detail::strip_comment(raw));
                }
            }
            Json* slot = table;
            for (std::size_t i = 0; i + 1 < key_parts.size(); ++i) {
                slot = &((*slot)[key_parts[i]]);
                if (slot->is_null()) *slot = Json::object();
            }
            (*slot)[key_parts.back()] = detail::parse_value(value_text);
        } catch (const Error& e) {
            throw Error("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return root;
}

inline Json parse_toml_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_toml(buf.str());
}

struct Paths {
    std::filesystem::path corpus_dir = "data/corpus";
    std::filesystem::path draft_dir = "data/drafts";
    std::filesystem::path dataset_dir = "data/datasets";
    std::filesystem::path rollout_dir = "data/rollouts";
    std::filesystem::path report_dir = "data/reports";
};

struct ToyEnvConfig {
    int num_contexts = 4;
    int max_sum = 98;
};

struct RunConfig {
    std::map<std::string, infer::ModelEndpoint> endpoints;
    Paths paths;
    std::map<std::string, infer::SamplingParams> sampling;
    std::vector<std::int64_t> seeds{42};
    grpo::GrpoConfig grpo;
    ToyEnvConfig toy;

    const infer::ModelEndpoint& endpoint(const std::string& name) const {
        auto it = endpoints.find(name);
        if (it == endpoints.end()) throw Error("config has no endpoint named '" + name + "'");
        return it->second;
    }

    const infer::SamplingParams& profile(const std::string& name) const {
        auto it = sampling.find(name);
        if (it == sampling.end()) throw Error("config has no sampling profile named '" + name + "'");
        return it->second;
    }

    // Canonical serialized form; hashing this makes the manifest hash depend
    // on the effective configuration, not on file formatting.
    Json to_json() const {
        Json j;
        Json eps = Json::object();
        for (const auto& [name, e] : endpoints) {
            Json je;
            je["base_url"] = e.base_url;
            je["model"] = e.model_name;
            je["api_key_env"] = e.api_key_env;
            je["max_in_flight"] = e.max_in_flight;
            je["timeout_seconds"] = e.timeout_seconds;
            eps[name] = je;
        }
        j["endpoints"] = eps;
        Json jp;
        jp["corpus_dir"] = paths.corpus_dir.string();
        jp["draft_dir"] = paths.draft_dir.string();
        jp["dataset_dir"] = paths.dataset_dir.string();
        jp["rollout_dir"] = paths.rollout_dir.string();
        jp["report_dir"] = paths.report_dir.string();
        j["paths"] = jp;
        Json sp = Json::object();
        for (const auto& [name, s] : sampling) {
            Json js;
            js["temperature"] = s.temperature;
            js["top_p"] = s.top_p;
            js["max_tokens"] = s.max_tokens;
            js["n"] = s.n;
            sp[name] = js;
        }
        j["sampling"] = sp;
        j["seeds"] = seeds;
        Json jg;
        jg["group_size"] = grpo.group_size;
        jg["kl_beta"] = grpo.kl_beta;
        jg["learning_rate"] = grpo.learning_rate;
        jg["grad_accum"] = grpo.grad_accum;
        jg["steps"] = grpo.steps;
        jg["checkpoint_every"] = grpo.checkpoint_every;
        j["grpo"] = jg;
        Json jt;
        jt["num_contexts"] = toy.num_contexts;
        jt["max_sum"] = toy.max_sum;
        j["toy"] = jt;
        return j;
    }

    std::string hash() const {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(fnv1a64(to_json().dump())));
        return buf;
    }

    static RunConfig defaults() {
        RunConfig c;
        infer::SamplingParams draft;
        draft.temperature = 0.8;
        draft.top_p = 0.95;
        draft.max_tokens = 2560;
        draft.n = 32;
        c.sampling["draft"] = draft;
        infer::SamplingParams eval_sampling;
        eval_sampling.temperature = 0.6;
        eval_sampling.top_p = 0.95;
        eval_sampling.max_tokens = 4096;
        eval_sampling.n = 256;
        c.sampling["eval_sampling"] = eval_sampling;
        infer::SamplingParams greedy;
        greedy.temperature = 0.0;
        greedy.top_p = 1.0;
        greedy.max_tokens = 4096;
        greedy.n = 1;
        c.sampling["greedy"] = greedy;
        return c;
    }

    static RunConfig from_toml(const Json& doc) {
        RunConfig c = defaults();
        if (doc.contains("seeds")) {
            c.seeds.clear();
            for (const auto& s : doc.at("seeds")) c.seeds.push_back(s.get<std::int64_t>());
        }
        if (c.seeds.empty()) throw Error("config: seeds must be non-empty");
        if (doc.contains("paths")) {
            const auto& p = doc.at("paths");
            if (p.contains("corpus_dir")) c.paths.corpus_dir = p.at("corpus_dir").get<std::string>();
            if (p.contains("draft_dir")) c.paths.draft_dir = p.at("draft_dir").get<std::string>();
            if (p.contains("dataset_dir")) c.paths.dataset_dir = p.at("dataset_dir").get<std::string>();
            if (p.contains("rollout_dir")) c.paths.rollout_dir = p.at("rollout_dir").get<std::string>();
            if (p.contains("report_dir")) c.paths.report_dir = p.at("report_dir").get<std::string>();
        }
        if (doc.contains("endpoints")) {
            for (const auto& [name, je] : doc.at("endpoints").items()) {
                infer::ModelEndpoint e;
                e.base_url = je.at("base_url").get<std::string>();
                if (je.contains("model")) e.model_name = je.at("model").get<std::string>();
                std::string env_name = "DRAFTFORGE_API_KEY_" + name;
                for (char& ch : env_name) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
                e.api_key_env = je.contains("api_key_env") ? je.at("api_key_env").get<std::string>() : env_name;
                if (je.contains("max_in_flight")) e.max_in_flight = je.at("max_in_flight").get<int>();
                if (je.contains("timeout_seconds")) e.timeout_seconds = je.at("timeout_seconds").get<int>();
                if (je.contains("retry_backoff_ms")) e.retry_backoff_ms = je.at("retry_backoff_ms").get<int>();
                e.validate();
                c.endpoints[name] = e;
            }
        }
        if (doc.contains("sampling")) {
            for (const auto& [name, js] : doc.at("sampling").items()) {
                infer::SamplingParams s = c.sampling.count(name) ? c.sampling[name] : infer::SamplingParams{};
                if (js.contains("temperature")) s.temperature = js.at("temperature").get<double>();
                if (js.contains("top_p")) s.top_p = js.at("top_p").get<double>();
                if (js.contains("max_tokens")) s.max_tokens = js.at("max_tokens").get<int>();
                if (js.contains("n")) s.n = js.at("n").get<int>();
                s.validate();
                c.sampling[name] = s;
            }
        }
        if (doc.contains("grpo")) {
            const auto& g = doc.at("grpo");
            if (g.contains("group_size")) c.grpo.group_size = g.at("group_size").get<int>();
            if (g.contains("kl_beta")) c.grpo.kl_beta = g.at("kl_beta").get<double>();
            if (g.contains("learning_rate")) c.grpo.learning_rate = g.at("learning_rate").get<double>();
            if (g.contains("grad_accum")) c.grpo.grad_accum = g.at("grad_accum").get<int>();
            if (g.contains("steps")) c.grpo.steps = g.at("steps").get<int>();
            if (g.contains("checkpoint_every")) c.grpo.checkpoint_every = g.at("checkpoint_every").get<int>();
            c.grpo.validate();
        }
        if (doc.contains("toy")) {
            const auto& t = doc.at("toy");
            if (t.contains("num_contexts")) c.toy.num_contexts = t.at("num_contexts").get<int>();
            if (t.contains("max_sum")) c.toy.max_sum = t.at("max_sum").get<int>();
        }
        return c;
    }

    static RunConfig from_file(const std::filesystem::path& path) {
        return from_toml(parse_toml_file(path));
    }
};

}  // namespace draftforge::config
