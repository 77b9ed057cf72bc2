#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "draftforge/jsonl.hpp"

namespace draftforge::corpus {

enum class Split { train, math500, aime2024, aime2025, aime2026, custom };

inline std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::math500: return "math500";
        case Split::aime2024: return "aime2024";
        case Split::aime2025: return "aime2025";
        case Split::aime2026: return "aime2026";
        case Split::custom: return "custom";
    }
    throw Error("unknown split");
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "math500") return Split::math500;
    if (s == "aime2024") return Split::aime2024;
    if (s == "aime2025") return Split::aime2025;
    if (s == "aime2026") return Split::aime2026;
    if (s == "custom") return Split::custom;
    throw Error("unknown split '" + s + "'");
}

struct Problem {
    std::string id;
    std::string statement;
    std::string gold_answer;
    std::optional<int> level;        // 1..5; AIME records carry none
    std::optional<std::string> subject;
    Split split = Split::custom;

    jsonl::Json to_json() const {
        jsonl::Json j;
        j["id"] = id;
        j["statement"] = statement;
        j["gold_answer"] = gold_answer;
        j["level"] = level ? jsonl::Json(*level) : jsonl::Json(nullptr);
        j["subject"] = subject ? jsonl::Json(*subject) : jsonl::Json(nullptr);
        j["split"] = to_string(split);
        return j;
    }

    static Problem from_json(const jsonl::Json& j) {
        Problem p;
        p.id = j.at("id").get<std::string>();
        p.statement = j.at("statement").get<std::string>();
        p.gold_answer = j.at("gold_answer").get<std::string>();
        if (j.contains("level") && !j.at("level").is_null()) p.level = j.at("level").get<int>();
        if (j.contains("subject") && !j.at("subject").is_null()) p.subject = j.at("subject").get<std::string>();
        p.split = split_from_string(j.at("split").get<std::string>());
        return p;
    }
};

inline std::vector<Problem> load_corpus(const std::filesystem::path& path, Split split) {
    std::vector<Problem> out;
    std::map<std::string, std::size_t> first_line;  // id -> first line seen
    std::vector<std::string> errors;
    jsonl::for_each_record(path, [&](std::size_t lineno, const jsonl::Json& j) {
        Problem p;
        try {
            p = Problem::from_json(j);
        } catch (const std::exception& e) {
            errors.push_back("line " + std::to_string(lineno) + ": " + e.what());
            return;
        }
        if (trim_view(p.gold_answer).empty()) {
            errors.push_back("line " + std::to_string(lineno) + ": missing gold_answer for id '" + p.id + "'");
            return;
        }
        auto [it, inserted] = first_line.emplace(p.id, lineno);
        if (!inserted) {
            errors.push_back("duplicate id '" + p.id + "' on lines " + std::to_string(it->second) +
                             " and " + std::to_string(lineno));
            return;
        }
        p.split = split;
        out.push_back(std::move(p));
    });
    if (!errors.empty()) {
        std::string msg = path.string() + ":";
        for (const auto& e : errors) msg += "\n  " + e;
        throw Error(msg);
    }
    return out;
}

inline void save_corpus(const std::filesystem::path& path, const std::vector<Problem>& problems) {
    jsonl::Writer w(path);
    for (const auto& p : problems) w.write(p.to_json());
}

// Keeps Level 3-5 problems whose id does not appear in the holdout.
// Order preserved; idempotent.
inline std::vector<Problem> filter_train(const std::vector<Problem>& problems,
                                         const std::vector<Problem>& holdout) {
    std::set<std::string> held;
    for (const auto& h : holdout) held.insert(h.id);
    std::vector<Problem> out;
    for (const auto& p : problems) {
        if (!p.level || *p.level < 3 || *p.level > 5) continue;
        if (held.count(p.id)) continue;
        out.push_back(p);
    }
    return out;
}

struct Collision {
    enum class Kind { id, statement } kind;
    std::string train_id;
    std::string test_id;
    std::string test_split;
};

struct DisjointnessReport {
    std::vector<Collision> collisions;
    bool clean() const { return collisions.empty(); }
};

namespace detail {
// Whitespace-normalized statement key: runs of whitespace collapse to one
// space so formatting differences do not hide contamination.
inline std::string statement_key(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    bool in_ws = false;
    for (unsigned char c : s) {
        if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v') {
            in_ws = true;
            continue;
        }
        if (in_ws && !out.empty()) out.push_back(' ');
        in_ws = false;
        out.push_back(static_cast<char>(c));
    }
    return out;
}
}  // namespace detail

inline DisjointnessReport disjointness_report(const std::vector<Problem>& train,
                                              const std::vector<std::vector<Problem>>& tests) {
    DisjointnessReport report;
    std::map<std::string, const Problem*> train_by_id;
    std::map<std::string, const Problem*> train_by_statement;
    for (const auto& p : train) {
        train_by_id.emplace(p.id, &p);
        train_by_statement.emplace(detail::statement_key(p.statement), &p);
    }
    for (const auto& split : tests) {
        for (const auto& t : split) {
            if (auto it = train_by_id.find(t.id); it != train_by_id.end()) {
                report.collisions.push_back({Collision::Kind::id, it->second->id, t.id, to_string(t.split)});
            }
            if (auto it = train_by_statement.find(detail::statement_key(t.statement));
                it != train_by_statement.end() && it->second->id != t.id) {
                report.collisions.push_back(
                    {Collision::Kind::statement, it->second->id, t.id, to_string(t.split)});
            }
        }
    }
    return report;
}

}  // namespace draftforge::corpus
