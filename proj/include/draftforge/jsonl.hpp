#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "draftforge/common.hpp"

namespace draftforge::jsonl {

// Insertion-ordered JSON keeps serialized field order equal to the schema
// order, which the line formats require to be byte-stable.
using Json = nlohmann::ordered_json;

// Calls fn(line_number, object) for every non-empty line. Parse failures are
// collected and reported together with their 1-based line numbers.
inline void for_each_record(const std::filesystem::path& path,
                            const std::function<void(std::size_t, const Json&)>& fn) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::string> bad;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim_view(line).empty()) continue;
        Json j = Json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            bad.push_back("line " + std::to_string(lineno) + ": malformed JSON");
            continue;
        }
        fn(lineno, j);
    }
    if (!bad.empty()) {
        std::string msg = path.string() + ": " + std::to_string(bad.size()) + " malformed line(s):";
        for (const auto& b : bad) msg += "\n  " + b;
        throw Error(msg);
    }
}

inline std::vector<Json> read_all(const std::filesystem::path& path) {
    std::vector<Json> out;
    for_each_record(path, [&](std::size_t, const Json& j) { out.push_back(j); });
    return out;
}

class Writer {
public:
    explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
        if (!out_) throw Error("cannot write " + path.string());
    }

    void write(const Json& j) { out_ << j.dump() << '\n'; }

    void flush() { out_.flush(); }

private:
    std::ofstream out_;
};

inline void write_all(const std::filesystem::path& path, const std::vector<Json>& records) {
    Writer w(path);
    for (const auto& j : records) w.write(j);
}

}  // namespace draftforge::jsonl
