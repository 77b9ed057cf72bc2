#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "draftforge/common.hpp"

namespace draftforge::verifier {

enum class ExtractionMethod { boxed, nl_pattern, inline_math, assignment };

inline std::string to_string(ExtractionMethod m) {
    switch (m) {
        case ExtractionMethod::boxed: return "boxed";
        case ExtractionMethod::nl_pattern: return "nl_pattern";
        case ExtractionMethod::inline_math: return "inline_math";
        case ExtractionMethod::assignment: return "assignment";
    }
    return "?";
}

struct ExtractedAnswer {
    std::string value;
    ExtractionMethod method;
    std::size_t begin = 0;  // character span of the value in the source text
    std::size_t end = 0;
};

namespace detail {

// True when s[pos] is preceded by an odd number of backslashes.
inline bool is_escaped(std::string_view s, std::size_t pos) {
    std::size_t n = 0;
    while (pos > n && s[pos - 1 - n] == '\\') ++n;
    return (n % 2) == 1;
}

// Scans a balanced {...} group starting at the '{' in s[open]. Returns the
// position one past the closing brace, or npos when unbalanced.
inline std::size_t scan_brace_group(std::string_view s, std::size_t open) {
    if (open >= s.size() || s[open] != '{') return std::string_view::npos;
    int depth = 0;
    for (std::size_t i = open; i < s.size(); ++i) {
        char c = s[i];
        if ((c == '{' || c == '}') && is_escaped(s, i)) continue;
        if (c == '{') ++depth;
        if (c == '}') {
            --depth;
            if (depth == 0) return i + 1;
        }
    }
    return std::string_view::npos;
}

inline bool is_ident_start(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}

inline bool is_ident_char(char c) {
    return is_ident_start(c) || (c >= '0' && c <= '9');
}

// Capture runs to a sentence-ending period followed by whitespace/EOL, or to
// the end of the line.
inline std::string_view capture_to_sentence_end(std::string_view s, std::size_t from) {
    std::size_t i = from;
    while (i < s.size()) {
        char c = s[i];
        if (c == '\n' || c == '\r') break;
        if (c == '.') {
            bool at_end = (i + 1 == s.size());
            bool before_ws = !at_end && (s[i + 1] == ' ' || s[i + 1] == '\t' || s[i + 1] == '\n' ||
                                         s[i + 1] == '\r');
            if (at_end || before_ws) break;
        }
        ++i;
    }
    return trim_view(s.substr(from, i - from));
}

}  // namespace detail

// Content of the LAST balanced \boxed{...} group. Groups with unbalanced
// braces are skipped.
inline std::optional<ExtractedAnswer> extract_boxed(std::string_view text) {
    static constexpr std::string_view kTag = "\\boxed";
    std::optional<ExtractedAnswer> best;
    std::size_t pos = 0;
    while ((pos = text.find(kTag, pos)) != std::string_view::npos) {
        std::size_t after = pos + kTag.size();
        while (after < text.size() && (text[after] == ' ' || text[after] == '\t')) ++after;
        if (after < text.size() && text[after] == '{') {
            std::size_t close = detail::scan_brace_group(text, after);
            if (close != std::string_view::npos) {
                auto inner = trim_view(text.substr(after + 1, close - after - 2));
                best = ExtractedAnswer{std::string(inner), ExtractionMethod::boxed, after + 1, close - 1};
            }
        }
        pos += kTag.size();
    }
    return best;
}

namespace detail {

inline std::optional<ExtractedAnswer> extract_nl_pattern(std::string_view text) {
    const std::string lower = to_lower(text);
    static constexpr std::string_view kPhrases[] = {"the answer is", "final answer is"};
    // Last non-empty capture wins, regardless of which phrase produced it.
    std::optional<ExtractedAnswer> best;
    std::size_t best_start = 0;
    for (auto phrase : kPhrases) {
        std::size_t pos = 0;
        while ((pos = lower.find(phrase, pos)) != std::string_view::npos) {
            std::size_t from = pos + phrase.size();
            while (from < text.size() && (text[from] == ' ' || text[from] == '\t')) ++from;
            if (from < text.size() && text[from] == ':') {
                ++from;
                while (from < text.size() && (text[from] == ' ' || text[from] == '\t')) ++from;
            }
            auto cap = capture_to_sentence_end(text, from);
            if (!cap.empty() && (!best || pos >= best_start)) {
                std::size_t begin = static_cast<std::size_t>(cap.data() - text.data());
                best = ExtractedAnswer{std::string(cap), ExtractionMethod::nl_pattern, begin,
                                       begin + cap.size()};
                best_start = pos;
            }
            pos += phrase.size();
        }
    }
    return best;
}

inline std::optional<ExtractedAnswer> extract_inline_math(std::string_view text) {
    // Unescaped '$' delimiters paired sequentially; "$$" counts as one
    // delimiter. Last pair with non-empty content wins.
    std::vector<std::size_t> delims;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '$' || is_escaped(text, i)) continue;
        delims.push_back(i);
        if (i + 1 < text.size() && text[i + 1] == '$') ++i;  // swallow the double
    }
    std::optional<ExtractedAnswer> best;
    for (std::size_t d = 0; d + 1 < delims.size(); d += 2) {
        std::size_t open = delims[d];
        while (open < text.size() && text[open] == '$') ++open;
        std::size_t close = delims[d + 1];
        auto inner = trim_view(text.substr(open, close - open));
        if (!inner.empty()) {
            std::size_t begin = static_cast<std::size_t>(inner.data() - text.data());
            best = ExtractedAnswer{std::string(inner), ExtractionMethod::inline_math, begin,
                                   begin + inner.size()};
        }
    }
    return best;
}

inline std::optional<ExtractedAnswer> extract_assignment(std::string_view text) {
    // Last line of the form `identifier = VALUE`.
    std::optional<ExtractedAnswer> best;
    std::size_t line_start = 0;
    while (line_start <= text.size()) {
        std::size_t line_end = text.find('\n', line_start);
        if (line_end == std::string_view::npos) line_end = text.size();
        std::string_view line = text.substr(line_start, line_end - line_start);

        std::size_t i = 0;
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        if (i < line.size() && is_ident_start(line[i])) {
            std::size_t id_end = i;
            while (id_end < line.size() && is_ident_char(line[id_end])) ++id_end;
            std::size_t eq = id_end;
            while (eq < line.size() && (line[eq] == ' ' || line[eq] == '\t')) ++eq;
            if (eq < line.size() && line[eq] == '=' && (eq + 1 == line.size() || line[eq + 1] != '=')) {
                auto value = trim_view(line.substr(eq + 1));
                while (!value.empty() && value.back() == '.') value = trim_view(value.substr(0, value.size() - 1));
                if (!value.empty()) {
                    std::size_t begin = static_cast<std::size_t>(value.data() - text.data());
                    best = ExtractedAnswer{std::string(value), ExtractionMethod::assignment, begin,
                                           begin + value.size()};
                }
            }
        }
        if (line_end == text.size()) break;
        line_start = line_end + 1;
    }
    return best;
}

}  // namespace detail

// Prioritized fallback chain: boxed, then "the answer is X", then the last
// inline $...$ segment, then the last bare `var = VALUE` line. Stops at the
// first method that produces a value.
inline std::optional<ExtractedAnswer> extract_fallback(std::string_view text) {
    if (auto b = extract_boxed(text)) return b;
    if (auto n = detail::extract_nl_pattern(text)) return n;
    if (auto m = detail::extract_inline_math(text)) return m;
    if (auto a = detail::extract_assignment(text)) return a;
    return std::nullopt;
}

namespace detail {

struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;
};

inline bool mul_overflows(std::int64_t a, std::int64_t b, std::int64_t& out) {
    return __builtin_mul_overflow(a, b, &out);
}

// SIGN? digits [. digits] [e SIGN? digits] parsed exactly into num/den.
// Fails on overflow so the caller can fall back to floating point.
inline std::optional<Rational> parse_number(std::string_view s, std::size_t& i) {
    std::int64_t sign = 1;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
        if (s[i] == '-') sign = -1;
        ++i;
    }
    std::int64_t mantissa = 0;
    int frac_digits = 0;
    bool any = false;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') {
        if (mul_overflows(mantissa, 10, mantissa)) return std::nullopt;
        if (__builtin_add_overflow(mantissa, s[i] - '0', &mantissa)) return std::nullopt;
        ++i;
        any = true;
    }
    if (i < s.size() && s[i] == '.') {
        ++i;
        while (i < s.size() && s[i] >= '0' && s[i] <= '9') {
            if (mul_overflows(mantissa, 10, mantissa)) return std::nullopt;
            if (__builtin_add_overflow(mantissa, s[i] - '0', &mantissa)) return std::nullopt;
            ++frac_digits;
            ++i;
            any = true;
        }
    }
    if (!any) return std::nullopt;
    int exp = 0;
    if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
        std::size_t save = i;
        ++i;
        int esign = 1;
        if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
            if (s[i] == '-') esign = -1;
            ++i;
        }
        bool eany = false;
        int ev = 0;
        while (i < s.size() && s[i] >= '0' && s[i] <= '9') {
            ev = ev * 10 + (s[i] - '0');
            if (ev > 64) return std::nullopt;
            ++i;
            eany = true;
        }
        if (!eany) {
            i = save;  // bare 'e' is not an exponent
        } else {
            exp = esign * ev;
        }
    }
    Rational r{sign * mantissa, 1};
    int shift = exp - frac_digits;
    while (shift > 0) {
        if (mul_overflows(r.num, 10, r.num)) return std::nullopt;
        --shift;
    }
    while (shift < 0) {
        if (mul_overflows(r.den, 10, r.den)) return std::nullopt;
        ++shift;
    }
    return r;
}

inline std::string_view strip_outer_group(std::string_view s) {
    s = trim_view(s);
    while (s.size() >= 2 &&
           ((s.front() == '(' && s.back() == ')') || (s.front() == '{' && s.back() == '}'))) {
        // only strip when the pair actually encloses the whole string
        int depth = 0;
        bool whole = true;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == s.front()) ++depth;
            if (s[i] == s.back()) {
                --depth;
                if (depth == 0 && i + 1 != s.size()) {
                    whole = false;
                    break;
                }
            }
        }
        if (!whole) break;
        s = trim_view(s.substr(1, s.size() - 2));
    }
    return s;
}

inline std::optional<Rational> parse_rational(std::string_view s) {
    s = strip_outer_group(s);
    if (s.empty()) return std::nullopt;
    std::size_t i = 0;
    std::optional<Rational> num;
    if (s[i] == '(' || s[i] == '{') {
        std::size_t close = s.find(s[i] == '(' ? ')' : '}', i);
        if (close == std::string_view::npos) return std::nullopt;
        std::size_t j = 0;
        auto inner = trim_view(s.substr(i + 1, close - i - 1));
        num = parse_number(inner, j);
        if (!num || j != inner.size()) return std::nullopt;
        i = close + 1;
    } else {
        num = parse_number(s, i);
        if (!num) return std::nullopt;
    }
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    if (i == s.size()) return num;
    if (s[i] != '/') return std::nullopt;
    ++i;
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::optional<Rational> den;
    if (i < s.size() && (s[i] == '(' || s[i] == '{')) {
        std::size_t close = s.find(s[i] == '(' ? ')' : '}', i);
        if (close == std::string_view::npos) return std::nullopt;
        std::size_t j = 0;
        auto inner = trim_view(s.substr(i + 1, close - i - 1));
        den = parse_number(inner, j);
        if (!den || j != inner.size()) return std::nullopt;
        i = close + 1;
    } else {
        den = parse_number(s, i);
        if (!den) return std::nullopt;
    }
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    if (i != s.size()) return std::nullopt;
    // num / den as a single rational
    __int128 n = static_cast<__int128>(num->num) * den->den;
    __int128 d = static_cast<__int128>(num->den) * den->num;
    if (d == 0) return std::nullopt;
    if (n > INT64_MAX || n < INT64_MIN || d > INT64_MAX || d < INT64_MIN) return std::nullopt;
    return Rational{static_cast<std::int64_t>(n), static_cast<std::int64_t>(d)};
}

inline bool rational_equal(const Rational& a, const Rational& b) {
    if (a.den == 0 || b.den == 0) return false;
    return static_cast<__int128>(a.num) * b.den == static_cast<__int128>(b.num) * a.den;
}

inline void replace_all(std::string& s, std::string_view from, std::string_view to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
}

inline bool needs_parens(std::string_view s) {
    for (char c : s) {
        if (c == '+' || c == '-' || c == '*' || c == '/') return true;
    }
    return false;
}

// Rewrites every \frac{A}{B} to A/B (parenthesized when compound),
// innermost groups first via recursion on the contents.
inline std::string rewrite_frac(std::string s) {
    std::size_t pos;
    while ((pos = s.find("\\frac")) != std::string::npos) {
        std::size_t open = pos + 5;
        while (open < s.size() && (s[open] == ' ' || s[open] == '\t')) ++open;
        std::size_t num_end = scan_brace_group(s, open);
        if (num_end == std::string::npos) break;
        std::size_t den_open = num_end;
        while (den_open < s.size() && (s[den_open] == ' ' || s[den_open] == '\t')) ++den_open;
        std::size_t den_end = scan_brace_group(s, den_open);
        if (den_end == std::string::npos) break;
        std::string num = rewrite_frac(s.substr(open + 1, num_end - open - 2));
        std::string den = rewrite_frac(s.substr(den_open + 1, den_end - den_open - 2));
        num = trim(num);
        den = trim(den);
        std::string repl = (needs_parens(num) ? "(" + num + ")" : num) + "/" +
                           (needs_parens(den) ? "(" + den + ")" : den);
        s.replace(pos, den_end - pos, repl);
    }
    return s;
}

inline std::string normalize(std::string_view raw) {
    std::string s = trim(raw);
    replace_all(s, "\\dfrac", "\\frac");
    replace_all(s, "\\left", "");
    replace_all(s, "\\right", "");
    replace_all(s, "\\,", "");
    replace_all(s, "\\;", "");
    replace_all(s, "\\!", "");
    replace_all(s, "$", "");
    s = rewrite_frac(std::move(s));
    s = trim(s);
    if (!s.empty() && s.back() == '.') s.pop_back();
    return trim(s);
}

inline std::optional<long double> parse_float(std::string_view s) {
    s = strip_outer_group(s);
    if (s.empty()) return std::nullopt;
    std::string buf(s);
    char* end = nullptr;
    errno = 0;
    long double v = std::strtold(buf.c_str(), &end);
    if (end != buf.c_str() + buf.size() || errno == ERANGE || !std::isfinite(static_cast<double>(v)))
        return std::nullopt;
    return v;
}

}  // namespace detail

// True iff a and b denote the same value after LaTeX normalization: exact
// comparison on the rational subset, absolute tolerance 1e-9 for float-only
// operands, and exact normalized-string match otherwise. Never throws.
inline bool math_equal(std::string_view a, std::string_view b) {
    std::string na = detail::normalize(a);
    std::string nb = detail::normalize(b);
    if (na.empty() || nb.empty()) return false;
    auto ra = detail::parse_rational(na);
    auto rb = detail::parse_rational(nb);
    if (ra && rb) return detail::rational_equal(*ra, *rb);
    auto fa = detail::parse_float(na);
    auto fb = detail::parse_float(nb);
    if (fa && fb) return std::fabs(static_cast<double>(*fa - *fb)) <= 1e-9;
    // symbolic (or mixed numeric/symbolic): exact normalized match only
    return na == nb;
}

// Lenient reward predicate: any extraction method, then math_equal.
inline bool quasi_correct(std::string_view completion, std::string_view gold) {
    auto e = extract_fallback(completion);
    return e && math_equal(e->value, gold);
}

// Strict evaluation predicate: boxed-only extraction, then math_equal.
inline bool strict_correct(std::string_view completion, std::string_view gold) {
    auto e = extract_boxed(completion);
    return e && math_equal(e->value, gold);
}

// Step-by-step record of the extraction chain, for the debug CLI.
struct TraceStep {
    ExtractionMethod method;
    bool matched;
    std::string value;
};

inline std::vector<TraceStep> extraction_trace(std::string_view text) {
    std::vector<TraceStep> steps;
    auto add = [&](ExtractionMethod m, const std::optional<ExtractedAnswer>& e) {
        steps.push_back({m, e.has_value(), e ? e->value : ""});
    };
    add(ExtractionMethod::boxed, extract_boxed(text));
    add(ExtractionMethod::nl_pattern, detail::extract_nl_pattern(text));
    add(ExtractionMethod::inline_math, detail::extract_inline_math(text));
    add(ExtractionMethod::assignment, detail::extract_assignment(text));
    return steps;
}

}  // namespace draftforge::verifier
