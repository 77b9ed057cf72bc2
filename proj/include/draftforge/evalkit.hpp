#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "draftforge/common.hpp"
#include "draftforge/corpus.hpp"
#include "draftforge/rollout.hpp"
#include "draftforge/verifier.hpp"

namespace draftforge::evalkit {

namespace detail {

// Continued fraction for the regularized incomplete beta (modified Lentz).
inline double betacf(double a, double b, double x) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-15;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 500; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

inline double ibeta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                         a * std::log(x) + b * std::log1p(-x);
    const double bt = std::exp(ln_bt);
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace detail

// P(|T_df| >= |t|), exact via the incomplete beta.
inline double student_t_two_sided_p(double t, double df) {
    if (df <= 0) throw Error("student_t_two_sided_p: df must be positive");
    if (!std::isfinite(t)) return 0.0;
    return detail::ibeta(df / 2.0, 0.5, df / (df + t * t));
}

// Upper-tail quantile: smallest t with CDF(t) = q, for q in [0.5, 1).
inline double student_t_quantile(double q, double df) {
    if (df <= 0) throw Error("student_t_quantile: df must be positive");
    if (!(q > 0.0 && q < 1.0)) throw Error("student_t_quantile: q must be in (0,1)");
    if (q == 0.5) return 0.0;
    const bool flip = q < 0.5;
    const double alpha = flip ? 2.0 * q : 2.0 * (1.0 - q);  // two-sided tail mass
    double lo = 0.0;
    double hi = 1.0;
    while (student_t_two_sided_p(hi, df) > alpha) {
        hi *= 2.0;
        if (hi > 1e30) break;
    }
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (student_t_two_sided_p(mid, df) > alpha) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    const double t = 0.5 * (lo + hi);
    return flip ? -t : t;
}

// Unbiased pass@k estimator: 1 - C(n-c,k)/C(n,k), as a running product so
// n=2048 never touches factorials.
inline double pass_at_k(long long n, long long c, long long k) {
    if (n < 0 || c < 0 || c > n) throw Error("pass_at_k: need 0 <= c <= n");
    if (k < 1) throw Error("pass_at_k: need k >= 1");
    if (k > n) throw Error("pass_at_k: k exceeds n");
    if (c == 0) return 0.0;
    if (n - c < k) return 1.0;
    double prod = 1.0;
    for (long long i = 0; i < k; ++i) {
        prod *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
    }
    return std::clamp(1.0 - prod, 0.0, 1.0);
}

struct ProblemOutcome {
    std::string problem_id;
    std::int64_t seed = 0;
    long long n = 0;  // samples drawn
    long long c = 0;  // samples strictly correct

    jsonl::Json to_json() const {
        jsonl::Json j;
        j["problem_id"] = problem_id;
        j["seed"] = seed;
        j["n"] = n;
        j["c"] = c;
        return j;
    }

    static ProblemOutcome from_json(const jsonl::Json& j) {
        ProblemOutcome o;
        o.problem_id = j.at("problem_id").get<std::string>();
        o.seed = j.at("seed").get<std::int64_t>();
        o.n = j.at("n").get<long long>();
        o.c = j.at("c").get<long long>();
        if (o.c < 0 || o.c > o.n) throw Error("ProblemOutcome: need 0 <= c <= n for " + o.problem_id);
        return o;
    }
};

enum class Aggregation { per_problem, macro_mean, seed_mean };

struct PassKCurve {
    std::vector<long long> ks;
    std::vector<double> estimates;
    Aggregation aggregation = Aggregation::seed_mean;
};

// ks grid used by the figures: powers of two up to 1024, plus n itself.
inline std::vector<long long> default_ks(long long n) {
    std::vector<long long> ks;
    for (long long k = 1; k <= 1024 && k <= n; k *= 2) ks.push_back(k);
    if (n >= 1 && (ks.empty() || ks.back() != n)) ks.push_back(n);
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
    return ks;
}

namespace detail {

// problem -> seed -> (n, c); rejects duplicate (problem, seed) records and
// inconsistent n within one seed.
inline std::map<std::string, std::map<std::int64_t, std::pair<long long, long long>>>
group_outcomes(const std::vector<ProblemOutcome>& outcomes) {
    std::map<std::string, std::map<std::int64_t, std::pair<long long, long long>>> grouped;
    std::map<std::int64_t, long long> n_by_seed;
    for (const auto& o : outcomes) {
        auto [it, inserted] = grouped[o.problem_id].emplace(o.seed, std::make_pair(o.n, o.c));
        if (!inserted)
            throw Error("duplicate outcome for problem '" + o.problem_id + "' seed " +
                        std::to_string(o.seed));
        auto [nit, fresh] = n_by_seed.emplace(o.seed, o.n);
        if (!fresh && nit->second != o.n)
            throw Error("inconsistent n within seed " + std::to_string(o.seed) + ": " +
                        std::to_string(nit->second) + " vs " + std::to_string(o.n));
    }
    return grouped;
}

}  // namespace detail

// Per-problem pass@k, averaged across seeds first.
inline std::map<std::string, double> per_problem_seed_mean(const std::vector<ProblemOutcome>& outcomes,
                                                           long long k) {
    auto grouped = detail::group_outcomes(outcomes);
    std::map<std::string, double> out;
    for (const auto& [id, by_seed] : grouped) {
        double sum = 0.0;
        for (const auto& [seed, nc] : by_seed) sum += pass_at_k(nc.first, nc.second, k);
        out[id] = sum / static_cast<double>(by_seed.size());
    }
    return out;
}

// Seed-first aggregation: seed mean per problem, then mean across problems.
inline PassKCurve curve(const std::vector<ProblemOutcome>& outcomes, const std::vector<long long>& ks) {
    if (outcomes.empty()) throw Error("curve: no outcomes");
    PassKCurve result;
    result.ks = ks;
    result.aggregation = Aggregation::seed_mean;
    for (long long k : ks) {
        auto per_problem = per_problem_seed_mean(outcomes, k);
        double sum = 0.0;
        for (const auto& [id, v] : per_problem) sum += v;
        result.estimates.push_back(sum / static_cast<double>(per_problem.size()));
    }
    return result;
}

struct SeedStats {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation (n-1 denominator)
    int n_seeds = 0;
    double ci95_halfwidth = 0.0;
};

inline SeedStats ci95(double mean, double std, int n) {
    if (n < 2) throw Error("ci95: need n >= 2");
    if (std < 0) throw Error("ci95: std must be >= 0");
    SeedStats s;
    s.mean = mean;
    s.std = std;
    s.n_seeds = n;
    s.ci95_halfwidth = student_t_quantile(0.975, n - 1.0) * std / std::sqrt(static_cast<double>(n));
    return s;
}

inline SeedStats seed_stats(const std::vector<double>& values) {
    if (values.size() < 2) throw Error("seed_stats: need at least 2 values");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    return ci95(mean, sd, static_cast<int>(values.size()));
}

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p_two_sided = 1.0;
    bool degenerate_variance = false;
};

inline WelchResult welch_t(double m1, double s1, int n1, double m2, double s2, int n2) {
    if (n1 < 2 || n2 < 2) throw Error("welch_t: need n1, n2 >= 2");
    if (s1 < 0 || s2 < 0) throw Error("welch_t: std must be >= 0");
    WelchResult r;
    const double v1 = s1 * s1 / n1;
    const double v2 = s2 * s2 / n2;
    if (v1 + v2 == 0.0) {
        r.degenerate_variance = true;
        r.df = static_cast<double>(n1 + n2 - 2);
        if (m1 == m2) {
            r.t = 0.0;
            r.p_two_sided = 1.0;
        } else {
            r.t = m1 > m2 ? std::numeric_limits<double>::infinity()
                          : -std::numeric_limits<double>::infinity();
            r.p_two_sided = 0.0;
        }
        return r;
    }
    r.t = (m1 - m2) / std::sqrt(v1 + v2);
    r.df = (v1 + v2) * (v1 + v2) / (v1 * v1 / (n1 - 1) + v2 * v2 / (n2 - 1));
    r.p_two_sided = student_t_two_sided_p(r.t, r.df);
    return r;
}

// ---------------------------------------------------------------------------
// Greedy pass@1 by level
// ---------------------------------------------------------------------------

struct LevelAccuracy {
    int total = 0;
    int correct = 0;
    double pct() const { return total == 0 ? 0.0 : 100.0 * correct / total; }
};

struct GreedyReport {
    struct PerSeed {
        std::int64_t seed = 0;
        LevelAccuracy overall;
        std::map<int, LevelAccuracy> by_level;
    };
    std::vector<PerSeed> seeds;
    double overall_pct_mean = 0.0;
    std::map<int, double> by_level_pct_mean;
    std::vector<std::string> warnings;
};

inline GreedyReport greedy_pass1(const std::vector<infer::RolloutRecord>& rollouts,
                                 const std::vector<corpus::Problem>& problems) {
    std::map<std::string, const corpus::Problem*> by_id;
    for (const auto& p : problems) by_id.emplace(p.id, &p);

    // (seed, problem) -> strictly correct
    std::map<std::int64_t, std::map<std::string, bool>> seen;
    GreedyReport report;
    for (const auto& r : rollouts) {
        if (!by_id.count(r.problem_id)) {
            report.warnings.push_back("rollout for unknown problem '" + r.problem_id + "'");
            continue;
        }
        bool ok = r.correct_strict
                      ? *r.correct_strict
                      : verifier::strict_correct(r.text, by_id.at(r.problem_id)->gold_answer);
        auto [it, inserted] = seen[r.seed].emplace(r.problem_id, ok);
        if (!inserted)
            throw Error("greedy_pass1: duplicate rollout for problem '" + r.problem_id + "' seed " +
                        std::to_string(r.seed));
    }
    if (seen.empty()) throw Error("greedy_pass1: no rollouts");

    for (const auto& [seed, outcomes] : seen) {
        GreedyReport::PerSeed per;
        per.seed = seed;
        for (const auto& p : problems) {
            bool ok = false;
            auto it = outcomes.find(p.id);
            if (it == outcomes.end()) {
                report.warnings.push_back("missing rollout for problem '" + p.id + "' seed " +
                                          std::to_string(seed) + "; counted incorrect");
            } else {
                ok = it->second;
            }
            per.overall.total += 1;
            per.overall.correct += ok ? 1 : 0;
            if (p.level) {
                auto& bucket = per.by_level[*p.level];
                bucket.total += 1;
                bucket.correct += ok ? 1 : 0;
            }
        }
        report.seeds.push_back(std::move(per));
    }

    double acc = 0.0;
    std::map<int, double> level_acc;
    std::map<int, int> level_n;
    for (const auto& per : report.seeds) {
        acc += per.overall.pct();
        for (const auto& [lvl, bucket] : per.by_level) {
            level_acc[lvl] += bucket.pct();
            level_n[lvl] += 1;
        }
    }
    report.overall_pct_mean = acc / static_cast<double>(report.seeds.size());
    for (const auto& [lvl, sum] : level_acc) report.by_level_pct_mean[lvl] = sum / level_n[lvl];
    return report;
}

// ---------------------------------------------------------------------------
// Per-problem creation/inverse analysis
// ---------------------------------------------------------------------------

struct ProblemDelta {
    std::string problem_id;
    double base_value = 0.0;
    double ours_value = 0.0;
    double delta = 0.0;
};

struct AnalysisReport {
    long long k = 0;
    std::vector<ProblemDelta> per_problem;
    int gains_ge_30pp = 0;
    int gains_ge_50pp = 0;
    int losses_ge_30pp = 0;
    int losses_ge_50pp = 0;
    std::vector<std::string> creation_ids;  // base = 0, ours > 0
    std::vector<std::string> inverse_ids;   // ours = 0, base > 0
    int above_diagonal = 0;
    int on_diagonal = 0;  // |gap| < 0.1pp
    int below_diagonal = 0;

    jsonl::Json to_json() const {
        jsonl::Json j;
        j["k"] = k;
        j["gains_ge_30pp"] = gains_ge_30pp;
        j["gains_ge_50pp"] = gains_ge_50pp;
        j["losses_ge_30pp"] = losses_ge_30pp;
        j["losses_ge_50pp"] = losses_ge_50pp;
        j["creation"] = creation_ids;
        j["inverse"] = inverse_ids;
        j["above_diagonal"] = above_diagonal;
        j["on_diagonal"] = on_diagonal;
        j["below_diagonal"] = below_diagonal;
        auto rows = jsonl::Json::array();
        for (const auto& d : per_problem) {
            jsonl::Json row;
            row["problem_id"] = d.problem_id;
            row["base"] = d.base_value;
            row["ours"] = d.ours_value;
            row["delta"] = d.delta;
            rows.push_back(row);
        }
        j["per_problem"] = rows;
        return j;
    }
};

inline AnalysisReport per_problem_analysis(const std::vector<ProblemOutcome>& base,
                                           const std::vector<ProblemOutcome>& ours, long long k) {
    auto base_values = per_problem_seed_mean(base, k);
    auto ours_values = per_problem_seed_mean(ours, k);
    if (base_values.size() != ours_values.size())
        throw Error("per_problem_analysis: problem sets differ in size");
    for (const auto& [id, v] : base_values) {
        if (!ours_values.count(id)) throw Error("per_problem_analysis: problem '" + id + "' missing on one side");
    }

    AnalysisReport report;
    report.k = k;
    constexpr double kDiagonalEps = 0.001;  // 0.1pp on the [0,1] scale
    for (const auto& [id, bv] : base_values) {
        const double ov = ours_values.at(id);
        const double d = ov - bv;
        report.per_problem.push_back({id, bv, ov, d});
        if (d >= 0.30) report.gains_ge_30pp += 1;
        if (d >= 0.50) report.gains_ge_50pp += 1;
        if (-d >= 0.30) report.losses_ge_30pp += 1;
        if (-d >= 0.50) report.losses_ge_50pp += 1;
        if (bv == 0.0 && ov > 0.0) report.creation_ids.push_back(id);
        if (ov == 0.0 && bv > 0.0) report.inverse_ids.push_back(id);
        if (std::fabs(d) < kDiagonalEps) {
            report.on_diagonal += 1;
        } else if (d > 0) {
            report.above_diagonal += 1;
        } else {
            report.below_diagonal += 1;
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Cross-model solve matrix
// ---------------------------------------------------------------------------

// Orders "P2" before "P10" and "I-6" before "II-1" by comparing digit runs
// numerically.
inline bool natural_less(const std::string& a, const std::string& b) {
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        const bool da = std::isdigit(static_cast<unsigned char>(a[i])) != 0;
        const bool db = std::isdigit(static_cast<unsigned char>(b[j])) != 0;
        if (da && db) {
            std::size_t ie = i, je = j;
            while (ie < a.size() && std::isdigit(static_cast<unsigned char>(a[ie]))) ++ie;
            while (je < b.size() && std::isdigit(static_cast<unsigned char>(b[je]))) ++je;
            // compare by numeric value: strip leading zeros, then by length
            std::string_view na(a.data() + i, ie - i), nb(b.data() + j, je - j);
            while (na.size() > 1 && na.front() == '0') na.remove_prefix(1);
            while (nb.size() > 1 && nb.front() == '0') nb.remove_prefix(1);
            if (na.size() != nb.size()) return na.size() < nb.size();
            if (na != nb) return na < nb;
            i = ie;
            j = je;
        } else {
            if (a[i] != b[j]) return a[i] < b[j];
            ++i;
            ++j;
        }
    }
    return a.size() < b.size();
}

struct SolveMatrix {
    std::vector<std::string> model_names;                 // row order as given
    std::vector<std::string> problem_ids;                 // natural order
    std::vector<std::vector<bool>> solved;                // [model][problem]
    std::vector<int> solved_counts;                       // per model

    bool is_solved(const std::string& model, const std::string& id) const {
        auto mi = std::find(model_names.begin(), model_names.end(), model);
        auto pi = std::find(problem_ids.begin(), problem_ids.end(), id);
        if (mi == model_names.end() || pi == problem_ids.end()) throw Error("solve matrix lookup failed");
        return solved[mi - model_names.begin()][pi - problem_ids.begin()];
    }
};

// '+' iff total correct count across all seeds is positive.
inline SolveMatrix solve_matrix(const std::vector<std::pair<std::string, std::vector<ProblemOutcome>>>& by_model) {
    SolveMatrix m;
    std::set<std::string> ids;
    for (const auto& [model, outcomes] : by_model) {
        m.model_names.push_back(model);
        for (const auto& o : outcomes) ids.insert(o.problem_id);
    }
    m.problem_ids.assign(ids.begin(), ids.end());
    std::sort(m.problem_ids.begin(), m.problem_ids.end(), natural_less);
    for (const auto& [model, outcomes] : by_model) {
        std::map<std::string, long long> total_c;
        for (const auto& o : outcomes) total_c[o.problem_id] += o.c;
        std::vector<bool> row;
        int count = 0;
        for (const auto& id : m.problem_ids) {
            const bool s = total_c.count(id) && total_c[id] > 0;
            row.push_back(s);
            count += s ? 1 : 0;
        }
        m.solved.push_back(std::move(row));
        m.solved_counts.push_back(count);
    }
    return m;
}

struct PairwiseDiff {
    std::vector<std::string> creation;  // solved by a, not by b
    std::vector<std::string> inverse;   // solved by b, not by a
};

inline PairwiseDiff pairwise_diff(const SolveMatrix& m, const std::string& a, const std::string& b) {
    PairwiseDiff diff;
    for (const auto& id : m.problem_ids) {
        const bool sa = m.is_solved(a, id);
        const bool sb = m.is_solved(b, id);
        if (sa && !sb) diff.creation.push_back(id);
        if (sb && !sa) diff.inverse.push_back(id);
    }
    return diff;
}

namespace detail {

struct IdParts {
    std::string year;     // portion before the first '-'
    std::string section;  // non-digit portion of the label ("P", "I", "II")
};

inline IdParts id_parts(const std::string& id) {
    IdParts parts;
    auto dash = id.find('-');
    parts.year = dash == std::string::npos ? "" : id.substr(0, dash);
    std::string label = dash == std::string::npos ? id : id.substr(dash + 1);
    for (char c : label) {
        if (!std::isdigit(static_cast<unsigned char>(c)) && c != '-') parts.section.push_back(c);
    }
    return parts;
}

}  // namespace detail

// Fixed-width grid: one line per model, flags in chunks of 10 within each
// section, a digit ruler on top, and per-model solved totals.
inline std::string render_solve_matrix(const SolveMatrix& m) {
    // group problem columns: (year, section) -> chunked runs of 10
    std::vector<std::size_t> chunk_breaks;  // indices where a new chunk starts
    std::string prev_key;
    std::size_t run = 0;
    for (std::size_t i = 0; i < m.problem_ids.size(); ++i) {
        auto parts = detail::id_parts(m.problem_ids[i]);
        std::string key = parts.year + "|" + parts.section;
        if (key != prev_key || run == 10) {
            chunk_breaks.push_back(i);
            run = 0;
            prev_key = key;
        }
        ++run;
    }

    std::size_t name_width = 0;
    for (const auto& name : m.model_names) name_width = std::max(name_width, name.size());
    name_width += 2;

    auto render_row = [&](const std::string& label, auto cell) {
        std::string line = label;
        line.resize(name_width, ' ');
        for (std::size_t i = 0; i < m.problem_ids.size(); ++i) {
            if (i != 0 && std::find(chunk_breaks.begin(), chunk_breaks.end(), i) != chunk_breaks.end())
                line.push_back(' ');
            line.push_back(cell(i));
        }
        return line;
    };

    std::ostringstream out;
    std::size_t pos_in_chunk = 0;
    out << render_row("", [&](std::size_t i) {
        if (std::find(chunk_breaks.begin(), chunk_breaks.end(), i) != chunk_breaks.end()) pos_in_chunk = 0;
        ++pos_in_chunk;
        return static_cast<char>('0' + pos_in_chunk % 10);
    }) << '\n';
    for (std::size_t r = 0; r < m.model_names.size(); ++r) {
        out << render_row(m.model_names[r], [&](std::size_t i) { return m.solved[r][i] ? '+' : '.'; });
        out << "  " << m.solved_counts[r] << "/" << m.problem_ids.size() << '\n';
    }
    return out.str();
}

}  // namespace draftforge::evalkit
