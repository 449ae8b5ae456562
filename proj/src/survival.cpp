#include "pgx/survival.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <map>

#include "pgx/errors.hpp"
#include "pgx/format.hpp"

namespace pgx {

namespace {

void check_outcomes(std::span<const SurvivalOutcome> outcomes) {
    for (const auto& o : outcomes) {
        if (!(o.time > 0.0)) {
            throw DomainError("survival time must be positive, got " +
                              g17(o.time));
        }
        if (o.event != 0 && o.event != 1) {
            throw DomainError("event flag must be 0 or 1, got " +
                              std::to_string(o.event));
        }
    }
}

// Distinct event times in increasing order, with the event count at each.
std::map<double, std::size_t> event_table(
    std::span<const SurvivalOutcome> outcomes) {
    std::map<double, std::size_t> table;
    for (const auto& o : outcomes) {
        if (o.event == 1) ++table[o.time];
    }
    return table;
}

std::size_t at_risk_count(std::span<const SurvivalOutcome> outcomes,
                          double t) {
    std::size_t n = 0;
    for (const auto& o : outcomes) {
        if (o.time >= t) ++n;
    }
    return n;
}

}  // namespace

double c_index(std::span<const double> risks,
               std::span<const SurvivalOutcome> outcomes) {
    if (risks.size() != outcomes.size()) {
        throw ValidationError("risk count " + std::to_string(risks.size()) +
                              " does not match outcome count " +
                              std::to_string(outcomes.size()));
    }
    check_outcomes(outcomes);

    double score = 0.0;
    std::size_t comparable = 0;
    const std::size_t n = outcomes.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            std::size_t earlier, later;
            if (outcomes[i].time == outcomes[j].time) {
                // Tied times: usable only when exactly one subject had the
                // event, and that subject is the one expected to rank higher.
                if (outcomes[i].event + outcomes[j].event != 1) continue;
                earlier = outcomes[i].event == 1 ? i : j;
                later = earlier == i ? j : i;
            } else {
                earlier = outcomes[i].time < outcomes[j].time ? i : j;
                later = earlier == i ? j : i;
                if (outcomes[earlier].event == 0) continue;
            }
            ++comparable;
            if (risks[earlier] > risks[later]) {
                score += 1.0;
            } else if (risks[earlier] == risks[later]) {
                score += 0.5;
            }
        }
    }
    if (comparable == 0) {
        throw ValidationError(
            "concordance is undefined: no comparable pairs");
    }
    return score / static_cast<double>(comparable);
}

KMCurve km_estimate(std::span<const SurvivalOutcome> outcomes) {
    if (outcomes.empty()) {
        throw ValidationError("cannot estimate a curve from zero subjects");
    }
    check_outcomes(outcomes);

    KMCurve curve;
    double s = 1.0;
    for (const auto& [t, d] : event_table(outcomes)) {
        const std::size_t n = at_risk_count(outcomes, t);
        s *= 1.0 - static_cast<double>(d) / static_cast<double>(n);
        curve.times.push_back(t);
        curve.survival.push_back(s);
        curve.at_risk.push_back(n);
        curve.events.push_back(d);
    }
    return curve;
}

LogRankResult log_rank(std::span<const SurvivalOutcome> group_a,
                       std::span<const SurvivalOutcome> group_b) {
    if (group_a.empty() || group_b.empty()) {
        throw ValidationError("log-rank test needs two nonempty groups");
    }
    check_outcomes(group_a);
    check_outcomes(group_b);

    // Pool distinct event times across both groups.
    const std::map<double, std::size_t> table_a = event_table(group_a);
    std::map<double, std::size_t> pooled = table_a;
    for (const auto& [t, d] : event_table(group_b)) pooled[t] += d;

    double observed_minus_expected = 0.0;
    double variance = 0.0;
    for (const auto& [t, d_total] : pooled) {
        const double n1 = static_cast<double>(at_risk_count(group_a, t));
        const double n2 = static_cast<double>(at_risk_count(group_b, t));
        const double n = n1 + n2;
        const double d = static_cast<double>(d_total);
        const auto it = table_a.find(t);
        const double d1 =
            it == table_a.end() ? 0.0 : static_cast<double>(it->second);
        observed_minus_expected += d1 - d * n1 / n;
        if (n > 1.0) {
            variance += d * (n1 / n) * (n2 / n) * (n - d) / (n - 1.0);
        }
    }

    if (variance == 0.0) return {0.0, 1.0};
    const double chi2 =
        observed_minus_expected * observed_minus_expected / variance;
    return {chi2, chi2_sf_1df(chi2)};
}

double chi2_sf_1df(double x) {
    if (x < 0.0) {
        throw DomainError("chi-squared statistic must be nonnegative, got " +
                          g17(x));
    }
    // For one degree of freedom the statistic is a squared standard normal,
    // so the survival function reduces to erfc of the half-scaled root.
    return std::erfc(std::sqrt(x / 2.0));
}

std::vector<int> stratify_by_median(std::span<const double> risks) {
    if (risks.empty()) {
        throw ValidationError("cannot stratify zero subjects");
    }
    std::vector<double> sorted(risks.begin(), risks.end());
    std::sort(sorted.begin(), sorted.end());
    // Lower-middle order statistic; ties at the median land in the low group.
    const double median = sorted[(sorted.size() - 1) / 2];
    std::vector<int> labels(risks.size());
    for (std::size_t i = 0; i < risks.size(); ++i) {
        labels[i] = risks[i] > median ? 1 : 0;
    }
    return labels;
}

CorrelationReport correlation_report(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() || a.shape().size() != 2) {
        throw ShapeError("correlation needs two matrices of equal shape, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const std::size_t n = a.rows();
    const std::size_t d = a.cols();
    if (n < 3) {
        throw ValidationError(
            "correlation needs at least 3 observations, got " +
            std::to_string(n));
    }

    CorrelationReport report;
    report.per_dimension.resize(d);
    double abs_sum = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        double mean_a = 0.0, mean_b = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mean_a += a.at(i, j);
            mean_b += b.at(i, j);
        }
        mean_a /= static_cast<double>(n);
        mean_b /= static_cast<double>(n);
        double sab = 0.0, saa = 0.0, sbb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double da = a.at(i, j) - mean_a;
            const double db = b.at(i, j) - mean_b;
            sab += da * db;
            saa += da * da;
            sbb += db * db;
        }
        const double r =
            (saa == 0.0 || sbb == 0.0) ? 0.0 : sab / std::sqrt(saa * sbb);
        report.per_dimension[j] = r;
        abs_sum += std::fabs(r);
    }
    report.mean_abs_r = abs_sum / static_cast<double>(d);
    return report;
}

namespace {

double parse_km_number(const std::string& field, const char* what,
                       std::size_t line_no) {
    try {
        std::size_t used = 0;
        const double v = std::stod(field, &used);
        if (used != field.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ValidationError("line " + std::to_string(line_no) + ": bad " +
                              what + " '" + field + "'");
    }
}

std::size_t parse_km_count(const std::string& field, const char* what,
                           std::size_t line_no) {
    try {
        std::size_t used = 0;
        if (field.empty() || field[0] == '-') throw std::invalid_argument("");
        const unsigned long long v = std::stoull(field, &used);
        if (used != field.size()) throw std::invalid_argument("");
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw ValidationError("line " + std::to_string(line_no) + ": bad " +
                              what + " '" + field + "'");
    }
}

}  // namespace

std::vector<std::pair<std::string, KMCurve>> read_km_rows(std::istream& in) {
    std::vector<std::pair<std::string, KMCurve>> curves;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            if (line != kKmCsvHeader) {
                throw ValidationError("line " + std::to_string(line_no) +
                                      ": expected header '" +
                                      std::string(kKmCsvHeader) + "', got '" +
                                      line + "'");
            }
            header_seen = true;
            continue;
        }
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            if (comma == std::string::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, comma - start));
            start = comma + 1;
        }
        if (fields.size() != 5) {
            throw ValidationError("line " + std::to_string(line_no) +
                                  ": expected 5 fields, got " +
                                  std::to_string(fields.size()));
        }
        const std::string& group = fields[4];
        if (curves.empty() || curves.back().first != group) {
            for (const auto& [name, curve] : curves) {
                if (name == group) {
                    throw ValidationError(
                        "line " + std::to_string(line_no) +
                        ": rows for group '" + group + "' are not contiguous");
                }
            }
            curves.push_back({group, {}});
        }
        KMCurve& curve = curves.back().second;
        curve.times.push_back(parse_km_number(fields[0], "time", line_no));
        curve.survival.push_back(
            parse_km_number(fields[1], "survival", line_no));
        curve.at_risk.push_back(parse_km_count(fields[2], "at_risk", line_no));
        curve.events.push_back(parse_km_count(fields[3], "events", line_no));
    }
    if (!header_seen) {
        throw ValidationError("no header row found");
    }
    return curves;
}

void write_km_rows(std::ostream& out, const KMCurve& curve,
                   const std::string& group) {
    for (std::size_t i = 0; i < curve.times.size(); ++i) {
        out << g17(curve.times[i]) << ',' << g17(curve.survival[i]) << ','
            << curve.at_risk[i] << ',' << curve.events[i] << ',' << group
            << '\n';
    }
}

}  // namespace pgx
