#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pgx/tensor.hpp"

namespace pgx {

// One subject's follow-up: `time` is the observed duration in days (always
// positive), `event` is 1 if the endpoint was reached and 0 if the subject
// was censored at that time.
struct SurvivalOutcome {
    double time = 0.0;
    int event = 0;
};

// Product-limit curve. Entries exist only at distinct event times, in
// increasing order; `survival[i]` is the curve value just after `times[i]`.
// `at_risk[i]` counts subjects still under observation at `times[i]` and
// `events[i]` the endpoints recorded there.
struct KMCurve {
    std::vector<double> times;
    std::vector<double> survival;
    std::vector<std::size_t> at_risk;
    std::vector<std::size_t> events;
};

struct LogRankResult {
    double chi2 = 0.0;
    double p = 1.0;
};

// Column-wise Pearson correlations between two matched matrices plus the
// mean of their absolute values.
struct CorrelationReport {
    std::vector<double> per_dimension;
    double mean_abs_r = 0.0;
};

// Harrell's concordance index. A pair of subjects is comparable when the one
// with the shorter observed time had an event; on tied times the pair is
// comparable only when exactly one subject had an event, and that subject
// counts as the earlier one. Higher risk for the earlier subject scores 1,
// tied risks score 0.5. Throws ValidationError when no pair is comparable
// or the spans disagree in length, DomainError on nonpositive times or
// event flags outside {0, 1}.
double c_index(std::span<const double> risks,
               std::span<const SurvivalOutcome> outcomes);

// Kaplan-Meier estimate over one group. With no events the curve is empty
// (survival stays at 1 throughout). Throws ValidationError on an empty
// input, DomainError on invalid outcomes.
KMCurve km_estimate(std::span<const SurvivalOutcome> outcomes);

// Two-group log-rank test with the hypergeometric variance at each distinct
// event time. Zero total variance (for instance, no events at all) yields
// {chi2 = 0, p = 1} rather than an error. Throws ValidationError if either
// group is empty.
LogRankResult log_rank(std::span<const SurvivalOutcome> group_a,
                       std::span<const SurvivalOutcome> group_b);

// Survival function of the chi-squared distribution with one degree of
// freedom, accurate to better than 1e-10 absolute. Throws DomainError for
// negative x.
double chi2_sf_1df(double x);

// Splits subjects at the median risk: label 1 (high) for risk strictly above
// the median, 0 (low) otherwise. For an even count the median is the lower
// of the two middle order statistics, so the high group is never larger than
// the low group. Throws ValidationError on an empty input.
std::vector<int> stratify_by_median(std::span<const double> risks);

// Per-column Pearson r between two n x d matrices (rows are matched
// observations). A zero-variance column on either side contributes r = 0.
// Throws ShapeError unless both are rank 2 with identical shapes,
// ValidationError when fewer than 3 rows.
CorrelationReport correlation_report(const Tensor& a, const Tensor& b);

// CSV serialization for one or more labelled curves.
inline constexpr const char* kKmCsvHeader = "time,survival,at_risk,events,group";
void write_km_rows(std::ostream& out, const KMCurve& curve,
                   const std::string& group);

// Inverse of write_km_rows for a whole file: expects the documented
// header (after any '#' comment lines), then rows whose group labels are
// contiguous. Returns the curves in encounter order. Raises
// ValidationError on malformed rows or a split group.
std::vector<std::pair<std::string, KMCurve>> read_km_rows(std::istream& in);

}  // namespace pgx
