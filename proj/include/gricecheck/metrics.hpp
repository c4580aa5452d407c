#pragma once

// Confusion matrix and the four reported scores (precision, recall, F1,
// accuracy), per positive class and macro-averaged over {yes, no}.

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

#include "gricecheck/extraction.hpp"
#include "gricecheck/prompting.hpp"

namespace gricecheck {

// Average human accuracy on the LUDWIG benchmark; reports compare against it.
inline constexpr double kHumanBaselineAccuracy = 0.862;

// Positive class is "yes". Under StrictWrong, indeterminate predictions count
// as the wrong binary answer (fn when gold is yes, fp when gold is no) so the
// denominator stays fixed; under Exclude they only increment `excluded`.
// `indeterminate` counts indeterminate verdicts under either policy.
struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t excluded = 0;
  std::size_t indeterminate = 0;

  std::size_t determinate_total() const { return tp + fp + fn + tn; }
  std::size_t total() const { return determinate_total() + excluded; }
};

enum class Averaging { Macro, PerClassYes };

inline std::string_view to_string(Averaging a) {
  return a == Averaging::Macro ? "macro" : "per_class_yes";
}

inline std::optional<Averaging> parse_averaging(std::string_view s) {
  if (s == "macro") return Averaging::Macro;
  if (s == "per_class_yes") return Averaging::PerClassYes;
  return std::nullopt;
}

struct MetricRow {
  StrategyKind strategy = StrategyKind::ZeroShot;
  Averaging averaging = Averaging::Macro;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  std::size_t n = 0;         // evaluated pairs, excluded ones included
  std::size_t excluded = 0;
  std::size_t indeterminate = 0;
  double human_delta = 0.0;
};

class MetricsError : public std::runtime_error {
 public:
  explicit MetricsError(std::string message) : std::runtime_error(std::move(message)) {}
};

inline ConfusionMatrix confusion(const std::vector<std::pair<Verdict::Value, Label>>& pairs,
                                 IndeterminatePolicy policy) {
  ConfusionMatrix m;
  for (const auto& [pred, gold] : pairs) {
    const bool gold_yes = gold == Label::Yes;
    if (pred == Verdict::Value::Indeterminate) {
      ++m.indeterminate;
      if (policy == IndeterminatePolicy::Exclude) {
        ++m.excluded;
      } else {
        ++(gold_yes ? m.fn : m.fp);
      }
      continue;
    }
    const bool pred_yes = pred == Verdict::Value::Yes;
    if (pred_yes && gold_yes) ++m.tp;
    else if (pred_yes && !gold_yes) ++m.fp;
    else if (!pred_yes && gold_yes) ++m.fn;
    else ++m.tn;
  }
  return m;
}

namespace detail {

inline double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

inline double f1_of(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

}  // namespace detail

/// Zero denominators yield 0 by convention; throws MetricsError when the
/// matrix has no determinate outcomes at all.
inline MetricRow scores(const ConfusionMatrix& m, Averaging averaging) {
  if (m.determinate_total() == 0)
    throw MetricsError("empty matrix: no determinate outcomes to score");
  MetricRow row;
  row.averaging = averaging;
  row.n = m.total();
  row.excluded = m.excluded;
  row.indeterminate = m.indeterminate;
  row.accuracy = detail::ratio(m.tp + m.tn, m.determinate_total());

  const double p_yes = detail::ratio(m.tp, m.tp + m.fp);
  const double r_yes = detail::ratio(m.tp, m.tp + m.fn);
  if (averaging == Averaging::PerClassYes) {
    row.precision = p_yes;
    row.recall = r_yes;
    row.f1 = detail::f1_of(p_yes, r_yes);
  } else {
    const double p_no = detail::ratio(m.tn, m.tn + m.fn);
    const double r_no = detail::ratio(m.tn, m.tn + m.fp);
    row.precision = 0.5 * (p_yes + p_no);
    row.recall = 0.5 * (r_yes + r_no);
    row.f1 = 0.5 * (detail::f1_of(p_yes, r_yes) + detail::f1_of(p_no, r_no));
  }
  return row;
}

/// Signed accuracy delta against the human baseline constant.
inline double compare_to_human(const MetricRow& row) {
  return row.accuracy - kHumanBaselineAccuracy;
}

}  // namespace gricecheck
