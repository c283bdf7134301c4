#include "seval/correlation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace seval::stats {

namespace {

void check_lengths(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("correlation inputs differ in length");
  }
  if (x.size() < 2) {
    throw std::invalid_argument("correlation needs at least 2 samples");
  }
}

// Counts strict inversions (values[i] > values[j] for i < j) while sorting.
long long merge_count(std::vector<double>& values, std::vector<double>& tmp,
                      std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  long long count = merge_count(values, tmp, lo, mid) +
                    merge_count(values, tmp, mid, hi);
  std::size_t left = lo, right = mid, out = lo;
  while (left < mid && right < hi) {
    if (values[right] < values[left]) {
      count += static_cast<long long>(mid - left);
      tmp[out++] = values[right++];
    } else {
      tmp[out++] = values[left++];
    }
  }
  while (left < mid) tmp[out++] = values[left++];
  while (right < hi) tmp[out++] = values[right++];
  std::copy(tmp.begin() + static_cast<long>(lo),
            tmp.begin() + static_cast<long>(hi),
            values.begin() + static_cast<long>(lo));
  return count;
}

long long tie_pairs(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  long long pairs = 0;
  std::size_t run = 1;
  for (std::size_t i = 1; i <= values.size(); ++i) {
    if (i < values.size() && values[i] == values[i - 1]) {
      ++run;
    } else {
      pairs += static_cast<long long>(run) * static_cast<long long>(run - 1) / 2;
      run = 1;
    }
  }
  return pairs;
}

}  // namespace

PairCounts count_pairs_fast(std::span<const double> x,
                            std::span<const double> y) {
  check_lengths(x, y);
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (x[a] != x[b]) return x[a] < x[b];
    return y[a] < y[b];
  });

  long long tied_x = 0, tied_xy = 0;
  std::size_t run_x = 1, run_xy = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    const bool same_x = i < n && x[order[i]] == x[order[i - 1]];
    const bool same_xy = same_x && y[order[i]] == y[order[i - 1]];
    if (same_x) {
      ++run_x;
    } else {
      tied_x += static_cast<long long>(run_x) * static_cast<long long>(run_x - 1) / 2;
      run_x = 1;
    }
    if (same_xy) {
      ++run_xy;
    } else {
      tied_xy += static_cast<long long>(run_xy) * static_cast<long long>(run_xy - 1) / 2;
      run_xy = 1;
    }
  }

  std::vector<double> y_sorted_by_x(n), tmp(n);
  for (std::size_t i = 0; i < n; ++i) y_sorted_by_x[i] = y[order[i]];
  const long long discordant = merge_count(y_sorted_by_x, tmp, 0, n);

  std::vector<double> y_copy(y.begin(), y.end());
  const long long tied_y = tie_pairs(std::move(y_copy));

  PairCounts counts;
  const long long total =
      static_cast<long long>(n) * static_cast<long long>(n - 1) / 2;
  counts.discordant = discordant;
  counts.ties_xy = tied_xy;
  counts.ties_x_only = tied_x - tied_xy;
  counts.ties_y_only = tied_y - tied_xy;
  counts.concordant = total - discordant - counts.ties_x_only -
                      counts.ties_y_only - counts.ties_xy;
  return counts;
}

PairCounts count_pairs_brute(std::span<const double> x,
                             std::span<const double> y) {
  check_lengths(x, y);
  PairCounts counts;
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool tx = x[i] == x[j];
      const bool ty = y[i] == y[j];
      if (tx && ty) {
        ++counts.ties_xy;
      } else if (tx) {
        ++counts.ties_x_only;
      } else if (ty) {
        ++counts.ties_y_only;
      } else if ((x[i] < x[j]) == (y[i] < y[j])) {
        ++counts.concordant;
      } else {
        ++counts.discordant;
      }
    }
  }
  return counts;
}

double tau_from_counts(const PairCounts& counts, TauVariant variant,
                       bool& defined) {
  const double cd = static_cast<double>(counts.concordant) -
                    static_cast<double>(counts.discordant);
  if (variant == TauVariant::tau_a) {
    const double total = static_cast<double>(counts.total());
    defined = total > 0;
    return defined ? cd / total
                   : std::numeric_limits<double>::quiet_NaN();
  }
  const double dx = static_cast<double>(counts.concordant + counts.discordant +
                                        counts.ties_x_only);
  const double dy = static_cast<double>(counts.concordant + counts.discordant +
                                        counts.ties_y_only);
  if (dx == 0.0 || dy == 0.0) {
    defined = false;
    return std::numeric_limits<double>::quiet_NaN();
  }
  defined = true;
  return cd / std::sqrt(dx * dy);
}

TauResult kendall_tau(std::span<const double> x, std::span<const double> y,
                      TauVariant variant) {
  TauResult result;
  result.counts = count_pairs_fast(x, y);
  result.tau = tau_from_counts(result.counts, variant, result.defined);
  return result;
}

TauResult kendall_tau_brute(std::span<const double> x,
                            std::span<const double> y, TauVariant variant) {
  TauResult result;
  result.counts = count_pairs_brute(x, y);
  result.tau = tau_from_counts(result.counts, variant, result.defined);
  return result;
}

PearsonResult pearson(std::span<const double> x, std::span<const double> y) {
  check_lengths(x, y);
  const std::size_t n = x.size();
  double mean_x = 0, mean_y = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_x += x[i];
    mean_y += y[i];
  }
  mean_x /= static_cast<double>(n);
  mean_y /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mean_x;
    const double dy = y[i] - mean_y;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    return {std::numeric_limits<double>::quiet_NaN(), false};
  }
  return {sxy / std::sqrt(sxx * syy), true};
}

CorrelationReport correlation_report(std::span<const double> pred,
                                     std::span<const double> truth) {
  CorrelationReport report;
  const auto tau = kendall_tau(pred, truth);
  report.kendall_tau = tau.tau;
  report.tau_defined = tau.defined;
  const auto r = pearson(pred, truth);
  report.pearson_r = r.r;
  report.r_defined = r.defined;
  report.n = pred.size();
  report.ties_x = tau.counts.ties_x_only + tau.counts.ties_xy;
  report.ties_y = tau.counts.ties_y_only + tau.counts.ties_xy;
  return report;
}

void write_scatter_csv(std::ostream& out, std::span<const double> pred,
                       std::span<const double> truth,
                       const CorrelationReport& report) {
  char line[160];
  std::snprintf(line, sizeof(line),
                "# kendall_tau=%.6f pearson_r=%.6f n=%zu\n", report.kendall_tau,
                report.pearson_r, report.n);
  out << line << "pred,true\n";
  for (std::size_t i = 0; i < pred.size(); ++i) {
    std::snprintf(line, sizeof(line), "%.17g,%.17g\n", pred[i], truth[i]);
    out << line;
  }
}

}  // namespace seval::stats
