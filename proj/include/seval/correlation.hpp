#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>

namespace seval::stats {

enum class TauVariant { tau_b, tau_a };

// Pair classification over all n·(n−1)/2 index pairs. Counts are exact
// integers, so two independent counting routes must agree bit-for-bit once
// fed through the same tau formula.
struct PairCounts {
  long long concordant = 0;
  long long discordant = 0;
  long long ties_x_only = 0;  // tied in x, distinct in y
  long long ties_y_only = 0;
  long long ties_xy = 0;      // tied in both
  long long total() const {
    return concordant + discordant + ties_x_only + ties_y_only + ties_xy;
  }
  bool operator==(const PairCounts&) const = default;
};

// O(n log n) Knight's algorithm: sort by (x, y), count discordant pairs as
// merge-sort inversions of y, derive tie groups from sorted runs.
PairCounts count_pairs_fast(std::span<const double> x,
                            std::span<const double> y);

// O(n^2) reference counter; kept as the independent oracle for tests.
PairCounts count_pairs_brute(std::span<const double> x,
                             std::span<const double> y);

struct TauResult {
  double tau = 0;       // NaN when undefined
  bool defined = false;
  PairCounts counts;
};

// tau-b = (C − D) / sqrt((C + D + Tx)(C + D + Ty)); undefined (all ties in
// one vector) yields NaN with defined=false. tau-a = (C − D) / total.
double tau_from_counts(const PairCounts& counts, TauVariant variant,
                       bool& defined);

TauResult kendall_tau(std::span<const double> x, std::span<const double> y,
                      TauVariant variant = TauVariant::tau_b);
TauResult kendall_tau_brute(std::span<const double> x,
                            std::span<const double> y,
                            TauVariant variant = TauVariant::tau_b);

struct PearsonResult {
  double r = 0;
  bool defined = false;
};

PearsonResult pearson(std::span<const double> x, std::span<const double> y);

struct CorrelationReport {
  double kendall_tau = 0;
  bool tau_defined = false;
  double pearson_r = 0;
  bool r_defined = false;
  std::size_t n = 0;
  long long ties_x = 0;  // pairs tied in x (including tied in both)
  long long ties_y = 0;
};

CorrelationReport correlation_report(std::span<const double> pred,
                                     std::span<const double> truth);

// One comment line carrying the statistics, then `pred,true` rows.
void write_scatter_csv(std::ostream& out, std::span<const double> pred,
                       std::span<const double> truth,
                       const CorrelationReport& report);

}  // namespace seval::stats
