#pragma once

#include <cstddef>
#include <vector>

namespace polq {

/// Pairwise (cascade) summation with a fixed split order, so the result is a
/// function of the input sequence only.
double pairwise_sum(const double* x, std::size_t n) noexcept;
double pairwise_sum(const std::vector<double>& x) noexcept;

struct MeanStderr {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

/// Sample mean and standard error (n-1 variance). stderr is 0 for n < 2.
MeanStderr mean_stderr(const std::vector<double>& x);

/// Mean over all entries with the standard error of the mean of cluster
/// means; entries [c*size, (c+1)*size) form cluster c.
MeanStderr clustered_mean_stderr(const std::vector<double>& x, std::size_t cluster_size);

double median(std::vector<double> x);

}  // namespace polq
