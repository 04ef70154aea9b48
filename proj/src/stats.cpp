#include "polq/stats.hpp"

#include <algorithm>
#include <cmath>

#include "polq/error.hpp"

namespace polq {

double pairwise_sum(const double* x, std::size_t n) noexcept {
  if (n <= 16) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

double pairwise_sum(const std::vector<double>& x) noexcept { return pairwise_sum(x.data(), x.size()); }

MeanStderr mean_stderr(const std::vector<double>& x) {
  MeanStderr r;
  r.n = x.size();
  if (x.empty()) return r;
  r.mean = pairwise_sum(x) / static_cast<double>(x.size());
  if (x.size() < 2) return r;
  std::vector<double> sq(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) sq[i] = (x[i] - r.mean) * (x[i] - r.mean);
  const double var = pairwise_sum(sq) / static_cast<double>(x.size() - 1);
  r.se = std::sqrt(var / static_cast<double>(x.size()));
  return r;
}

MeanStderr clustered_mean_stderr(const std::vector<double>& x, std::size_t cluster_size) {
  if (cluster_size == 0 || x.size() % cluster_size != 0)
    throw Error(ErrorKind::InvalidArgument, "cluster size must divide the sample size");
  std::vector<double> means(x.size() / cluster_size);
  for (std::size_t c = 0; c < means.size(); ++c)
    means[c] = pairwise_sum(x.data() + c * cluster_size, cluster_size) / static_cast<double>(cluster_size);
  MeanStderr r = mean_stderr(means);
  r.n = x.size();
  return r;
}

double median(std::vector<double> x) {
  if (x.empty()) throw Error(ErrorKind::EmptyEnsemble, "median of an empty sample");
  const std::size_t mid = x.size() / 2;
  std::nth_element(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(mid), x.end());
  double m = x[mid];
  if (x.size() % 2 == 0) {
    const double lower = *std::max_element(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(mid));
    m = 0.5 * (m + lower);
  }
  return m;
}

}  // namespace polq
