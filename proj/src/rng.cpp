#include "polq/rng.hpp"

#include <cmath>
#include <random>

#include "polq/error.hpp"
#include "polq/scenario.hpp"

namespace polq {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view label, std::uint64_t index) noexcept {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : label) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return splitmix64(splitmix64(master ^ splitmix64(h)) + index);
}

Eigen::MatrixXd gaussian_increments(const std::vector<double>& dt, int cols, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto K = static_cast<Eigen::Index>(dt.size());
  Eigen::MatrixXd out(K, cols);
  for (Eigen::Index i = 0; i < K; ++i) {
    const double s = std::sqrt(dt[static_cast<std::size_t>(i)]);
    for (int c = 0; c < cols; ++c) out(i, c) = s * normal(gen);
  }
  return out;
}

NoiseBundle make_noise(const std::vector<double>& dt, int d, std::uint64_t seed) {
  NoiseBundle nb;
  nb.seed = seed;
  nb.dW = gaussian_increments(dt, 1, derive_seed(seed, "W", 0)).col(0);
  nb.dV = gaussian_increments(dt, d, derive_seed(seed, "V", 0));
  return nb;
}

NoiseBundle make_noise(const GridScenario& grid, std::uint64_t seed) { return make_noise(grid.dt, grid.d(), seed); }

NoiseBundle coarsen(const NoiseBundle& fine, int factor) {
  if (factor < 1 || fine.dW.size() % factor != 0)
    throw Error(ErrorKind::InvalidArgument, "coarsening factor must divide the step count");
  const Eigen::Index K = fine.dW.size() / factor;
  NoiseBundle out;
  out.seed = fine.seed;
  out.dW = Eigen::VectorXd::Zero(K);
  out.dV = Eigen::MatrixXd::Zero(K, fine.dV.cols());
  for (Eigen::Index i = 0; i < fine.dW.size(); ++i) {
    out.dW(i / factor) += fine.dW(i);
    out.dV.row(i / factor) += fine.dV.row(i);
  }
  return out;
}

}  // namespace polq
