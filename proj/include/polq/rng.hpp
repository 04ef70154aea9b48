#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace polq {

struct GridScenario;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Stream seed for (master, purpose label, index). Different labels and
/// indices give statistically unrelated streams; the mapping never depends on
/// thread count or evaluation order.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label, std::uint64_t index) noexcept;

/// Increments of the two driving noises on a fixed grid.
/// dW is scalar (K entries); dV is K x d and holds W~ increments under P or
/// the observation increments dY under Q.
struct NoiseBundle {
  std::uint64_t seed = 0;
  Eigen::VectorXd dW;
  Eigen::MatrixXd dV;
};

/// K x cols matrix of independent N(0, dt_i) draws from one stream.
Eigen::MatrixXd gaussian_increments(const std::vector<double>& dt, int cols, std::uint64_t seed);

/// dW from the stream derive_seed(seed, "W", 0) and dV from derive_seed(seed, "V", 0).
NoiseBundle make_noise(const GridScenario& grid, std::uint64_t seed);
NoiseBundle make_noise(const std::vector<double>& dt, int d, std::uint64_t seed);

/// Sums consecutive groups of `factor` increments: the same Brownian path
/// seen on a grid `factor` times coarser.
NoiseBundle coarsen(const NoiseBundle& fine, int factor);

}  // namespace polq
