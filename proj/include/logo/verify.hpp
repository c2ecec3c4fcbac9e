#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace logo {

struct CheckLine {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

struct GradientCheckOptions {
  int points = 10;
  double threshold = 1e-4;
  double step = 1e-6;
  int hidden = 6;
  int batch = 4;
};

/// Finite-difference checks of every training loss (L_p, L_d, L_Rd, L_Eps,
/// L_world, critic, actor, MPC actor) on small networks, each at
/// `points` random parameter/batch draws.
std::vector<CheckLine> verify_gradients(std::uint64_t seed, const GradientCheckOptions& options = {});

/// Randomised error injection on a 16-state tabular MDP.
CheckLine verify_theorem1(std::uint64_t seed, int trials = 1000);

/// Synthetic-half frequencies against softmax weights, and real-half
/// frequencies against uniform, as L1 distances over `draws` samples.
std::vector<CheckLine> verify_sampling(std::uint64_t seed, int draws = 1000000, double tolerance = 0.01);

std::vector<CheckLine> run_verify(std::uint64_t seed);

std::string format_check(const CheckLine& line);

}  // namespace logo
