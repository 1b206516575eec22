#include "tinv/schedule.hpp"

#include <cmath>
#include <string>

namespace tinv {

NoiseSchedule::NoiseSchedule(std::vector<double> sigmas, ScheduleParams params)
    : sigmas_(std::move(sigmas)), params_(params) {
  if (sigmas_.size() < 2 || sigmas_.back() != 0.0) {
    throw std::invalid_argument("noise schedule must end in 0 and have at least one step");
  }
  for (std::size_t i = 0; i + 1 < sigmas_.size(); ++i) {
    if (!(sigmas_[i] > sigmas_[i + 1])) {
      throw std::invalid_argument("noise schedule is not strictly decreasing at index " +
                                  std::to_string(i));
    }
  }
}

NoiseSchedule build_schedule(int steps, double sigma_min, double sigma_max, double rho) {
  if (steps < 1) throw std::invalid_argument("build_schedule: steps must be >= 1");
  if (!(sigma_min > 0.0) || !(sigma_min < sigma_max)) {
    throw std::invalid_argument("build_schedule: need 0 < sigma_min < sigma_max");
  }
  if (!(rho > 0.0)) throw std::invalid_argument("build_schedule: rho must be > 0");

  std::vector<double> sigmas;
  sigmas.reserve(static_cast<std::size_t>(steps) + 1);
  if (steps == 1) {
    sigmas.push_back(sigma_max);
  } else {
    const double hi = std::pow(sigma_max, 1.0 / rho);
    const double lo = std::pow(sigma_min, 1.0 / rho);
    for (int i = 0; i < steps; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(steps - 1);
      sigmas.push_back(std::pow(hi + t * (lo - hi), rho));
    }
    // pow round-off must not move the endpoints.
    sigmas.front() = sigma_max;
    sigmas.back() = sigma_min;
  }
  sigmas.push_back(0.0);
  return NoiseSchedule(std::move(sigmas), ScheduleParams{steps, sigma_min, sigma_max, rho});
}

}  // namespace tinv
