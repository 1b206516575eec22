#ifndef TINV_SCHEDULE_HPP
#define TINV_SCHEDULE_HPP

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace tinv {

struct ScheduleParams {
  int steps = 100;
  double sigma_min = 0.02;
  double sigma_max = 10.0;
  double rho = 7.0;
};

/// Descending sigma ladder with steps + 1 entries, terminating in exactly 0.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  NoiseSchedule(std::vector<double> sigmas, ScheduleParams params);

  const std::vector<double>& sigmas() const { return sigmas_; }
  const ScheduleParams& params() const { return params_; }
  int steps() const { return static_cast<int>(sigmas_.size()) - 1; }
  double sigma_max() const { return sigmas_.front(); }
  double operator[](std::size_t i) const { return sigmas_[i]; }

 private:
  std::vector<double> sigmas_;
  ScheduleParams params_{};
};

/// Karras rho-ladder between sigma_max and sigma_min, with 0 appended.
NoiseSchedule build_schedule(int steps, double sigma_min, double sigma_max, double rho);
inline NoiseSchedule build_schedule(const ScheduleParams& p) {
  return build_schedule(p.steps, p.sigma_min, p.sigma_max, p.rho);
}

}  // namespace tinv

#endif  // TINV_SCHEDULE_HPP
