#pragma once

#include <cmath>

namespace hallufield::detail {

// Neumaier compensated summation.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double xlogx(double p) noexcept { return p > 0.0 ? p * std::log(p) : 0.0; }

}  // namespace hallufield::detail

#include <charconv>
#include <string>

namespace hallufield::detail {

// Shortest decimal string that round-trips to the same double.
inline std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

}  // namespace hallufield::detail
