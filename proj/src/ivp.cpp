#include "decode/ivp.hpp"

namespace decode::ivp {

namespace {
constexpr std::array<double, 1> kEulerWeights{1.0};
constexpr std::array<double, 4> kRk4Weights{1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0};
constexpr std::array<double, 1> kEulerOffsets{0.0};
constexpr std::array<double, 4> kRk4Offsets{0.0, 0.5, 0.5, 1.0};
}  // namespace

std::string to_string(Method m) { return m == Method::euler ? "euler" : "rk4"; }

Method method_from_string(const std::string& s) {
  if (s == "euler") return Method::euler;
  if (s == "rk4") return Method::rk4;
  throw std::invalid_argument("unknown solver method " + s);
}

std::span<const double> stage_weights(Method m) {
  if (m == Method::euler) return kEulerWeights;
  return kRk4Weights;
}

std::span<const double> stage_offsets(Method m) {
  if (m == Method::euler) return kEulerOffsets;
  return kRk4Offsets;
}

}  // namespace decode::ivp
