#pragma once

#include <functional>
#include <string>
#include <vector>

#include "xoct/autodiff.hpp"
#include "xoct/random.hpp"

namespace xoct::checks {

/// Tensor with entries uniform in [lo, hi).
Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0);

/// Scalar probe sum(y * r) with a fixed random r, so every output element
/// carries a distinct adjoint.
ad::Var probe(const ad::Var& y, std::uint64_t seed);

struct GradCase {
  std::string name;  // op (or composite) under test
  std::function<ad::GradCheckReport(const ad::GradCheckOptions&)> run;
};

/// Finite-difference cases for every differentiable op, the network blocks
/// and the composite generator loss on a toy setup.
std::vector<GradCase> gradient_cases(std::uint64_t seed = 11);

}  // namespace xoct::checks
