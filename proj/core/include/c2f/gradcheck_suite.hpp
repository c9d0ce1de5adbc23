#pragma once

#include <vector>

#include "c2f/gradcheck.hpp"

namespace c2f {

// Finite-difference validation of every differentiable op and loss, each over
// `instances` seeded random draws at double precision.  Kink points (relu at
// zero, bilinear sampling on the lattice, robust breakpoints, clamp edges)
// are excluded by the generators; subgradients are valid there but central
// differences are not.
std::vector<GradCheckReport> run_gradcheck_suite(double tolerance = 1e-4,
                                                 int instances = 10);

}  // namespace c2f
