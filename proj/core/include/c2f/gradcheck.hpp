#pragma once

#include <functional>
#include <string>
#include <vector>

#include "c2f/tensor.hpp"

namespace c2f {

struct GradCheckReport {
  std::string op_name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;  // location of the worst or non-finite entry
};

// Maps fresh copies of the inputs to an output tensor of any shape; a sum
// reduction is appended internally so the op only has to be scalar-reducible.
using OpUnderTest = std::function<Tensor(const std::vector<Tensor>&)>;

// Central finite differences with step `epsilon` against the tape's analytic
// gradients.  Relative error per element is |a - n| / max(|a|, |n|, floor);
// any non-finite analytic or numeric gradient fails the report outright.
GradCheckReport grad_check(const std::string& op_name, const OpUnderTest& op,
                           const std::vector<Tensor>& inputs,
                           double epsilon = 1e-5, double tolerance = 1e-4,
                           double rel_floor = 1e-3);

}  // namespace c2f
