#include "c2f/gradcheck.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "c2f/ops.hpp"

namespace c2f {

namespace {

std::vector<Tensor> clone_inputs(const std::vector<Tensor>& inputs) {
  std::vector<Tensor> copy;
  copy.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    Tensor c = Tensor::from_values(
        t.shape(), std::vector<double>(t.values().begin(), t.values().end()));
    c.set_requires_grad(t.requires_grad());
    copy.push_back(std::move(c));
  }
  return copy;
}

}  // namespace

GradCheckReport grad_check(const std::string& op_name, const OpUnderTest& op,
                           const std::vector<Tensor>& inputs, double epsilon,
                           double tolerance, double rel_floor) {
  GradCheckReport report;
  report.op_name = op_name;
  report.tolerance = tolerance;

  std::vector<Tensor> work = clone_inputs(inputs);
  Tensor objective = ops::sum(op(work));
  objective.backward();

  std::vector<std::vector<double>> analytic(work.size());
  for (std::size_t t = 0; t < work.size(); ++t) {
    if (!work[t].requires_grad()) continue;
    auto g = work[t].grad();
    if (g.empty()) {
      analytic[t].assign(work[t].numel(), 0.0);
    } else {
      analytic[t].assign(g.begin(), g.end());
    }
  }

  double worst = 0.0;
  std::string worst_at;
  for (std::size_t t = 0; t < work.size(); ++t) {
    if (!work[t].requires_grad()) continue;
    for (std::size_t i = 0; i < work[t].numel(); ++i) {
      const double a = analytic[t][i];
      if (!std::isfinite(a)) {
        report.max_rel_error = std::numeric_limits<double>::infinity();
        report.passed = false;
        std::ostringstream os;
        os << "non-finite analytic gradient at input " << t << " element " << i;
        report.detail = os.str();
        return report;
      }

      std::vector<Tensor> probe = clone_inputs(inputs);
      NoGradGuard no_grad;
      const double base = probe[t].at(i);
      probe[t].mutable_values()[i] = base + epsilon;
      const double plus = ops::sum(op(probe)).value();
      probe[t].mutable_values()[i] = base - epsilon;
      const double minus = ops::sum(op(probe)).value();
      const double numeric = (plus - minus) / (2.0 * epsilon);
      if (!std::isfinite(numeric)) {
        report.max_rel_error = std::numeric_limits<double>::infinity();
        report.passed = false;
        std::ostringstream os;
        os << "non-finite numeric gradient at input " << t << " element " << i;
        report.detail = os.str();
        return report;
      }

      const double rel = std::fabs(a - numeric) /
                         std::max({std::fabs(a), std::fabs(numeric), rel_floor});
      if (rel > worst) {
        worst = rel;
        std::ostringstream os;
        os << "input " << t << " element " << i << ": analytic " << a
           << " vs numeric " << numeric;
        worst_at = os.str();
      }
    }
  }

  report.max_rel_error = worst;
  report.passed = worst <= tolerance;
  report.detail = worst_at;
  return report;
}

}  // namespace c2f
