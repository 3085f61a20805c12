#pragma once

// Central-difference verification of tape gradients.
//
// check_gradients() rebuilds the forward graph from scratch for every
// perturbed parameter entry, so it is strictly a test-and-debug tool: cost
// is two forward passes per scalar parameter.  Comparisons use relative
// error against max(|analytic|, |numeric|); entries where both magnitudes
// vanish fall back to absolute error so exactly-zero gradients do not
// produce 0/0.

#include "sv/errors.hpp"
#include "sv/param_store.hpp"
#include "sv/tape.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace sv {

struct GradCheckBlock {
  std::string name;
  double max_rel_err = 0.0;   // worst entry checked by relative error
  double max_abs_err = 0.0;   // worst entry checked by absolute fallback
  Eigen::Index worst_row = -1, worst_col = -1;
};

struct GradCheckReport {
  double step = 0.0;
  std::vector<GradCheckBlock> blocks;

  double max_rel_err() const {
    double m = 0.0;
    for (const auto& b : blocks) m = std::max(m, b.max_rel_err);
    return m;
  }
  double max_abs_err() const {
    double m = 0.0;
    for (const auto& b : blocks) m = std::max(m, b.max_abs_err);
    return m;
  }
};

// `build` must be a pure function of the store contents with signature
// Var(TapeT<double>&, ParamStoreT<double>&), returning the scalar loss node.
//
// `denom_floor` sets the magnitude below which entries switch from relative
// to absolute comparison.  Central differences of a loss L carry ~eps*|L|/h
// of rounding noise, so gradient entries smaller than that cannot be
// verified relatively no matter how correct they are; callers checking deep
// graphs should raise the floor to their noise level.
template <class BuildFn>
GradCheckReport check_gradients(ParamStoreT<double>& store, double step,
                                BuildFn&& build, double denom_floor = 1e-12) {
  if (step == 0.0)
    throw ConfigError("check_gradients: step size must be nonzero");

  auto eval = [&]() -> double {
    TapeT<double> tape;
    Var loss = build(tape, store);
    return tape.val(loss)(0, 0);
  };

  // Analytic gradients.
  store.zero_grads();
  std::vector<MatXd> analytic;
  {
    TapeT<double> tape;
    Var loss = build(tape, store);
    tape.backward(loss);
    for (int b = 0; b < store.size(); ++b)
      analytic.push_back(store.grad(store.id_at(b)));
  }

  GradCheckReport report;
  report.step = step;
  for (int b = 0; b < store.size(); ++b) {
    BlockId id = store.id_at(b);
    GradCheckBlock rb;
    rb.name = store.name(id);
    MatXd& val = store.value(id);
    const MatXd& ana = analytic[static_cast<std::size_t>(b)];
    for (Eigen::Index r = 0; r < val.rows(); ++r) {
      for (Eigen::Index c = 0; c < val.cols(); ++c) {
        double keep = val(r, c);
        val(r, c) = keep + step;
        double up = eval();
        val(r, c) = keep - step;
        double down = eval();
        val(r, c) = keep;
        double fd = (up - down) / (2.0 * step);
        double a = ana(r, c);
        double denom = std::max(std::abs(a), std::abs(fd));
        double err = std::abs(a - fd);
        if (denom < denom_floor) {
          if (err > rb.max_abs_err) rb.max_abs_err = err;
        } else if (err / denom > rb.max_rel_err) {
          rb.max_rel_err = err / denom;
          rb.worst_row = r;
          rb.worst_col = c;
        }
      }
    }
    report.blocks.push_back(std::move(rb));
  }
  store.zero_grads();
  return report;
}

}  // namespace sv
