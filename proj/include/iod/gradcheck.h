#ifndef IOD_GRADCHECK_H_
#define IOD_GRADCHECK_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iod/crd.h"
#include "iod/detr_loss.h"
#include "iod/matching.h"
#include "iod/topology.h"

namespace iod {

// ||a - n|| / max(||a||, ||n||); 0 when both norms are below 1e-12.
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

std::vector<double> central_difference(
    const std::function<double(std::span<const double>)>& f, std::vector<double> x,
    double step);

// Random small instances (N <= 8, D <= 4, C <= 5), reproducible from a seed.
// Inputs are kept at least 1e-3 away from the kinks of L1 and GIoU.
struct StdInstance {
  QueryBatch teacher;
  QueryBatch student;
  QueryLabels labels;
  ScalePartition part;
  StdConfig cfg;
};
StdInstance make_std_instance(std::uint64_t seed);

struct CrdInstance {
  LayerResponses teacher;
  LayerResponses student;
  std::vector<int> old_classes;
  std::vector<double> alpha;
  CrdConfig cfg;
};
CrdInstance make_crd_instance(std::uint64_t seed);

struct DetrInstance {
  LayerResponses preds;
  std::vector<Target> targets;
  DetrLossConfig cfg;
};
DetrInstance make_detr_instance(std::uint64_t seed);

// Loss as a function of a flat input vector, plus its analytic gradient.
struct GradProblem {
  std::vector<double> x;
  std::function<double(std::span<const double>)> loss;
  std::vector<double> analytic;
};
GradProblem std_problem(const StdInstance& inst);
GradProblem crd_align_problem(const CrdInstance& inst);
GradProblem crd_reg_problem(const CrdInstance& inst);
// The matching is computed once at x and held fixed.
GradProblem detr_problem(const DetrInstance& inst);

struct GradcheckOptions {
  std::size_t seeds = 100;
  std::uint64_t base_seed = 1;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::size_t workers = 1;
};

struct SuiteResult {
  std::string name;
  std::size_t cases = 0;
  std::size_t failures = 0;
  double worst_error = 0.0;
  std::uint64_t worst_seed = 0;
  bool passed() const { return cases > 0 && failures == 0; }
};

// Suite names: "std", "crd-align", "crd-reg", "detr".
std::vector<std::string> gradcheck_suites();
SuiteResult run_gradcheck(const std::string& suite, const GradcheckOptions& opts);

}  // namespace iod

#endif  // IOD_GRADCHECK_H_
