#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "plantid/tensor.hpp"

namespace plantid::svm {

enum class KernelKind { kLinear, kRbf };

struct KernelSpec {
  KernelKind kind = KernelKind::kRbf;
  double gamma = 0.0;  // rbf only; 0 means 1 / feature dimension, fixed at training time
  friend bool operator==(const KernelSpec&, const KernelSpec&) = default;
};

std::string to_string(KernelKind kind);
KernelKind kernel_kind_from_string(const std::string& name);
void to_json(nlohmann::json& j, const KernelSpec& k);
void from_json(const nlohmann::json& j, KernelSpec& k);

/// linear: x.z   rbf: exp(-gamma |x-z|^2)
double kernel_eval(const KernelSpec& kernel, std::span<const double> x, std::span<const double> z);

/// Symmetric [N,N] kernel matrix of the rows of x [N,D].
std::vector<double> gram_matrix(const KernelSpec& kernel, const Tensor64& x);

struct SmoOptions {
  double C = 10.0;
  KernelSpec kernel;
  double tol = 1e-3;             // KKT tolerance used for the convergence flag
  std::size_t max_passes = 100;  // iteration budget = max_passes * N * N
  double gap = 1e-10;            // stop once the maximal KKT violation falls below this
};

void to_json(nlohmann::json& j, const SmoOptions& o);
void from_json(const nlohmann::json& j, SmoOptions& o);

/// Solution of  max sum(a) - 1/2 sum_ij a_i a_j y_i y_j K_ij  s.t.  0 <= a_i <= C, sum a_i y_i = 0.
struct DualSolution {
  std::vector<double> alpha;
  double b = 0.0;
  double objective = 0.0;
  double violation = 0.0;  // final maximal KKT violation
  std::size_t iterations = 0;
  bool converged = false;
};

/// SMO with maximal-violating-pair / second-order working-set selection on a precomputed Gram matrix.
DualSolution solve_dual(std::span<const double> gram, std::span<const int> y, const SmoOptions& options);

/// Dual objective value of `alpha`.
double dual_objective(std::span<const double> gram, std::span<const int> y, std::span<const double> alpha);

struct SvmModel {
  KernelSpec kernel;  // gamma resolved
  double C = 0.0;
  Tensor64 support_vectors;  // [S, D]
  std::vector<double> alphas;
  std::vector<int> labels;  // +1 / -1
  double b = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
  double objective = 0.0;

  std::size_t support_count() const { return alphas.size(); }
};

/// Binary SVM on rows of x [N,D] with labels in {+1,-1}.
SvmModel smo_train(const Tensor64& x, std::span<const int> y, const SmoOptions& options);

/// Keeps the points with alpha > 0 of a dual solution.
SvmModel make_model(const Tensor64& x, std::span<const int> y, const DualSolution& solution, const SmoOptions& options);

/// sum_i a_i y_i k(x_i, z) + b
double decision_raw(const SvmModel& model, std::span<const double> z);
/// sign of decision_raw, with 0 mapped to +1.
int predict(const SvmModel& model, std::span<const double> z);

struct MulticlassSvm {
  std::vector<SvmModel> models;  // one per class index
  std::vector<std::string> class_names;
  std::size_t num_classes() const { return models.size(); }
  bool all_converged() const;
};

/// One binary model per class in 0..num_classes-1 (that class +1, the rest -1).
MulticlassSvm ovr_train(const Tensor64& x, std::span<const std::int32_t> labels, std::size_t num_classes,
                        const SmoOptions& options);
std::vector<double> ovr_decisions(const MulticlassSvm& m, std::span<const double> z);
/// argmax of the per-class decision values; ties go to the lowest class index.
std::int32_t ovr_predict(const MulticlassSvm& m, std::span<const double> z);

struct ModelFileInfo {
  std::string checkpoint_id;
  std::string config_digest;
};

void save_model(const std::filesystem::path& path, const MulticlassSvm& model, const ModelFileInfo& info);
MulticlassSvm load_model(const std::filesystem::path& path, ModelFileInfo* info = nullptr);

}  // namespace plantid::svm
