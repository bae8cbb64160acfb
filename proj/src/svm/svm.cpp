#include "plantid/svm/svm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "plantid/serialize.hpp"

namespace plantid::svm {

std::string to_string(KernelKind kind) { return kind == KernelKind::kLinear ? "linear" : "rbf"; }

KernelKind kernel_kind_from_string(const std::string& name) {
  if (name == "linear") return KernelKind::kLinear;
  if (name == "rbf") return KernelKind::kRbf;
  throw std::invalid_argument("unknown kernel '" + name + "' (expected linear or rbf)");
}

void to_json(nlohmann::json& j, const KernelSpec& k) { j = nlohmann::json{{"kind", to_string(k.kind)}, {"gamma", k.gamma}}; }

void from_json(const nlohmann::json& j, KernelSpec& k) {
  k.kind = kernel_kind_from_string(j.value("kind", std::string("rbf")));
  k.gamma = j.value("gamma", 0.0);
}

void to_json(nlohmann::json& j, const SmoOptions& o) {
  j = nlohmann::json{{"C", o.C}, {"kernel", o.kernel}, {"tol", o.tol}, {"max_passes", o.max_passes}, {"gap", o.gap}};
}

void from_json(const nlohmann::json& j, SmoOptions& o) {
  const SmoOptions d;
  o.C = j.value("C", d.C);
  o.kernel = j.value("kernel", d.kernel);
  o.tol = j.value("tol", d.tol);
  o.max_passes = j.value("max_passes", d.max_passes);
  o.gap = j.value("gap", d.gap);
}

double kernel_eval(const KernelSpec& kernel, std::span<const double> x, std::span<const double> z) {
  if (x.size() != z.size()) {
    throw std::invalid_argument("kernel_eval: dimension mismatch " + std::to_string(x.size()) + " vs " +
                                std::to_string(z.size()));
  }
  double s = 0.0;
  if (kernel.kind == KernelKind::kLinear) {
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * z[i];
    return s;
  }
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - z[i]) * (x[i] - z[i]);
  return std::exp(-kernel.gamma * s);
}

namespace {

std::span<const double> row(const Tensor64& x, std::size_t i) {
  const std::size_t d = x.dim(1);
  return x.data().subspan(i * d, d);
}

KernelSpec resolve(KernelSpec k, std::size_t dim) {
  if (k.kind == KernelKind::kRbf) {
    if (k.gamma < 0.0 || !std::isfinite(k.gamma)) throw std::invalid_argument("rbf gamma must be positive");
    if (k.gamma == 0.0) k.gamma = 1.0 / static_cast<double>(dim);
  }
  return k;
}

void check_options(const SmoOptions& o) {
  if (!(o.C > 0.0) || !std::isfinite(o.C)) throw std::invalid_argument("svm: C must be positive");
  if (!(o.tol > 0.0)) throw std::invalid_argument("svm: tol must be positive");
  if (o.max_passes == 0) throw std::invalid_argument("svm: max_passes must be positive");
}

bool in_up(int y, double a, double C) { return (y > 0 && a < C) || (y < 0 && a > 0.0); }
bool in_low(int y, double a, double C) { return (y > 0 && a > 0.0) || (y < 0 && a < C); }

}  // namespace

std::vector<double> gram_matrix(const KernelSpec& kernel, const Tensor64& x) {
  const std::size_t n = x.dim(0);
  std::vector<double> k(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) k[i * n + j] = k[j * n + i] = kernel_eval(kernel, row(x, i), row(x, j));
  }
  return k;
}

double dual_objective(std::span<const double> gram, std::span<const int> y, std::span<const double> alpha) {
  const std::size_t n = y.size();
  double lin = 0.0;
  double quad = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    lin += alpha[i];
    if (alpha[i] == 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) quad += alpha[i] * alpha[j] * y[i] * y[j] * gram[i * n + j];
  }
  return lin - 0.5 * quad;
}

DualSolution solve_dual(std::span<const double> gram, std::span<const int> y, const SmoOptions& o) {
  check_options(o);
  const std::size_t n = y.size();
  if (gram.size() != n * n) throw std::invalid_argument("solve_dual: Gram matrix size mismatch");
  bool pos = false;
  bool neg = false;
  for (int v : y) {
    if (v != 1 && v != -1) throw std::invalid_argument("svm labels must be +1 or -1");
    pos = pos || v > 0;
    neg = neg || v < 0;
  }
  if (!pos || !neg) throw std::invalid_argument("svm: training data must contain both labels");

  const double C = o.C;
  constexpr double kTau = 1e-12;
  auto K = [&](std::size_t i, std::size_t j) { return gram[i * n + j]; };
  DualSolution s;
  s.alpha.assign(n, 0.0);
  std::vector<double> G(n, -1.0);  // gradient of 1/2 a'Qa - e'a
  auto& a = s.alpha;
  const std::size_t budget = o.max_passes * n * n;
  double violation = std::numeric_limits<double>::infinity();

  while (true) {
    double gmax = -std::numeric_limits<double>::infinity();
    std::size_t i = n;
    for (std::size_t t = 0; t < n; ++t) {
      if (in_up(y[t], a[t], C) && -y[t] * G[t] > gmax) {
        gmax = -y[t] * G[t];
        i = t;
      }
    }
    double gmax2 = -std::numeric_limits<double>::infinity();
    std::size_t j = n;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      if (!in_low(y[t], a[t], C)) continue;
      gmax2 = std::max(gmax2, y[t] * G[t]);
      if (i == n) continue;
      const double diff = gmax + y[t] * G[t];
      if (diff > 0.0) {
        double quad = K(i, i) + K(t, t) - 2.0 * K(i, t);
        if (quad <= 0.0) quad = kTau;
        const double score = -(diff * diff) / quad;
        if (score < best) {
          best = score;
          j = t;
        }
      }
    }
    violation = gmax + gmax2;
    if (i == n || j == n || violation < o.gap || s.iterations >= budget) break;
    ++s.iterations;

    const double old_ai = a[i];
    const double old_aj = a[j];
    const double Qii = K(i, i);
    const double Qjj = K(j, j);
    const double Qij = y[i] * y[j] * K(i, j);
    if (y[i] != y[j]) {
      double quad = Qii + Qjj + 2.0 * Qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-G[i] - G[j]) / quad;
      const double diff = a[i] - a[j];
      a[i] += delta;
      a[j] += delta;
      if (diff > 0.0) {
        if (a[j] < 0.0) {
          a[j] = 0.0;
          a[i] = diff;
        }
      } else if (a[i] < 0.0) {
        a[i] = 0.0;
        a[j] = -diff;
      }
      if (diff > 0.0) {
        if (a[i] > C) {
          a[i] = C;
          a[j] = C - diff;
        }
      } else if (a[j] > C) {
        a[j] = C;
        a[i] = C + diff;
      }
    } else {
      double quad = Qii + Qjj - 2.0 * Qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (G[i] - G[j]) / quad;
      const double sum = a[i] + a[j];
      a[i] -= delta;
      a[j] += delta;
      if (sum > C) {
        if (a[i] > C) {
          a[i] = C;
          a[j] = sum - C;
        }
      } else if (a[j] < 0.0) {
        a[j] = 0.0;
        a[i] = sum;
      }
      if (sum > C) {
        if (a[j] > C) {
          a[j] = C;
          a[i] = sum - C;
        }
      } else if (a[i] < 0.0) {
        a[i] = 0.0;
        a[j] = sum;
      }
    }
    const double dai = a[i] - old_ai;
    const double daj = a[j] - old_aj;
    for (std::size_t t = 0; t < n; ++t) {
      G[t] += y[t] * (y[i] * K(t, i) * dai + y[j] * K(t, j) * daj);
    }
  }

  // Threshold: average over free multipliers, else the midpoint of the feasible interval.
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double free_sum = 0.0;
  std::size_t free_count = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * G[t];
    if (a[t] >= C) {
      if (y[t] < 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else if (a[t] <= 0.0) {
      if (y[t] > 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else {
      free_sum += yg;
      ++free_count;
    }
  }
  const double rho = free_count > 0 ? free_sum / static_cast<double>(free_count) : 0.5 * (ub + lb);
  s.b = -rho;
  s.violation = violation;
  s.converged = violation <= o.tol;
  double f = 0.0;
  for (std::size_t t = 0; t < n; ++t) f += a[t] * (G[t] - 1.0);
  s.objective = -0.5 * f;
  return s;
}

SvmModel make_model(const Tensor64& x, std::span<const int> y, const DualSolution& sol, const SmoOptions& options) {
  SvmModel m;
  m.kernel = resolve(options.kernel, x.dim(1));
  m.C = options.C;
  m.b = sol.b;
  m.converged = sol.converged;
  m.iterations = sol.iterations;
  m.objective = sol.objective;
  std::vector<double> sv;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (sol.alpha[i] <= 0.0) continue;
    const auto r = row(x, i);
    sv.insert(sv.end(), r.begin(), r.end());
    m.alphas.push_back(sol.alpha[i]);
    m.labels.push_back(y[i]);
  }
  if (!m.alphas.empty()) m.support_vectors = Tensor64(Shape{m.alphas.size(), x.dim(1)}, std::move(sv));
  return m;
}

SvmModel smo_train(const Tensor64& x, std::span<const int> y, const SmoOptions& options) {
  if (x.rank() != 2 || x.dim(0) != y.size()) throw std::invalid_argument("smo_train: features and labels disagree");
  SmoOptions o = options;
  o.kernel = resolve(options.kernel, x.dim(1));
  const auto gram = gram_matrix(o.kernel, x);
  return make_model(x, y, solve_dual(gram, y, o), o);
}

double decision_raw(const SvmModel& m, std::span<const double> z) {
  if (m.alphas.empty()) throw std::invalid_argument("decision_raw: model has no support vectors");
  if (z.size() != m.support_vectors.dim(1)) {
    throw std::invalid_argument("decision_raw: expected dimension " + std::to_string(m.support_vectors.dim(1)) +
                                ", got " + std::to_string(z.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < m.alphas.size(); ++i) {
    s += m.alphas[i] * m.labels[i] * kernel_eval(m.kernel, row(m.support_vectors, i), z);
  }
  return s + m.b;
}

int predict(const SvmModel& m, std::span<const double> z) { return decision_raw(m, z) >= 0.0 ? 1 : -1; }

bool MulticlassSvm::all_converged() const {
  return std::all_of(models.begin(), models.end(), [](const SvmModel& m) { return m.converged; });
}

MulticlassSvm ovr_train(const Tensor64& x, std::span<const std::int32_t> labels, std::size_t num_classes,
                        const SmoOptions& options) {
  if (x.rank() != 2 || x.dim(0) != labels.size()) throw std::invalid_argument("ovr_train: features and labels disagree");
  if (num_classes < 2) throw std::invalid_argument("ovr_train: need at least two classes");
  std::vector<std::size_t> counts(num_classes, 0);
  for (auto l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) throw std::invalid_argument("ovr_train: label out of range");
    ++counts[static_cast<std::size_t>(l)];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) throw std::invalid_argument("ovr_train: class " + std::to_string(c) + " has no samples");
  }
  check_options(options);
  SmoOptions o = options;
  o.kernel = resolve(options.kernel, x.dim(1));
  const auto gram = gram_matrix(o.kernel, x);
  MulticlassSvm m;
  std::vector<int> y(labels.size());
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t i = 0; i < labels.size(); ++i) y[i] = static_cast<std::size_t>(labels[i]) == c ? 1 : -1;
    m.models.push_back(make_model(x, y, solve_dual(gram, y, o), o));
  }
  return m;
}

std::vector<double> ovr_decisions(const MulticlassSvm& m, std::span<const double> z) {
  std::vector<double> d;
  d.reserve(m.models.size());
  for (const auto& model : m.models) d.push_back(decision_raw(model, z));
  return d;
}

std::int32_t ovr_predict(const MulticlassSvm& m, std::span<const double> z) {
  if (m.models.empty()) throw std::invalid_argument("ovr_predict: empty model");
  const auto d = ovr_decisions(m, z);
  std::size_t best = 0;
  for (std::size_t c = 1; c < d.size(); ++c) {
    if (d[c] > d[best]) best = c;
  }
  return static_cast<std::int32_t>(best);
}

namespace {
constexpr const char* kFormat = "plantid-svm";
constexpr int kVersion = 1;

Tensor vector_tensor(const std::vector<double>& v) {
  Tensor t(Shape{v.size()});
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<float>(v[i]);
  return t;
}
}  // namespace

void save_model(const std::filesystem::path& path, const MulticlassSvm& m, const ModelFileInfo& info) {
  if (m.models.empty()) throw std::invalid_argument("save_model: empty model");
  nlohmann::json counts = nlohmann::json::array();
  nlohmann::json converged = nlohmann::json::array();
  nlohmann::json iterations = nlohmann::json::array();
  for (const auto& b : m.models) {
    counts.push_back(b.support_count());
    converged.push_back(b.converged);
    iterations.push_back(b.iterations);
  }
  const auto& first = m.models.front();
  nlohmann::json header{{"format", kFormat},
                        {"version", kVersion},
                        {"kernel", first.kernel},
                        {"C", first.C},
                        {"classes", m.class_names},
                        {"num_classes", m.models.size()},
                        {"dim", first.support_vectors.rank() == 2 ? first.support_vectors.dim(1) : 0},
                        {"support_counts", counts},
                        {"converged", converged},
                        {"iterations", iterations},
                        {"checkpoint_id", info.checkpoint_id},
                        {"config_digest", info.config_digest}};
  auto os = open_for_write(path);
  write_header(os, header);
  for (const auto& b : m.models) {
    if (b.support_count() > 0) {
      write_tensor(os, b.support_vectors.cast<float>());
      write_tensor(os, vector_tensor(b.alphas));
      write_tensor(os, vector_tensor(std::vector<double>(b.labels.begin(), b.labels.end())));
    }
    write_tensor(os, vector_tensor({b.b}));
  }
  if (!os) throw std::runtime_error("failed writing model " + path.string());
}

MulticlassSvm load_model(const std::filesystem::path& path, ModelFileInfo* info) {
  auto is = open_for_read(path);
  const auto header = read_header(is);
  expect_format(header, kFormat, kVersion);
  MulticlassSvm m;
  m.class_names = header.value("classes", std::vector<std::string>{});
  const auto kernel = header.at("kernel").get<KernelSpec>();
  const double C = header.at("C").get<double>();
  const auto counts = header.at("support_counts").get<std::vector<std::size_t>>();
  const auto converged = header.at("converged").get<std::vector<bool>>();
  const auto iterations = header.value("iterations", std::vector<std::size_t>(counts.size(), 0));
  if (converged.size() != counts.size() || iterations.size() != counts.size()) {
    throw FormatError("model header arrays disagree in length");
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    SvmModel b;
    b.kernel = kernel;
    b.C = C;
    b.converged = converged[c];
    b.iterations = iterations[c];
    if (counts[c] > 0) {
      b.support_vectors = read_tensor(is).cast<double>();
      const Tensor alphas = read_tensor(is);
      const Tensor labels = read_tensor(is);
      if (b.support_vectors.rank() != 2 || b.support_vectors.dim(0) != counts[c] || alphas.size() != counts[c] ||
          labels.size() != counts[c]) {
        throw FormatError("model class " + std::to_string(c) + ": blob sizes disagree with support count");
      }
      for (std::size_t i = 0; i < counts[c]; ++i) {
        b.alphas.push_back(alphas[i]);
        b.labels.push_back(labels[i] > 0.0f ? 1 : -1);
      }
    }
    const Tensor bias = read_tensor(is);
    if (bias.size() != 1) throw FormatError("model class " + std::to_string(c) + ": bias blob must hold one value");
    b.b = bias[0];
    m.models.push_back(std::move(b));
  }
  if (info != nullptr) {
    info->checkpoint_id = header.value("checkpoint_id", "");
    info->config_digest = header.value("config_digest", "");
  }
  return m;
}

}  // namespace plantid::svm
