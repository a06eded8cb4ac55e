#pragma once

#include "mfacv/estimators.hpp"
#include "mfacv/tensor.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfacv {

/// Running mean and centered cross-product of feature rows, merged chunk by
/// chunk (Chan et al. pairwise update). Rows may carry weights.
class CovarianceAccumulator {
 public:
  explicit CovarianceAccumulator(Index dim) : mean_(Vector::Zero(dim)), m2_(Matrix::Zero(dim, dim)) {}

  void add(const Matrix& rows, const Vector* weights = nullptr) {
    if (rows.rows() == 0) return;
    Vector w = weights ? *weights : Vector::Ones(rows.rows());
    const double wb = w.sum();
    if (!(wb > 0.0)) return;
    const Vector mb = (rows.transpose() * w) / wb;
    const Matrix centered = rows.rowwise() - mb.transpose();
    const Matrix m2b = centered.transpose() * w.asDiagonal() * centered;
    const double total = weight_ + wb;
    const Vector delta = mb - mean_;
    mean_ += delta * (wb / total);
    m2_ += m2b + delta * delta.transpose() * (weight_ * wb / total);
    weight_ = total;
    count_ += rows.rows();
  }

  const Vector& mean() const { return mean_; }
  double weight() const { return weight_; }
  Index count() const { return count_; }

  /// Unbiased (n - 1) covariance for unit weights, population covariance for
  /// probability weights.
  Matrix covariance(bool population) const {
    const double denom = population ? weight_ : weight_ - 1.0;
    if (!(denom > 0.0)) throw std::invalid_argument("covariance: not enough samples");
    return symmetrize(m2_ / denom);
  }

 private:
  Vector mean_;
  Matrix m2_;
  double weight_ = 0.0;
  Index count_ = 0;
};

/// Covariance blocks required by the kernels, stored as full stacked
/// matrices over the K+1 models. Blocks that the requested families do not
/// use are left empty.
struct PilotStatistics {
  static constexpr int kFormatVersion = 1;

  std::size_t models = 0;   // K + 1
  std::size_t outputs = 0;  // D
  std::vector<IndexSet> index_sets;
  std::int64_t count = 0;
  std::uint64_t seed = 0;
  bool weighted = false;

  Vector means;  // (K+1) D
  Matrix A;      // Cov[f]
  Matrix B;      // Cov[f, g]
  Matrix V;      // from A
  Matrix W;      // Cov[g]
  Matrix O, S, R;  // Cov of p = f f_u - f^2 and q = f f_u - 2 f E f
  Matrix C, E;     // Cov[p, g], Cov[q, g]
  Matrix U;        // Cov[f replicated]^(o2)

  std::size_t sets() const { return index_sets.size(); }
  bool has_variance() const { return W.size() > 0; }
  bool has_sensitivity() const { return O.size() > 0; }

  Matrix a(std::size_t i, std::size_t j) const { return blk(A, i, j, outputs, outputs); }
  Matrix b(std::size_t i, std::size_t j) const { return blk(B, i, j, outputs, outputs * outputs); }
  Matrix v(std::size_t i, std::size_t j) const { return blk(V, i, j, outputs * outputs, outputs * outputs); }
  Matrix w(std::size_t i, std::size_t j) const { return blk(W, i, j, outputs * outputs, outputs * outputs); }
  Matrix o(std::size_t i, std::size_t j) const { return blk(O, i, j, sets(), sets()); }
  Matrix s(std::size_t i, std::size_t j) const { return blk(S, i, j, sets(), sets()); }
  Matrix r(std::size_t i, std::size_t j) const { return blk(R, i, j, sets(), sets()); }
  Matrix c(std::size_t i, std::size_t j) const { return blk(C, i, j, sets(), 1); }
  Matrix e(std::size_t i, std::size_t j) const { return blk(E, i, j, sets(), 1); }
  Matrix u(std::size_t i, std::size_t j) const { return blk(U, i, j, sets(), sets()); }

  void require(Family f) const {
    if (uses_variance(f) && !has_variance()) throw std::invalid_argument("pilot lacks variance blocks (B, W)");
    if (uses_sensitivity(f) && !has_sensitivity()) throw std::invalid_argument("pilot lacks sensitivity blocks");
  }

  /// Pilot restricted to a subset of outputs (in the given order).
  PilotStatistics select_outputs(const std::vector<std::size_t>& cols) const {
    for (std::size_t c : cols) {
      if (c >= outputs) throw std::out_of_range("select_outputs: output index out of range");
    }
    if (has_sensitivity() && cols != std::vector<std::size_t>{0}) {
      throw std::invalid_argument("select_outputs: sensitivity pilots are scalar");
    }
    const std::size_t d = cols.size();
    std::vector<Index> f_idx, g_idx;
    for (std::size_t m = 0; m < models; ++m) {
      for (std::size_t c : cols) f_idx.push_back(static_cast<Index>(m * outputs + c));
      for (std::size_t a : cols) {
        for (std::size_t b2 : cols) g_idx.push_back(static_cast<Index>(m * outputs * outputs + a * outputs + b2));
      }
    }
    PilotStatistics out = *this;
    out.outputs = d;
    out.means = means(f_idx);
    out.A = A(f_idx, f_idx);
    if (has_variance()) {
      out.B = B(f_idx, g_idx);
      out.W = W(g_idx, g_idx);
    }
    out.derive_product_cov();
    return out;
  }

  /// Pilot restricted to a subset of index sets (in the given order).
  PilotStatistics select_index_sets(const std::vector<std::size_t>& which) const {
    if (!has_sensitivity()) throw std::invalid_argument("select_index_sets: pilot has no sensitivity blocks");
    std::vector<Index> idx;
    for (std::size_t m = 0; m < models; ++m) {
      for (std::size_t k : which) {
        if (k >= sets()) throw std::out_of_range("select_index_sets: index out of range");
        idx.push_back(static_cast<Index>(m * sets() + k));
      }
    }
    std::vector<Index> all_models(models);
    for (std::size_t m = 0; m < models; ++m) all_models[m] = static_cast<Index>(m);
    PilotStatistics out = *this;
    out.index_sets.clear();
    for (std::size_t k : which) out.index_sets.push_back(index_sets[k]);
    out.O = O(idx, idx);
    out.S = S(idx, idx);
    out.R = R(idx, idx);
    out.U = U(idx, idx);
    if (C.size() > 0) {
      out.C = C(idx, all_models);
      out.E = E(idx, all_models);
    }
    return out;
  }

  /// Pilot restricted to a subset of models; model 0 of the result is the
  /// first listed model.
  PilotStatistics select_models(const std::vector<std::size_t>& which) const {
    auto rows = [&](std::size_t width) {
      std::vector<Index> idx;
      for (std::size_t m : which) {
        if (m >= models) throw std::out_of_range("select_models: model index out of range");
        for (std::size_t k = 0; k < width; ++k) idx.push_back(static_cast<Index>(m * width + k));
      }
      return idx;
    };
    const auto f = rows(outputs);
    const auto g = rows(outputs * outputs);
    PilotStatistics out = *this;
    out.models = which.size();
    out.means = means(f);
    out.A = A(f, f);
    if (has_variance()) {
      out.B = B(f, g);
      out.W = W(g, g);
    }
    if (has_sensitivity()) {
      const auto x = rows(sets());
      out.O = O(x, x);
      out.S = S(x, x);
      out.R = R(x, x);
      out.U = U(x, x);
      if (C.size() > 0) {
        out.C = C(x, f);
        out.E = E(x, f);
      }
    }
    out.derive_product_cov();
    return out;
  }

  void derive_product_cov() {
    const Index d2 = static_cast<Index>(outputs * outputs);
    V.resize(static_cast<Index>(models) * d2, static_cast<Index>(models) * d2);
    for (std::size_t i = 0; i < models; ++i) {
      for (std::size_t j = 0; j < models; ++j) {
        V.block(static_cast<Index>(i) * d2, static_cast<Index>(j) * d2, d2, d2) = vblock_from_cov(a(i, j));
      }
    }
  }

  void validate() const {
    const Index f = static_cast<Index>(models * outputs);
    if (models == 0 || outputs == 0) throw std::invalid_argument("pilot: empty dimensions");
    if (means.size() != f || A.rows() != f || A.cols() != f) throw std::invalid_argument("pilot: A has the wrong shape");
    auto finite = [](const Matrix& m, const char* name) {
      if (!m.allFinite()) throw std::invalid_argument(std::string("pilot: non-finite entries in ") + name);
    };
    finite(A, "A");
    finite(B, "B");
    finite(W, "W");
    finite(O, "O");
    finite(S, "S");
    finite(R, "R");
    finite(C, "C");
    finite(E, "E");
    finite(U, "U");
  }

 private:
  static Matrix blk(const Matrix& m, std::size_t i, std::size_t j, std::size_t r, std::size_t c) {
    if (m.size() == 0) throw std::invalid_argument("pilot block requested but not estimated");
    return m.block(static_cast<Index>(i * r), static_cast<Index>(j * c), static_cast<Index>(r), static_cast<Index>(c));
  }
};

struct PilotNeeds {
  bool variance = false;
  bool sensitivity = false;

  static PilotNeeds for_family(Family f) { return PilotNeeds{uses_variance(f), uses_sensitivity(f)}; }
};

/// One chunk of pilot data: evaluations of every model on the same inputs.
struct PilotChunk {
  std::vector<Evaluations> models;
  Vector weights;  // empty: unit weights
};

namespace detail {

struct PilotLayout {
  std::size_t models, d, sets;
  bool variance, sensitivity;
  Index f_off = 0, g_off = 0, p_off = 0, q_off = 0, dim = 0;

  PilotLayout(std::size_t k, std::size_t d_, std::size_t s, PilotNeeds needs)
      : models(k), d(d_), sets(s), variance(needs.variance), sensitivity(needs.sensitivity) {
    Index at = static_cast<Index>(models * d);
    if (variance) {
      g_off = at;
      at += static_cast<Index>(models * d * d);
    }
    if (sensitivity) {
      p_off = at;
      at += static_cast<Index>(models * sets);
      q_off = at;
      at += static_cast<Index>(models * sets);
    }
    dim = at;
  }
};

inline Matrix pilot_features(const PilotLayout& L, const PilotChunk& chunk, const Vector& means) {
  const Index n = chunk.models.at(0).base.rows();
  Matrix x(n, L.dim);
  const Index d = static_cast<Index>(L.d);
  for (std::size_t m = 0; m < L.models; ++m) {
    const Matrix& f = chunk.models[m].base;
    if (f.rows() != n || f.cols() != d) throw std::invalid_argument("pilot: mismatched pilot evaluations across models");
    x.block(0, static_cast<Index>(m) * d, n, d) = f;
    const Vector mu = means.segment(static_cast<Index>(m) * d, d);
    if (L.variance) {
      for (Index s = 0; s < n; ++s) {
        const Vector c = f.row(s).transpose() - mu;
        x.row(s).segment(L.g_off + static_cast<Index>(m) * d * d, d * d) = kron_vec(c, c).transpose();
      }
    }
    if (L.sensitivity) {
      const auto& paired = chunk.models[m].paired;
      if (paired.size() != L.sets) throw std::invalid_argument("pilot: missing companion evaluations");
      for (std::size_t u = 0; u < L.sets; ++u) {
        if (paired[u].size() != n) throw std::invalid_argument("pilot: companion evaluations have the wrong length");
        const Index col = static_cast<Index>(m * L.sets + u);
        const Vector fz = f.col(0);
        const Vector prod = fz.cwiseProduct(paired[u]);
        x.col(L.p_off + col) = prod - fz.cwiseProduct(fz);
        x.col(L.q_off + col) = prod - 2.0 * mu[0] * fz;
      }
    }
  }
  return x;
}

}  // namespace detail

/// Pilot statistics from data delivered in chunks; `chunk(k)` must return
/// the same data on both passes. The first pass finds the model means used
/// for plug-in centering, the second accumulates every block at once.
inline PilotStatistics estimate_pilot_chunked(const std::function<PilotChunk(std::size_t)>& chunk, std::size_t chunks,
                                              PilotNeeds needs, const std::vector<IndexSet>& index_sets = {}) {
  if (chunks == 0) throw std::invalid_argument("pilot: no data");
  PilotChunk first = chunk(0);
  if (first.models.empty()) throw std::invalid_argument("pilot: no models");
  const std::size_t models = first.models.size();
  const std::size_t d = static_cast<std::size_t>(first.models[0].base.cols());
  const bool weighted = first.weights.size() > 0;
  if (needs.sensitivity && d != 1) throw std::invalid_argument("pilot: sensitivity blocks require scalar outputs (D = 1)");
  if (needs.sensitivity && index_sets.empty()) throw std::invalid_argument("pilot: sensitivity blocks need index subsets");

  CovarianceAccumulator mean_acc(static_cast<Index>(models * d));
  for (std::size_t k = 0; k < chunks; ++k) {
    PilotChunk c = k == 0 ? first : chunk(k);
    Matrix f(c.models.at(0).base.rows(), static_cast<Index>(models * d));
    for (std::size_t m = 0; m < models; ++m) {
      if (c.models.at(m).base.rows() != f.rows()) throw std::invalid_argument("pilot: mismatched pilot counts");
      f.block(0, static_cast<Index>(m * d), f.rows(), static_cast<Index>(d)) = c.models[m].base;
    }
    mean_acc.add(f, weighted ? &c.weights : nullptr);
  }
  const Index n = mean_acc.count();
  if (!weighted) {
    const Index need = needs.variance ? 4 : 2;
    if (n < need) {
      throw std::invalid_argument("pilot: need at least " + std::to_string(need) + " samples, got " + std::to_string(n));
    }
  }
  const Vector means = mean_acc.mean();

  detail::PilotLayout L(models, d, index_sets.size(), needs);
  CovarianceAccumulator acc(L.dim);
  for (std::size_t k = 0; k < chunks; ++k) {
    PilotChunk c = k == 0 ? first : chunk(k);
    acc.add(detail::pilot_features(L, c, means), weighted ? &c.weights : nullptr);
  }
  const Matrix cov = acc.covariance(weighted);

  PilotStatistics p;
  p.models = models;
  p.outputs = d;
  p.index_sets = needs.sensitivity ? index_sets : std::vector<IndexSet>{};
  p.count = static_cast<std::int64_t>(n);
  p.weighted = weighted;
  p.means = means;
  const Index fd = static_cast<Index>(models * d);
  p.A = cov.block(0, 0, fd, fd);
  if (needs.variance) {
    const Index gd = static_cast<Index>(models * d * d);
    p.B = cov.block(0, L.g_off, fd, gd);
    p.W = cov.block(L.g_off, L.g_off, gd, gd);
  }
  if (needs.sensitivity) {
    const Index xs = static_cast<Index>(models * L.sets);
    p.O = cov.block(L.p_off, L.p_off, xs, xs);
    p.S = cov.block(L.p_off, L.q_off, xs, xs);
    p.R = cov.block(L.q_off, L.q_off, xs, xs);
    p.U.resize(xs, xs);
    for (std::size_t i = 0; i < models; ++i) {
      for (std::size_t j = 0; j < models; ++j) {
        const double a = p.A(static_cast<Index>(i), static_cast<Index>(j));
        p.U.block(static_cast<Index>(i * L.sets), static_cast<Index>(j * L.sets), static_cast<Index>(L.sets),
                  static_cast<Index>(L.sets))
            .setConstant(a * a);
      }
    }
    if (needs.variance) {
      p.C = cov.block(L.p_off, L.g_off, xs, fd);
      p.E = cov.block(L.q_off, L.g_off, xs, fd);
    }
  }
  p.derive_product_cov();
  p.validate();
  return p;
}

/// Pilot statistics from in-memory evaluations of every model on a shared
/// pilot set. With `weights` (summing to one) the blocks are population
/// moments of the weighted design, e.g. an exact quadrature rule.
inline PilotStatistics estimate_pilot(const std::vector<Evaluations>& evals, PilotNeeds needs,
                                      const std::vector<IndexSet>& index_sets = {}, const Vector* weights = nullptr,
                                      std::size_t chunk_rows = 8192) {
  if (evals.empty()) throw std::invalid_argument("pilot: no models");
  const Index n = evals[0].base.rows();
  for (const auto& e : evals) {
    if (e.base.rows() != n) throw std::invalid_argument("pilot: mismatched pilot counts across models");
  }
  if (weights && weights->size() != n) throw std::invalid_argument("pilot: weight count mismatch");
  const std::size_t chunks = std::max<std::size_t>(1, (static_cast<std::size_t>(n) + chunk_rows - 1) / chunk_rows);
  auto get = [&](std::size_t k) {
    PilotChunk c;
    const Index first = static_cast<Index>(k * chunk_rows);
    const Index count = std::min<Index>(static_cast<Index>(chunk_rows), n - first);
    std::vector<std::size_t> rows(static_cast<std::size_t>(std::max<Index>(count, 0)));
    for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = static_cast<std::size_t>(first) + r;
    for (const auto& e : evals) c.models.push_back(e.select(rows));
    if (weights) c.weights = weights->segment(first, count);
    return c;
  };
  return estimate_pilot_chunked(get, chunks, needs, index_sets);
}

// Convenience wrappers for individual block groups.
inline Matrix pilot_mean_cov(const std::vector<Matrix>& evals) {
  std::vector<Evaluations> e;
  for (const auto& m : evals) e.push_back(Evaluations{m, {}});
  return estimate_pilot(e, PilotNeeds{}).A;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  j["data"] = data;
  return j;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const Index rows = j.at("rows").get<Index>();
  const Index cols = j.at("cols").get<Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Index>(data.size()) != rows * cols) throw std::invalid_argument("matrix entry count mismatch");
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  }
  return m;
}

inline nlohmann::json to_json(const PilotStatistics& p) {
  nlohmann::json j;
  j["format"] = "mfacv-pilot";
  j["version"] = PilotStatistics::kFormatVersion;
  j["models"] = p.models;
  j["outputs"] = p.outputs;
  j["index_sets"] = p.index_sets;
  j["count"] = p.count;
  j["seed"] = p.seed;
  j["weighted"] = p.weighted;
  j["means"] = std::vector<double>(p.means.data(), p.means.data() + p.means.size());
  nlohmann::json blocks = nlohmann::json::object();
  auto put = [&](const char* name, const Matrix& m) {
    if (m.size() > 0) blocks[name] = matrix_to_json(m);
  };
  put("A", p.A);
  put("B", p.B);
  put("W", p.W);
  put("O", p.O);
  put("S", p.S);
  put("R", p.R);
  put("C", p.C);
  put("E", p.E);
  put("U", p.U);
  j["blocks"] = blocks;
  return j;
}

inline PilotStatistics pilot_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "mfacv-pilot") throw std::invalid_argument("not a pilot statistics file");
  const int version = j.at("version").get<int>();
  if (version != PilotStatistics::kFormatVersion) {
    throw std::invalid_argument("unsupported pilot file version " + std::to_string(version));
  }
  PilotStatistics p;
  p.models = j.at("models").get<std::size_t>();
  p.outputs = j.at("outputs").get<std::size_t>();
  p.index_sets = j.at("index_sets").get<std::vector<IndexSet>>();
  p.count = j.at("count").get<std::int64_t>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.weighted = j.at("weighted").get<bool>();
  const auto means = j.at("means").get<std::vector<double>>();
  p.means = Eigen::Map<const Vector>(means.data(), static_cast<Index>(means.size()));
  const auto& b = j.at("blocks");
  auto get = [&](const char* name, Matrix& m) {
    if (b.contains(name)) m = matrix_from_json(b.at(name));
  };
  get("A", p.A);
  get("B", p.B);
  get("W", p.W);
  get("O", p.O);
  get("S", p.S);
  get("R", p.R);
  get("C", p.C);
  get("E", p.E);
  get("U", p.U);
  p.derive_product_cov();
  p.validate();
  return p;
}

inline void save_pilot(const PilotStatistics& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write pilot file " + path);
  out << to_json(p).dump(1) << "\n";
}

inline PilotStatistics load_pilot(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read pilot file " + path);
  return pilot_from_json(nlohmann::json::parse(in));
}

}  // namespace mfacv
