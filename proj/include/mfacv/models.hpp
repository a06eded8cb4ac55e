#pragma once

#include "mfacv/estimators.hpp"
#include "mfacv/sampling.hpp"
#include "mfacv/tensor.hpp"

#include <boost/math/constants/constants.hpp>

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mfacv {

/// Failure while evaluating a model (external process errors, lookups out
/// of range, protocol violations).
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Model {
 public:
  virtual ~Model() = default;
  virtual std::string name() const = 0;
  virtual std::size_t outputs() const = 0;
  /// One row of outputs per sample row.
  virtual Matrix evaluate(const Samples& samples) const = 0;
};

using ModelPtr = std::shared_ptr<const Model>;

/// Model defined by a pointwise function of the input row.
class FunctionModel : public Model {
 public:
  using Fn = std::function<void(const double* x, double* out)>;

  FunctionModel(std::string name, std::size_t outputs, Fn fn)
      : name_(std::move(name)), outputs_(outputs), fn_(std::move(fn)) {}

  std::string name() const override { return name_; }
  std::size_t outputs() const override { return outputs_; }

  Matrix evaluate(const Samples& samples) const override {
    const Index n = samples.size();
    Matrix out(n, static_cast<Index>(outputs_));
    // Row-major scratch so the callback sees contiguous rows.
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x = samples.inputs;
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> y(n, static_cast<Index>(outputs_));
    for (Index r = 0; r < n; ++r) fn_(x.row(r).data(), y.row(r).data());
    out = y;
    return out;
  }

 private:
  std::string name_;
  std::size_t outputs_;
  Fn fn_;
};

/// Models that share one input distribution, with per-evaluation costs.
struct ModelEnsemble {
  std::string name;
  std::vector<ModelPtr> models;
  std::vector<double> costs;
  SampleSource source;

  std::size_t size() const { return models.size(); }
  std::size_t outputs() const { return models.empty() ? 0 : models[0]->outputs(); }
  std::size_t inputs() const { return source_dimension(source); }

  void validate() const {
    if (models.empty()) throw std::invalid_argument("ensemble has no models");
    if (costs.size() != models.size()) throw std::invalid_argument("ensemble needs one cost per model");
    for (const auto& m : models) {
      if (m->outputs() != outputs()) throw std::invalid_argument("all models must have the same number of outputs");
    }
  }
};

/// Evaluations of `model` on `samples` (and on each companion set) restricted
/// to the output columns `cols`.
inline Evaluations evaluate_model(const Model& model, const Samples& samples, const std::vector<Samples>& companions,
                                  const std::vector<std::size_t>& cols) {
  auto pick = [&](const Matrix& full) {
    Matrix out(full.rows(), static_cast<Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (cols[c] >= static_cast<std::size_t>(full.cols())) throw std::out_of_range("output column out of range");
      out.col(static_cast<Index>(c)) = full.col(static_cast<Index>(cols[c]));
    }
    return out;
  };
  Evaluations ev;
  ev.base = pick(model.evaluate(samples));
  for (const auto& comp : companions) {
    const Matrix v = pick(model.evaluate(comp));
    ev.paired.push_back(v.col(0));
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Built-in synthetic suites
// ---------------------------------------------------------------------------

/// Three models of one input on U(0,1) with three outputs each: polynomial
/// and trigonometric components of decreasing fidelity.
inline ModelEnsemble polynomial_trig_suite() {
  const double pi = boost::math::constants::pi<double>();
  const double s11 = std::sqrt(11.0), s7 = std::sqrt(7.0), s3h = std::sqrt(3.0) / 2.0;
  ModelEnsemble e;
  e.name = "polynomial-trig";
  e.models.push_back(std::make_shared<FunctionModel>("f0", 3, [=](const double* x, double* y) {
    const double t = x[0];
    y[0] = s11 * std::pow(t, 5);
    y[1] = std::pow(t, 4);
    y[2] = std::sin(2.0 * pi * t);
  }));
  e.models.push_back(std::make_shared<FunctionModel>("f1", 3, [=](const double* x, double* y) {
    const double t = x[0];
    y[0] = s7 * std::pow(t, 3);
    y[1] = s7 * std::pow(t, 2);
    y[2] = std::cos(2.0 * pi * t + pi / 2.0);
  }));
  e.models.push_back(std::make_shared<FunctionModel>("f2", 3, [=](const double* x, double* y) {
    const double t = x[0];
    y[0] = s3h * std::pow(t, 2);
    y[1] = s3h * t;
    y[2] = std::cos(2.0 * pi * t + pi / 4.0);
  }));
  e.costs = {1.0, 0.01, 0.001};
  e.source = InputDistribution::uniform_cube(1);
  return e;
}

/// Three models on U(0,1)^9 with ten outputs: a weighted sum of cubes
/// followed by the nine weighted cubes. Weights are 1, sqrt(i) and i.
inline ModelEnsemble cubic_sum_suite() {
  ModelEnsemble e;
  e.name = "cubic-sum";
  auto make = [](std::string name, std::function<double(int)> weight) {
    return std::make_shared<FunctionModel>(std::move(name), 10, [weight](const double* x, double* y) {
      double total = 0.0;
      for (int i = 1; i <= 9; ++i) {
        const double term = weight(i) * x[i - 1] * x[i - 1] * x[i - 1];
        y[i] = term;
        total += term;
      }
      y[0] = total;
    });
  };
  e.models.push_back(make("f0", [](int) { return 1.0; }));
  e.models.push_back(make("f1", [](int i) { return std::sqrt(static_cast<double>(i)); }));
  e.models.push_back(make("f2", [](int i) { return static_cast<double>(i); }));
  e.costs = {1.0, 0.01, 0.001};
  e.source = InputDistribution::uniform_cube(9);
  return e;
}

inline ModelEnsemble builtin_suite(const std::string& name) {
  if (name == "polynomial-trig") return polynomial_trig_suite();
  if (name == "cubic-sum") return cubic_sum_suite();
  throw std::invalid_argument("unknown builtin suite '" + name + "'");
}

}  // namespace mfacv
