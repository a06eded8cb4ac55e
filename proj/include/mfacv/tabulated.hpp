#pragma once

#include "mfacv/models.hpp"
#include "mfacv/sampling.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfacv {

/// Outputs looked up by design row. Samples must carry their design rows.
class TabulatedModel : public Model {
 public:
  TabulatedModel(std::string name, Matrix table) : name_(std::move(name)), table_(std::move(table)) {}

  std::string name() const override { return name_; }
  std::size_t outputs() const override { return static_cast<std::size_t>(table_.cols()); }
  std::size_t rows() const { return static_cast<std::size_t>(table_.rows()); }
  const Matrix& table() const { return table_; }

  Matrix evaluate(const Samples& samples) const override {
    if (static_cast<Index>(samples.rows.size()) != samples.size()) {
      throw EvaluationError(name_ + ": tabulated model needs samples drawn from its design table");
    }
    Matrix out(samples.size(), table_.cols());
    for (Index r = 0; r < samples.size(); ++r) {
      const auto row = samples.rows[static_cast<std::size_t>(r)];
      if (row < 0 || row >= table_.rows()) {
        throw EvaluationError(name_ + ": row " + std::to_string(row) + " out of range (table has " +
                              std::to_string(table_.rows()) + " rows)");
      }
      out.row(r) = table_.row(row);
    }
    return out;
  }

 private:
  std::string name_;
  Matrix table_;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t s = 0;
    while (s < cell.size() && cell[s] == ' ') ++s;
    out.push_back(cell.substr(s));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_cell(const std::string& cell, std::size_t line, const std::string& column) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (cell.empty() || end != cell.c_str() + cell.size() || errno == ERANGE) {
    throw std::invalid_argument("tabulated: line " + std::to_string(line) + ", column '" + column +
                                "': not a number: '" + cell + "'");
  }
  return v;
}

}  // namespace detail

/// Parse a tabulated ensemble. Header: input_0..input_{I-1}, then m{k}_out{d}
/// for every model k and output d (any column order). Costs default to 1.
inline ModelEnsemble load_tabulated_models(const std::string& path, std::vector<double> costs = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("tabulated: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("tabulated: empty file '" + path + "'");
  const auto header = detail::split_csv_line(line);

  static const std::regex input_re(R"(input_(\d+))");
  static const std::regex output_re(R"(m(\d+)_out(\d+))");
  std::map<std::size_t, std::size_t> input_col;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> output_col;
  std::size_t max_model = 0, max_out = 0;
  for (std::size_t c = 0; c < header.size(); ++c) {
    std::smatch m;
    bool fresh = false;
    if (std::regex_match(header[c], m, input_re)) {
      fresh = input_col.emplace(std::stoul(m[1]), c).second;
    } else if (std::regex_match(header[c], m, output_re)) {
      const std::size_t k = std::stoul(m[1]), d = std::stoul(m[2]);
      fresh = output_col.emplace(std::make_pair(k, d), c).second;
      max_model = std::max(max_model, k);
      max_out = std::max(max_out, d);
    } else {
      throw std::invalid_argument("tabulated: unrecognized column '" + header[c] + "'");
    }
    if (!fresh) throw std::invalid_argument("tabulated: duplicate column '" + header[c] + "'");
  }
  if (input_col.empty()) throw std::invalid_argument("tabulated: missing columns: no input_* columns");
  if (output_col.empty()) throw std::invalid_argument("tabulated: missing columns: no m*_out* columns");
  for (std::size_t i = 0; i < input_col.size(); ++i) {
    if (!input_col.count(i)) throw std::invalid_argument("tabulated: missing columns: input_" + std::to_string(i));
  }
  for (std::size_t k = 0; k <= max_model; ++k) {
    for (std::size_t d = 0; d <= max_out; ++d) {
      if (!output_col.count({k, d})) {
        throw std::invalid_argument("tabulated: missing columns: m" + std::to_string(k) + "_out" + std::to_string(d));
      }
    }
  }

  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw std::invalid_argument("tabulated: row-count mismatch at line " + std::to_string(lineno) + ": expected " +
                                  std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()));
    }
    std::vector<double> r(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) r[c] = detail::parse_cell(cells[c], lineno, header[c]);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw std::invalid_argument("tabulated: no data rows in '" + path + "'");

  const auto n = static_cast<Index>(rows.size());
  Matrix design(n, static_cast<Index>(input_col.size()));
  for (Index r = 0; r < n; ++r) {
    for (const auto& [i, c] : input_col) design(r, static_cast<Index>(i)) = rows[static_cast<std::size_t>(r)][c];
  }
  ModelEnsemble e;
  e.name = "tabulated:" + path;
  for (std::size_t k = 0; k <= max_model; ++k) {
    Matrix t(n, static_cast<Index>(max_out + 1));
    for (Index r = 0; r < n; ++r) {
      for (std::size_t d = 0; d <= max_out; ++d) {
        t(r, static_cast<Index>(d)) = rows[static_cast<std::size_t>(r)][output_col.at({k, d})];
      }
    }
    e.models.push_back(std::make_shared<TabulatedModel>("m" + std::to_string(k), std::move(t)));
  }
  if (costs.empty()) costs.assign(e.models.size(), 1.0);
  if (costs.size() != e.models.size()) {
    throw std::invalid_argument("tabulated: " + std::to_string(e.models.size()) + " models but " +
                                std::to_string(costs.size()) + " costs");
  }
  e.costs = std::move(costs);
  e.source = DesignTable(design);
  return e;
}

/// Evaluate every model of `e` on `design` and write a tabulated CSV that
/// reloads to bit-identical values.
inline void export_tabulated(const ModelEnsemble& e, const Matrix& design, const std::string& path) {
  Samples s;
  s.inputs = design;
  std::vector<Matrix> outs;
  for (const auto& m : e.models) outs.push_back(m->evaluate(s));

  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("tabulated: cannot write '" + path + "'");
  for (Index i = 0; i < design.cols(); ++i) std::fprintf(f, "%sinput_%td", i ? "," : "", i);
  for (std::size_t k = 0; k < outs.size(); ++k) {
    for (Index d = 0; d < outs[k].cols(); ++d) std::fprintf(f, ",m%zu_out%td", k, d);
  }
  std::fputc('\n', f);
  for (Index r = 0; r < design.rows(); ++r) {
    for (Index i = 0; i < design.cols(); ++i) std::fprintf(f, "%s%.17g", i ? "," : "", design(r, i));
    for (const auto& o : outs) {
      for (Index d = 0; d < o.cols(); ++d) std::fprintf(f, ",%.17g", o(r, d));
    }
    std::fputc('\n', f);
  }
  if (std::fclose(f) != 0) throw std::runtime_error("tabulated: write failed for '" + path + "'");
}

}  // namespace mfacv
