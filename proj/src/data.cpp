#include "priorforest/data.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "priorforest/error.hpp"

namespace priorforest {

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string trim(std::string s) {
  while (!s.empty() && (std::isspace(static_cast<unsigned char>(s.back())) || s.back() == '"')) s.pop_back();
  size_t i = 0;
  while (i < s.size() && (std::isspace(static_cast<unsigned char>(s[i])) || s[i] == '"')) ++i;
  return s.substr(i);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

}  // namespace

const std::vector<double>& DataTable::col(const std::string& name) const {
  auto it = columns.find(name);
  if (it == columns.end()) throw Error(ErrorCode::invalid_data, "data has no column \"" + name + "\"");
  return it->second;
}

void DataTable::add(const std::string& name, std::vector<double> values) {
  if (!names.empty() && values.size() != rows) {
    throw Error(ErrorCode::invalid_data, "column \"" + name + "\" has " + std::to_string(values.size()) +
                                             " rows, expected " + std::to_string(rows));
  }
  rows = values.size();
  if (!columns.count(name)) names.push_back(name);
  columns[name] = std::move(values);
}

DataTable parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  DataTable t;
  std::vector<std::string> header;
  std::vector<std::vector<double>> cols;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line[0] == '#') continue;
    auto fields = split_fields(line);
    if (header.empty()) {
      header = fields;
      cols.assign(header.size(), {});
      continue;
    }
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::invalid_data, "csv line " + std::to_string(line_no) + ": expected " +
                                               std::to_string(header.size()) + " fields");
    }
    for (size_t j = 0; j < fields.size(); ++j) {
      const auto& f = fields[j];
      if (f == "NA" || f.empty()) {
        cols[j].push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      char* end = nullptr;
      const double v = std::strtod(f.c_str(), &end);
      if (end == f.c_str() || *end != '\0') {
        throw Error(ErrorCode::invalid_data, "csv line " + std::to_string(line_no) + ": non-numeric value \"" + f + "\"");
      }
      cols[j].push_back(v);
    }
  }
  if (header.empty()) throw Error(ErrorCode::invalid_data, "csv has no header");
  for (size_t j = 0; j < header.size(); ++j) t.add(header[j], std::move(cols[j]));
  return t;
}

DataTable read_csv(const std::string& path) { return parse_csv(slurp(path)); }

std::string to_csv(const DataTable& t) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (size_t j = 0; j < t.names.size(); ++j) os << (j ? "," : "") << t.names[j];
  os << "\n";
  for (size_t i = 0; i < t.rows; ++i) {
    for (size_t j = 0; j < t.names.size(); ++j) os << (j ? "," : "") << t.columns.at(t.names[j])[i];
    os << "\n";
  }
  return os.str();
}

Eigen::MatrixXd parse_matrix(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    for (auto& c : line) {
      if (c == ',' || c == ';' || c == '\t' || c == '\r') c = ' ';
    }
    std::istringstream ls(line);
    std::vector<double> r;
    double v;
    while (ls >> v) r.push_back(v);
    if (!ls.eof()) throw Error(ErrorCode::invalid_data, "matrix file contains a non-numeric entry");
    if (!r.empty()) rows.push_back(std::move(r));
  }
  if (rows.empty()) throw Error(ErrorCode::invalid_data, "matrix file is empty");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw Error(ErrorCode::invalid_data, "matrix rows have unequal length");
    for (size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

Eigen::MatrixXd read_matrix_file(const std::string& path) { return parse_matrix(slurp(path)); }

std::string format_matrix(const Eigen::MatrixXd& m) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? " " : "") << m(i, j);
    os << "\n";
  }
  return os.str();
}

Eigen::MatrixXd ModelFrame::obs_cov(int k) const {
  if (k == static_cast<int>(components.size())) return Eigen::MatrixXd::Identity(n, n);
  const auto& F = obs_factor.at(static_cast<size_t>(k));
  return F * F.transpose();
}

int ModelFrame::effect_index(const std::string& label) const {
  for (size_t i = 0; i < components.size(); ++i) {
    if (components[i].label == label) return static_cast<int>(i);
  }
  if (label == kResidualLabel && spec.has_residual()) return static_cast<int>(components.size());
  throw Error(ErrorCode::unknown_name, "unknown effect \"" + label + "\"");
}

ModelFrame build_frame(const ModelSpec& spec, const ModelInputs& inputs) {
  ModelFrame f;
  f.spec = spec;
  const auto& d = inputs.data;
  f.n = static_cast<int>(d.rows);
  if (f.n == 0) throw Error(ErrorCode::invalid_data, "data has no rows");

  auto vec = [&](const std::string& name) {
    const auto& c = d.col(name);
    Eigen::VectorXd v(f.n);
    for (int i = 0; i < f.n; ++i) {
      if (std::isnan(c[static_cast<size_t>(i)])) throw Error(ErrorCode::invalid_data, "column \"" + name + "\" has missing values");
      v(i) = c[static_cast<size_t>(i)];
    }
    return v;
  };

  if (d.has(spec.response)) {
    f.y = vec(spec.response);
  } else {
    f.has_response = false;
    f.y = Eigen::VectorXd::Zero(f.n);
  }
  f.trials = Eigen::VectorXd::Ones(f.n);
  f.offset = Eigen::VectorXd::Zero(f.n);
  if (spec.likelihood == Likelihood::binomial) {
    const std::string tc = inputs.trials_column.empty() ? "Ntrials" : inputs.trials_column;
    if (d.has(tc)) {
      f.trials = vec(tc);
    } else if (!inputs.trials_column.empty()) {
      throw Error(ErrorCode::invalid_data, "data has no trials column \"" + tc + "\"");
    }
    for (int i = 0; i < f.n && f.has_response; ++i) {
      if (f.y(i) < 0 || f.y(i) > f.trials(i) || f.y(i) != std::floor(f.y(i))) {
        throw Error(ErrorCode::invalid_data, "binomial response must be an integer in [0, trials] at row " + std::to_string(i + 1));
      }
    }
  }
  if (spec.likelihood == Likelihood::poisson) {
    if (!inputs.offset_column.empty()) f.offset = vec(inputs.offset_column);
    for (int i = 0; i < f.n && f.has_response; ++i) {
      if (f.y(i) < 0 || f.y(i) != std::floor(f.y(i))) {
        throw Error(ErrorCode::invalid_data, "poisson response must be a nonnegative integer at row " + std::to_string(i + 1));
      }
    }
  }

  const int p = (spec.has_intercept ? 1 : 0) + static_cast<int>(spec.covariates.size());
  f.X.resize(f.n, p);
  int col = 0;
  if (spec.has_intercept) {
    f.X.col(col++).setOnes();
    f.fixed_names.push_back("intercept");
  }
  for (const auto& c : spec.covariates) {
    f.X.col(col++) = vec(c);
    f.fixed_names.push_back(c);
  }

  for (const auto& decl : spec.components) {
    const Eigen::VectorXd raw = vec(decl.label);
    std::vector<int> idx(static_cast<size_t>(f.n));
    int max_level = 0;
    for (int i = 0; i < f.n; ++i) {
      const double v = raw(i);
      if (v != std::floor(v) || v < 1) {
        throw Error(ErrorCode::invalid_data, "index column \"" + decl.label + "\" must hold positive integers (row " +
                                                 std::to_string(i + 1) + ")");
      }
      idx[static_cast<size_t>(i)] = static_cast<int>(v) - 1;
      max_level = std::max(max_level, static_cast<int>(v));
    }
    StructureOptions opt;
    opt.constr = decl.constr;
    opt.lin_constr = decl.lin_constr;
    opt.scale_model = decl.scale_model;
    int levels = max_level;
    if (decl.kind == LatentKind::besag) {
      auto it = inputs.graphs.find(decl.graph);
      opt.graph = it != inputs.graphs.end() ? it->second : read_graph_file(decl.graph);
      levels = opt.graph->n;
    } else if (decl.kind == LatentKind::generic0) {
      auto it = inputs.matrices.find(decl.cmatrix);
      opt.precision = it != inputs.matrices.end() ? it->second : read_matrix_file(decl.cmatrix);
      levels = static_cast<int>(opt.precision->rows());
    }
    if (max_level > levels) {
      throw Error(ErrorCode::out_of_range, "index column \"" + decl.label + "\" exceeds the component dimension " +
                                               std::to_string(levels));
    }
    LatentComponent comp = build_structure(decl.kind, levels, opt, decl.label);
    for (const auto& w : comp.warnings) f.warnings.push_back(w);
    Eigen::MatrixXd F(f.n, comp.cov_factor.cols());
    for (int i = 0; i < f.n; ++i) F.row(i) = comp.cov_factor.row(idx[static_cast<size_t>(i)]);
    f.obs_factor.push_back(std::move(F));
    f.components.push_back(std::move(comp));
    f.index.push_back(std::move(idx));
  }
  return f;
}

}  // namespace priorforest
