#include "sace/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace sace {

void TrialData::validate() const {
  if (n <= 0) throw ValidationError("dataset is empty");
  if (J < 2) throw ValidationError("need at least two arms, got J=" + std::to_string(J));
  if (static_cast<int>(z.size()) != n || static_cast<int>(s.size()) != n || y.size() != n ||
      static_cast<int>(y_present.size()) != n || x.rows() != n)
    throw ValidationError("field lengths disagree with n");
  std::vector<int> arm_count(J, 0);
  for (int i = 0; i < n; ++i) {
    if (z[i] < 1 || z[i] > J)
      throw ValidationError("treatment label outside 1.." + std::to_string(J) + " at row " +
                            std::to_string(i + 1));
    if (s[i] != 0 && s[i] != 1)
      throw ValidationError("survival indicator outside {0,1} at row " + std::to_string(i + 1));
    if ((s[i] == 1) != (y_present[i] == 1))
      throw ValidationError(s[i] == 1 ? "outcome missing for survivor at row " + std::to_string(i + 1)
                                      : "outcome present for non-survivor at row " +
                                            std::to_string(i + 1));
    if (y_present[i] && !std::isfinite(y[i]))
      throw ValidationError("non-finite outcome at row " + std::to_string(i + 1));
    arm_count[z[i] - 1]++;
  }
  for (int a = 0; a < J; ++a)
    if (arm_count[a] == 0) throw ValidationError("arm " + std::to_string(a + 1) + " has no units");
  if (!x.allFinite()) throw ValidationError("non-finite covariate value");
  if (pi) {
    if (static_cast<int>(pi->size()) != J)
      throw ValidationError("pi length must equal the arm count");
    double sum = 0.0;
    for (double v : *pi) {
      if (!(v > 0.0 && v < 1.0)) throw ValidationError("each pi_z must lie in (0,1)");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw ValidationError("pi must sum to 1 (tolerance 1e-12)");
  }
}

int DesignSpec::width(int J) const {
  int base = static_cast<int>(columns.size());
  int w = (intercept ? 1 : 0) + base;
  if (treatment_interactions) w += (J - 1) * (1 + base);
  return w;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

double parse_num(const std::string& cell, const std::string& col, int row) {
  try {
    std::size_t pos = 0;
    double v = std::stod(cell, &pos);
    while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos]))) ++pos;
    if (pos != cell.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw ValidationError("non-numeric cell in column '" + col + "' at data row " +
                          std::to_string(row));
  }
}

}  // namespace

TrialData load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open data file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty data file: " + path);
  auto header = split_line(line);
  auto col_of = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ValidationError("missing column '" + name + "' in " + path);
    return static_cast<int>(it - header.begin());
  };
  int zc = col_of(schema.z_col);
  int sc = col_of(schema.s_col);
  int yc = col_of(schema.y_col);
  std::vector<int> xc;
  for (const auto& name : schema.x_cols) xc.push_back(col_of(name));

  std::vector<int> zs, ss;
  std::vector<double> ys;
  std::vector<char> yp;
  std::vector<std::vector<double>> xs;
  int row = 0;
  while (std::getline(in, line)) {
    if (is_blank(line)) continue;
    ++row;
    auto cells = split_line(line);
    if (cells.size() != header.size())
      throw ValidationError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                            " cells, header has " + std::to_string(header.size()));
    double zv = parse_num(cells[zc], schema.z_col, row);
    double sv = parse_num(cells[sc], schema.s_col, row);
    if (zv != std::floor(zv) || zv < 1)
      throw ValidationError("treatment label must be a positive integer at data row " +
                            std::to_string(row));
    if (sv != 0.0 && sv != 1.0)
      throw ValidationError("survival indicator must be 0 or 1 at data row " + std::to_string(row));
    zs.push_back(static_cast<int>(zv));
    ss.push_back(static_cast<int>(sv));
    bool has_y = !is_blank(cells[yc]);
    if (has_y) {
      double yv = parse_num(cells[yc], schema.y_col, row);
      if (std::isnan(yv)) has_y = false;
      ys.push_back(has_y ? yv : 0.0);
    } else {
      ys.push_back(0.0);
    }
    if (sv == 1.0 && !has_y)
      throw ValidationError("outcome missing for survivor at data row " + std::to_string(row));
    if (sv == 0.0) has_y = false;  // spec: y defined iff s=1; stray values for the dead dropped
    yp.push_back(has_y ? 1 : 0);
    std::vector<double> xrow;
    xrow.reserve(xc.size());
    for (std::size_t j = 0; j < xc.size(); ++j)
      xrow.push_back(parse_num(cells[xc[j]], schema.x_cols[j], row));
    xs.push_back(std::move(xrow));
  }
  if (row == 0) throw ValidationError("no data rows in " + path);

  TrialData d;
  d.n = row;
  d.J = *std::max_element(zs.begin(), zs.end());
  d.z = std::move(zs);
  d.s = std::move(ss);
  d.y = Eigen::Map<Eigen::VectorXd>(ys.data(), row);
  d.y_present = std::move(yp);
  d.x.resize(row, static_cast<int>(xc.size()));
  for (int i = 0; i < row; ++i)
    for (std::size_t j = 0; j < xc.size(); ++j) d.x(i, static_cast<int>(j)) = xs[i][j];
  d.validate();
  return d;
}

void write_csv(const TrialData& data, const CsvSchema& schema, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write data file: " + path);
  out << schema.z_col << ',' << schema.s_col << ',' << schema.y_col;
  for (const auto& c : schema.x_cols) out << ',' << c;
  out << '\n';
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
  };
  for (int i = 0; i < data.n; ++i) {
    out << data.z[i] << ',' << data.s[i] << ',';
    if (data.y_present[i]) put(data.y[i]);
    for (int j = 0; j < data.p(); ++j) {
      out << ',';
      put(data.x(i, j));
    }
    out << '\n';
  }
}

namespace {

void check_spec(const TrialData& data, const DesignSpec& spec) {
  if (spec.columns.empty() && !spec.intercept)
    throw ValidationError("design has no regressors");
  for (int c : spec.columns)
    if (c < 0 || c >= data.p())
      throw ValidationError("design refers to covariate column " + std::to_string(c) +
                            " outside 0.." + std::to_string(data.p() - 1));
  if (!spec.transforms.empty() && spec.transforms.size() != spec.columns.size())
    throw ValidationError("transforms must be empty or match the column list");
}

double apply_transform(double v, Transform t) {
  return t == Transform::Cosine ? std::cos(v) : v;
}

// Shared assembly; arm_override < 0 means "use the observed Z". Column order
// is [intercept | arm dummies 1..J-1 | covariates | dummy*covariate blocks],
// matching the pooled outcome model layout {1, 1(Z=1), 1(Z=2), X, 1(Z=1)X, ...}.
Eigen::MatrixXd assemble(const TrialData& data, const DesignSpec& spec,
                         const std::vector<int>& rows, int arm_override) {
  int base = static_cast<int>(spec.columns.size());
  int w = spec.width(data.J);
  Eigen::MatrixXd out(static_cast<int>(rows.size()), w);
  std::vector<double> xv(base);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    int i = rows[r];
    for (int j = 0; j < base; ++j) {
      Transform t = spec.transforms.empty() ? Transform::Identity : spec.transforms[j];
      xv[j] = apply_transform(data.x(i, spec.columns[j]), t);
    }
    int c = 0;
    if (spec.intercept) out(r, c++) = 1.0;
    if (spec.treatment_interactions) {
      int zi = arm_override > 0 ? arm_override : data.z[i];
      for (int a = 1; a <= data.J - 1; ++a) out(r, c++) = (zi == a) ? 1.0 : 0.0;
      for (int j = 0; j < base; ++j) out(r, c++) = xv[j];
      for (int a = 1; a <= data.J - 1; ++a) {
        double dummy = (zi == a) ? 1.0 : 0.0;
        for (int j = 0; j < base; ++j) out(r, c++) = dummy * xv[j];
      }
    } else {
      for (int j = 0; j < base; ++j) out(r, c++) = xv[j];
    }
  }
  return out;
}

}  // namespace

Eigen::MatrixXd build_design(const TrialData& data, const DesignSpec& spec,
                             const std::function<bool(int)>& subset) {
  check_spec(data, spec);
  std::vector<int> rows;
  for (int i = 0; i < data.n; ++i)
    if (!subset || subset(i)) rows.push_back(i);
  if (rows.empty()) throw ValidationError("design subset selects no units");
  return assemble(data, spec, rows, -1);
}

Eigen::MatrixXd build_design_at_arm(const TrialData& data, const DesignSpec& spec, int arm_z) {
  check_spec(data, spec);
  if (arm_z < 1 || arm_z > data.J) throw ValidationError("arm out of range in build_design_at_arm");
  std::vector<int> rows(data.n);
  for (int i = 0; i < data.n; ++i) rows[i] = i;
  return assemble(data, spec, rows, arm_z);
}

}  // namespace sace
