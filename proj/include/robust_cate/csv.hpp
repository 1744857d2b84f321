#pragma once

#include <Eigen/Core>
#include <cctype>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "robust_cate/data.hpp"
#include "robust_cate/dgp.hpp"

namespace robust_cate {

/// Input-format problem (malformed CSV or config); the CLI maps this to
/// exit code 2.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace csv_detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, sep)) fields.push_back(trim(field));
  if (!line.empty() && line.back() == sep) fields.push_back("");
  return fields;
}

inline double parse_double(const std::string& field, int row, int col) {
  try {
    std::size_t used = 0;
    const double value = std::stod(field, &used);
    if (used != field.size()) throw std::invalid_argument("trailing junk");
    return value;
  } catch (const std::exception&) {
    throw InputError("row " + std::to_string(row) + ", column " +
                     std::to_string(col) + ": cannot parse '" + field +
                     "' as a number");
  }
}

}  // namespace csv_detail

struct LoadedDataset {
  CausalDataset dataset;
  std::optional<Eigen::VectorXi> contaminated;
};

/// Reads the dataset schema: header y,w,x0..x{d-1}[,tau_true][,contaminated].
inline LoadedDataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open CSV file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw InputError("empty CSV file: " + path);
  const auto header = csv_detail::split(line, ',');

  int y_col = -1, w_col = -1, tau_col = -1, contaminated_col = -1;
  std::vector<int> x_cols;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const std::string& name = header[c];
    if (name == "y") {
      y_col = c;
    } else if (name == "w") {
      w_col = c;
    } else if (name == "tau_true") {
      tau_col = c;
    } else if (name == "contaminated") {
      contaminated_col = c;
    } else if (name.size() >= 2 && name[0] == 'x') {
      x_cols.push_back(c);
    } else {
      throw InputError("unrecognised column '" + name + "' in header");
    }
  }
  if (y_col < 0) throw InputError("missing required column y");
  if (w_col < 0) throw InputError("missing required column w");
  if (x_cols.empty()) throw InputError("missing covariate columns x0..");

  std::vector<std::vector<double>> rows;
  int row_num = 1;
  while (std::getline(in, line)) {
    ++row_num;
    if (csv_detail::trim(line).empty()) continue;
    const auto fields = csv_detail::split(line, ',');
    if (fields.size() != header.size()) {
      throw InputError("row " + std::to_string(row_num) + ": expected " +
                       std::to_string(header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    }
    std::vector<double> parsed(fields.size());
    for (int c = 0; c < static_cast<int>(fields.size()); ++c) {
      parsed[c] = csv_detail::parse_double(fields[c], row_num, c);
    }
    rows.push_back(std::move(parsed));
  }
  if (rows.empty()) throw InputError("CSV has a header but no data rows");

  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(x_cols.size());
  LoadedDataset out;
  out.dataset.x.resize(n, d);
  out.dataset.y.resize(n);
  out.dataset.w.resize(n);
  if (tau_col >= 0) out.dataset.tau_true = Eigen::VectorXd(n);
  if (contaminated_col >= 0) out.contaminated = Eigen::VectorXi(n);
  for (int i = 0; i < n; ++i) {
    out.dataset.y[i] = rows[i][y_col];
    const double w = rows[i][w_col];
    if (w != 0.0 && w != 1.0) {
      throw InputError("row " + std::to_string(i + 2) +
                       ": treatment w must be 0 or 1, got " +
                       std::to_string(w));
    }
    out.dataset.w[i] = static_cast<int>(w);
    for (int j = 0; j < d; ++j) out.dataset.x(i, j) = rows[i][x_cols[j]];
    if (tau_col >= 0) (*out.dataset.tau_true)[i] = rows[i][tau_col];
    if (contaminated_col >= 0) {
      (*out.contaminated)[i] = rows[i][contaminated_col] != 0.0 ? 1 : 0;
    }
  }
  return out;
}

inline void write_dataset_csv(const std::string& path,
                              const GeneratedData& data) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open for writing: " + path);
  out.precision(17);
  out << "y,w";
  for (int j = 0; j < data.dataset.dim(); ++j) out << ",x" << j;
  out << ",tau_true,contaminated\n";
  for (Eigen::Index i = 0; i < data.dataset.n(); ++i) {
    out << data.dataset.y[i] << ',' << data.dataset.w[i];
    for (int j = 0; j < data.dataset.dim(); ++j) {
      out << ',' << data.dataset.x(i, j);
    }
    out << ',' << data.tau_true[i] << ',' << data.contaminated_mask[i] << '\n';
  }
}

/// Minimal quoted-free CSV table writer for result emission.
class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path) {
    if (!out_) throw InputError("cannot open for writing: " + path);
    out_.precision(17);
  }

  void header(const std::vector<std::string>& columns) {
    write_row_strings(columns);
  }

  void row(const std::vector<std::string>& fields) {
    write_row_strings(fields);
  }

 private:
  void write_row_strings(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << fields[i];
    }
    out_ << '\n';
  }

  std::ofstream out_;
};

inline std::string format_double(double value) {
  if (std::isnan(value)) return "";
  std::ostringstream ss;
  ss.precision(17);
  ss << value;
  return ss.str();
}

}  // namespace robust_cate
