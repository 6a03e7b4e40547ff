#include "stiffode/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace stiffode {

std::string sci17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.16e", v);
  return buf;
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // LF line endings everywhere
  if (!out) throw ParseError("cannot write file: " + path);
  return out;
}

}  // namespace

void write_solution_csv(const std::string& path,
                        const std::vector<double>& times,
                        const MatrixXd& states) {
  std::ofstream out = open_out(path);
  out << "t";
  for (Eigen::Index j = 0; j < states.cols(); ++j) out << ",y" << (j + 1);
  out << "\n";
  for (size_t i = 0; i < times.size(); ++i) {
    out << sci17(times[i]);
    for (Eigen::Index j = 0; j < states.cols(); ++j)
      out << "," << sci17(states(static_cast<Eigen::Index>(i), j));
    out << "\n";
  }
}

void write_solution_csv(const std::string& path,
                        const DenseSolution<double>& sol) {
  MatrixXd states(static_cast<Eigen::Index>(sol.states.size()),
                  sol.states.empty() ? 0 : sol.states[0].size());
  for (size_t i = 0; i < sol.states.size(); ++i)
    states.row(static_cast<Eigen::Index>(i)) = sol.states[i];
  write_solution_csv(path, sol.times, states);
}

void write_gradcheck_csv(const std::string& path,
                         const std::vector<GradcheckRow>& rows) {
  std::ofstream out = open_out(path);
  out << "method,param_index,grad,ref_grad,abs_diff,rel_diff\n";
  for (const GradcheckRow& r : rows) {
    const double ad = std::abs(r.grad - r.ref_grad);
    const double rd = ad / std::max(std::abs(r.ref_grad), 1e-300);
    out << r.method << "," << r.param_index << "," << sci17(r.grad) << ","
        << sci17(r.ref_grad) << "," << sci17(ad) << "," << sci17(rd) << "\n";
  }
}

void write_reversal_csv(const std::string& path,
                        const std::vector<ReversalRow>& rows) {
  std::ofstream out = open_out(path);
  out << "tol,component,fwd_terminal,rev_initial,rel_error\n";
  for (const ReversalRow& r : rows)
    out << sci17(r.tol) << "," << r.component << "," << sci17(r.fwd_terminal)
        << "," << sci17(r.rev_initial) << "," << sci17(r.rel_error) << "\n";
}

void write_blowup_csv(const std::string& path,
                      const std::vector<BlowupRow>& rows) {
  std::ofstream out = open_out(path);
  out << "lambda,total_error\n";
  for (const BlowupRow& r : rows)
    out << sci17(r.lambda) << "," << sci17(r.total_error) << "\n";
}

void write_max_eig_csv(const std::string& path,
                       const std::vector<double>& times,
                       const std::vector<double>& max_eig) {
  std::ofstream out = open_out(path);
  out << "t,max_eig\n";
  for (size_t i = 0; i < times.size(); ++i)
    out << sci17(times[i]) << "," << sci17(max_eig[i]) << "\n";
}

void write_train_log_csv(const std::string& path, const TrainLog& log) {
  std::ofstream out = open_out(path);
  out << "epoch,loss,grad_norm,lr,wall_ms,accepted_steps,rejected_steps,"
         "diverged\n";
  for (const EpochRecord& r : log.records)
    out << r.epoch << "," << sci17(r.loss) << "," << sci17(r.grad_norm) << ","
        << sci17(r.lr) << "," << sci17(r.wall_ms) << "," << r.accepted_steps
        << "," << r.rejected_steps << "," << (r.diverged ? 1 : 0) << "\n";
}

MatrixXd read_csv_matrix(const std::string& path, std::vector<double>* times) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot read file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty CSV: " + path);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("no data rows in CSV: " + path);
  const size_t ncol = rows[0].size();
  MatrixXd m(static_cast<Eigen::Index>(rows.size()),
             static_cast<Eigen::Index>(ncol - 1));
  if (times) times->resize(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != ncol) throw ParseError("ragged CSV: " + path);
    if (times) (*times)[i] = rows[i][0];
    for (size_t j = 1; j < ncol; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j - 1)) =
          rows[i][j];
  }
  return m;
}

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot read config: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::string s;
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c)) || !s.empty()) s += c;
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
      s.pop_back();
    if (s.empty()) continue;
    const size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ParseError(path + ":" + std::to_string(line_no) +
                       ": expected key=value");
    std::string key = s.substr(0, eq);
    while (!key.empty() && std::isspace(static_cast<unsigned char>(key.back())))
      key.pop_back();
    std::string val = s.substr(eq + 1);
    size_t b = 0;
    while (b < val.size() && std::isspace(static_cast<unsigned char>(val[b])))
      ++b;
    kv[key] = val.substr(b);
  }
  return kv;
}

void write_kv_file(const std::string& path,
                   const std::map<std::string, std::string>& kv) {
  std::ofstream out = open_out(path);
  for (const auto& [k, v] : kv) out << k << "=" << v << "\n";
}

}  // namespace stiffode
