#pragma once

#include <map>
#include <string>
#include <vector>

#include "stiffode/common.hpp"
#include "stiffode/odecore.hpp"
#include "stiffode/sensitivity.hpp"
#include "stiffode/systems.hpp"
#include "stiffode/train.hpp"

namespace stiffode {

/// Scientific notation with 17 significant digits (round-trip exact).
std::string sci17(double v);

void write_solution_csv(const std::string& path,
                        const std::vector<double>& times,
                        const MatrixXd& states);
void write_solution_csv(const std::string& path,
                        const DenseSolution<double>& sol);

struct GradcheckRow {
  std::string method;
  int param_index = 0;
  double grad = 0.0;
  double ref_grad = 0.0;
};
void write_gradcheck_csv(const std::string& path,
                         const std::vector<GradcheckRow>& rows);

void write_reversal_csv(const std::string& path,
                        const std::vector<ReversalRow>& rows);
void write_blowup_csv(const std::string& path,
                      const std::vector<BlowupRow>& rows);
void write_max_eig_csv(const std::string& path,
                       const std::vector<double>& times,
                       const std::vector<double>& max_eig);
void write_train_log_csv(const std::string& path, const TrainLog& log);

MatrixXd read_csv_matrix(const std::string& path, std::vector<double>* times);

/// Flat key=value configuration files ('#' comments, blank lines ignored).
std::map<std::string, std::string> read_kv_file(const std::string& path);
void write_kv_file(const std::string& path,
                   const std::map<std::string, std::string>& kv);

}  // namespace stiffode
