#pragma once

#include <Eigen/Dense>
#include <string>

namespace adml {

// Header-free, comma-separated, row-major matrix files.
Eigen::MatrixXd read_matrix_csv(const std::string& path);
Eigen::VectorXd read_vector_csv(const std::string& path);

void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m);
void write_vector_csv(const std::string& path, const Eigen::VectorXd& v);

// Full-precision round-trippable formatting shared by all CSV writers.
std::string format_double(double x);

}  // namespace adml
