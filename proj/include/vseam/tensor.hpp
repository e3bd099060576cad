#pragma once

#include <Eigen/Dense>

namespace vseam {

// Rows are sequence positions throughout; row-major keeps a position's
// features contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

}  // namespace vseam
