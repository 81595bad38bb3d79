#pragma once

#include <Eigen/Core>

namespace dbsfm {

/// Row-major so that one row is one token / one sequence position.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

}  // namespace dbsfm
