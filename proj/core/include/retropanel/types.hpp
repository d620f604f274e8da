#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace retropanel {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IntMatrix = Eigen::MatrixXi;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Treatment groups in the retrospective design. Always-treated units are
// treated in every observed period; later-treated units switch on at some
// interior period and stay on.
enum class Group { always_treated, later_treated };

}  // namespace retropanel
