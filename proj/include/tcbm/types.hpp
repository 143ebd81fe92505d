#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace tcbm {

// All statistics are computed in 64-bit floats internally; batch data on
// disk and in the trainer is 32-bit.
using Scalar = double;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>;
using VectorF = Eigen::Matrix<float, Eigen::Dynamic, 1>;

using MatrixRef = Eigen::Ref<const Matrix>;
using VectorRef = Eigen::Ref<const Vector>;

// Covariance (or an observed block of one) is singular where an inverse is
// required: score at t = 0, conditioning on a time-0 state, a defective
// observed block in dense conditioning.
struct SingularCovarianceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A simulation or training run produced a non-finite state.
struct DivergedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binary file did not match its declared layout; `offset` points at the
// first inconsistent byte.
struct FormatError : std::runtime_error {
    std::size_t offset;
    FormatError(const std::string& what, std::size_t off)
        : std::runtime_error(what + " (offset " + std::to_string(off) + ")"), offset(off) {}
};

}  // namespace tcbm
