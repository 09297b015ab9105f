#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace krom {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

enum class ErrorKind {
    invalid_parameter,
    invalid_grid,
    domain,
    stencil,
    format,
    config,
    numeric,
    ill_conditioned,
    divergence,
    nonconvergence,
    blow_up,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const { return kind_; }
    // true for errors caused by bad input rather than failed numerics
    bool is_config() const {
        return kind_ == ErrorKind::invalid_parameter || kind_ == ErrorKind::invalid_grid ||
               kind_ == ErrorKind::domain || kind_ == ErrorKind::stencil ||
               kind_ == ErrorKind::format || kind_ == ErrorKind::config;
    }

private:
    ErrorKind kind_;
};

class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, std::vector<double> history)
        : Error(ErrorKind::divergence, what), history_(std::move(history)) {}
    const std::vector<double>& history() const { return history_; }

private:
    std::vector<double> history_;
};

// Warnings (rank clamps, dt reductions) go through a replaceable sink. Default is stderr.
using WarningHandler = std::function<void(std::string_view)>;
void set_warning_handler(WarningHandler handler);
void warn(std::string_view message);

enum class PdeKind { semilinear_elliptic, darcy, burgers, allen_cahn, navier_stokes };

std::string to_string(PdeKind kind);

// Shortest decimal that round-trips to the same double.
std::string format_double(double value);
PdeKind parse_pde_kind(std::string_view name);

}  // namespace krom
