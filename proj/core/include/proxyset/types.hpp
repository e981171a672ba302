#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace proxyset {

inline constexpr const char* kVersion = "0.3.0";

/// Dense row-major matrix; one row per image (or identity, or centroid).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixView = Eigen::Ref<const Matrix>;

/// One offending input row, as surfaced in validation reports.
struct Issue {
    std::string file;
    std::size_t line = 0;  // 1-based; 0 when the issue is file-level
    std::string message;
};

/// Malformed input or a violated precondition. Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
    ValidationError(const std::string& what, std::vector<Issue> issues)
        : std::runtime_error(what), issues_(std::move(issues)) {}

    const std::vector<Issue>& issues() const noexcept { return issues_; }

private:
    std::vector<Issue> issues_;
};

/// Numerical breakdown (non-finite intermediate, failed decomposition). Exit code 2.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace proxyset
