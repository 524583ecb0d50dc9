#pragma once

#include <stdexcept>
#include <string>

namespace nabqr {

enum class ErrorKind { Domain, Validation, Io, Numerical };

/// Base of every error raised by the library. The kind selects the CLI exit code.
class Error : public std::runtime_error {
public:
	Error(ErrorKind kind, const std::string &what) : std::runtime_error(what), kind_(kind) {}
	ErrorKind kind() const noexcept { return kind_; }

private:
	ErrorKind kind_;
};

/// Argument outside the mathematical domain of an operation (tau not in (0,1), empty sample, ...).
class DomainError : public Error {
public:
	explicit DomainError(const std::string &what) : Error(ErrorKind::Domain, what) {}
};

/// Malformed input data, inconsistent shapes or configuration.
class ValidationError : public Error {
public:
	explicit ValidationError(const std::string &what) : Error(ErrorKind::Validation, what) {}
};

class IoError : public Error {
public:
	explicit IoError(const std::string &what) : Error(ErrorKind::Io, what) {}
};

/// Divergence, singular systems, exhausted iteration budgets.
class NumericalError : public Error {
public:
	explicit NumericalError(const std::string &what) : Error(ErrorKind::Numerical, what) {}
};

/// The design matrix has no usable column.
class RankError : public NumericalError {
public:
	explicit RankError(const std::string &what) : NumericalError(what) {}
};

const char *error_kind_name(ErrorKind kind) noexcept;
int exit_code(ErrorKind kind) noexcept;

} // namespace nabqr
