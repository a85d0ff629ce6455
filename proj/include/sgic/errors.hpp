#pragma once

#include <stdexcept>
#include <string>

namespace sgic {

/// Base class for every error raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not match the regularizer, subspace or dataset.
struct InvalidShape : Error {
    using Error::Error;
};

/// The data carry no information for the requested operation
/// (e.g. a zero gradient at the origin when building a lambda grid).
struct DegenerateData : Error {
    using Error::Error;
};

/// A candidate model exceeds the psi_n^2 budget.
struct PsiBudgetExceeded : Error {
    PsiBudgetExceeded(double psi_sq, double budget)
        : Error("model complexity " + std::to_string(psi_sq) +
                " exceeds psi budget " + std::to_string(budget)),
          psi_sq(psi_sq), budget(budget) {}
    double psi_sq;
    double budget;
};

/// An iterative method hit its iteration cap.
struct NotConverged : Error {
    NotConverged(const std::string &what, double residual)
        : Error(what + " (residual " + std::to_string(residual) + ")"),
          residual(residual) {}
    double residual;
};

/// Invalid user configuration; `key` names the offending option.
struct ConfigError : Error {
    ConfigError(std::string key, const std::string &what)
        : Error(key + ": " + what), key(std::move(key)) {}
    std::string key;
};

} // namespace sgic
