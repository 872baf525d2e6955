#pragma once

#include <stdexcept>
#include <string>

namespace bubbletomo {

/// Invalid configuration or precondition violation (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dimension mismatch between a model and the data it is applied to (exit 3).
class ShapeMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Solver non-convergence, overflow or divergence (exit 4).
class NumericalFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A scene that cannot be realized: disks that do not fit, or a channel with
/// no conducting path between the electrodes.
class InfeasibleScene : public NumericalFailure {
public:
    using NumericalFailure::NumericalFailure;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) {
        throw ConfigError(message);
    }
}

}  // namespace bubbletomo
