#pragma once

#include <stdexcept>
#include <string>

namespace adml {

// Contract violations (bad dimensions, out-of-range arguments).
class DimensionError : public std::invalid_argument {
public:
    explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

// Numerical failures that a caller may want to handle per fold / per replication.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

class NonConvergenceError : public NumericalError {
public:
    explicit NonConvergenceError(const std::string& what) : NumericalError(what) {}
};

class SingularSystemError : public NumericalError {
public:
    explicit SingularSystemError(const std::string& what) : NumericalError(what) {}
};

class DegenerateMomentError : public NumericalError {
public:
    explicit DegenerateMomentError(const std::string& what) : NumericalError(what) {}
};

}  // namespace adml
