#pragma once

#include <stdexcept>
#include <string>

namespace efield {

// I/O, format and schema failures. The CLI maps these to exit code 1.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised when a computed quantity breaks a precondition of the analysis
// (non-finite logits, non-unit vectors, degenerate inputs).
class AnalysisError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace efield
