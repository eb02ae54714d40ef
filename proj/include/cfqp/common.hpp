#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfqp {

// Data matrices are stored features x samples: column i is sample i. In memory
// this is the same byte order as a row-major [N x d] array.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IndexList = std::vector<std::size_t>;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments supplied by the caller.
class ConfigError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed input file. `offset` is the byte position where parsing failed.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// A computation produced a non-finite value or otherwise left its valid domain.
class NumericError : public Error {
public:
    using Error::Error;
};

// Values written to disk are IEEE-754 binary32; everything the generators emit
// is rounded through float so that save/load round trips are exact.
inline double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

inline void require_shape(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

}  // namespace cfqp
