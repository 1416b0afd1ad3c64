#pragma once

#include <stdexcept>
#include <string>

namespace spl {

// Base of every error the library throws on its own. libtorch failures
// (c10::Error) are translated at module boundaries where they carry meaning.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration: sizes not divisible by 4, unknown keys, empty pools.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Tensor shapes disagree with what an operation requires.
class DimensionError : public Error {
public:
    using Error::Error;
};

// An image or mask file could not be decoded into the expected layout.
class DecodeError : public Error {
public:
    using Error::Error;
};

// A weight file or checkpoint could not be read.
class LoadError : public Error {
public:
    using Error::Error;
};

// Evaluation inputs disagree with each other (manifest vs. dataset, bucket range).
class ProtocolError : public Error {
public:
    using Error::Error;
};

class GenerationError : public Error {
public:
    GenerationError(const std::string& what, double achieved_ratio)
        : Error(what), achieved_ratio_(achieved_ratio) {}
    double achieved_ratio() const noexcept { return achieved_ratio_; }

private:
    double achieved_ratio_;
};

// A loss component became NaN or infinite.
class DivergenceError : public Error {
public:
    using Error::Error;
};

}  // namespace spl
