#pragma once

#include <stdexcept>
#include <string>

namespace tijepa {

// Base of every error the library raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Incompatible shapes, bad axes, out-of-range indices.
class ShapeError : public Error {
public:
    using Error::Error;
};

// NaN/Inf encountered, non-scalar loss, unreachable loss.
class NumericalError : public Error {
public:
    using Error::Error;
};

// Malformed files: checkpoints, manifests, images, config, annotations.
class FormatError : public Error {
public:
    using Error::Error;
};

// Bad argument values (configuration ranges, too-few examples, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Mask sampler could not produce a non-empty context.
class SamplingError : public Error {
public:
    using Error::Error;
};

} // namespace tijepa
