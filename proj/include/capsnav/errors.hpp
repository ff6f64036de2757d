#pragma once

#include <stdexcept>
#include <string>

namespace capsnav {

// Thrown when tensor extents do not line up (matmul inner dims, conv
// output extents, elementwise mismatch, invalid axis).
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Violated call contract: non-scalar backward loss, stepping a finished
// episode, missing rollouts in a synchronous update.
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad static configuration: capsule channel divisibility, unknown net
// kind, invalid hyperparameter.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Failed to load an external artifact: map file, checkpoint, config file.
struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace capsnav
