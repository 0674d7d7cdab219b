#pragma once

#include <stdexcept>
#include <string>

namespace comanip {

/// Malformed or out-of-range configuration (scenario, chain, experiment).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Every particle lost its weight; the caller reinitializes from the prior.
struct EstimatorDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// The simulation left its valid state space (shadow arm lost track,
/// non-finite state).
struct SimFault : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A client frame that is not valid JSON, has the wrong shape, or carries
/// unknown fields.
struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace comanip
