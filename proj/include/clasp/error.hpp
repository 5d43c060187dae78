#pragma once

#include <stdexcept>
#include <string>

namespace clasp {

// Root of all failures this library raises on purpose. The CLI maps these to
// exit code 1; anything escaping uncaught is a bug.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad or inconsistent configuration (unknown JSON keys, shape mismatches,
// dimension conflicts). Raised before any state is mutated.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed input data: images, label files, trace files, oracle specs.
struct DataError : Error {
  using Error::Error;
};

// Checkpoint integrity or structure violations. Message names the offending
// tensor when one is known.
struct CheckpointError : Error {
  using Error::Error;
};

// Embedding requests that have no defined answer (zero-norm vector, unknown
// concept, empty region).
struct EmbedError : Error {
  using Error::Error;
};

// Label-pipeline state that cannot proceed (fewer foreground tokens than the
// requested granularity).
struct GranularityError : Error {
  using Error::Error;
};

}  // namespace clasp
