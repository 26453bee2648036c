#ifndef APNEA_ERRORS_HPP
#define APNEA_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace apnea {

/// Tensor/layer geometry violation (wrong rank, mismatched extents).
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid user-supplied configuration (impossible layer chain, bad flags).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed input data (records, shards, model files).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Model file carries an unsupported format version.
struct VersionError : DataError {
  explicit VersionError(const std::string& msg) : DataError(msg) {}
};

/// Model file ends before its declared payload does.
struct TruncationError : DataError {
  explicit TruncationError(const std::string& msg) : DataError(msg) {}
};

/// Model file checksum does not match its contents.
struct ChecksumError : DataError {
  explicit ChecksumError(const std::string& msg) : DataError(msg) {}
};

/// Broken internal invariant; indicates a bug, not bad input.
struct InternalError : std::logic_error {
  explicit InternalError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace apnea

#endif
