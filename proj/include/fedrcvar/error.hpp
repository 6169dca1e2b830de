#pragma once

#include <stdexcept>
#include <string>

namespace fedrcvar {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A hyperparameter is outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A loss or threshold value lies outside [0, B].
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed or out-of-contract data (feature norms, CSV content, labels).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A partition strategy could not produce a valid client split.
class PartitionError : public Error {
 public:
  PartitionError(std::size_t client, const std::string& what)
      : Error("partition: client " + std::to_string(client) + ": " + what),
        client_(client) {}
  std::size_t client() const noexcept { return client_; }

 private:
  std::size_t client_;
};

/// Invalid federation or run configuration.
class ConfigError : public Error {
 public:
  ConfigError(std::string key_path, const std::string& what)
      : Error(key_path.empty() ? what : key_path + ": " + what),
        key_path_(std::move(key_path)) {}
  const std::string& key_path() const noexcept { return key_path_; }

 private:
  std::string key_path_;
};

/// Violation of the client/server exchange contract.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// The requested combination is not covered by the implementation.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// A non-finite parameter appeared during training.
class NumericError : public Error {
 public:
  NumericError(std::size_t round, const std::string& what)
      : Error("non-finite state at round " + std::to_string(round) + ": " + what),
        round_(round) {}
  std::size_t round() const noexcept { return round_; }

 private:
  std::size_t round_;
};

}  // namespace fedrcvar
