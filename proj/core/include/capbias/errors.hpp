#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace capbias {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A precondition on the arguments of an operation does not hold.
class InvalidInput : public Error {
  public:
    using Error::Error;
};

/// An aggregation cell (gender x concept) has no records.
class InsufficientData : public Error {
  public:
    InsufficientData(const std::string& what, std::string cell)
        : Error(what), cell_(std::move(cell)) {}

    const std::string& cell() const noexcept { return cell_; }

  private:
    std::string cell_;
};

/// Manifest or lexicon content violates a structural invariant.
class ValidationError : public Error {
  public:
    ValidationError(const std::string& what, std::vector<std::string> offenders)
        : Error(what), offenders_(std::move(offenders)) {}

    const std::vector<std::string>& offenders() const noexcept { return offenders_; }

  private:
    std::vector<std::string> offenders_;
};

/// Failure while reading an on-disk artifact (embedding store, JSONL, config).
class LoadError : public Error {
  public:
    using Error::Error;
};

/// Failure talking to the remote embedding service.
class RemoteError : public Error {
  public:
    RemoteError(const std::string& what, int attempts)
        : Error(what), attempts_(attempts) {}

    int attempts() const noexcept { return attempts_; }

  private:
    int attempts_;
};

/// A reward or parameter became non-finite during policy training.
class TrainingError : public Error {
  public:
    using Error::Error;
};

/// Inputs are well formed but a requested computation needs data that is absent.
class ConfigError : public Error {
  public:
    using Error::Error;
};

} // namespace capbias
