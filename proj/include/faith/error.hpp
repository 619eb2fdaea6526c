#pragma once

#include <stdexcept>
#include <string>

namespace faith {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A caller violated a documented precondition (pool too small, k == 0, ...).
class PreconditionError : public Error {
  public:
    using Error::Error;
};

/// Gold data is unusable, e.g. an empty alias list.
class MalformedGoldError : public Error {
  public:
    using Error::Error;
};

/// A probability vector that should sum to one does not.
class UnnormalizedInputError : public Error {
  public:
    using Error::Error;
};

/// Text that should carry a knowledge-state label does not.
class StateParseError : public Error {
  public:
    explicit StateParseError(std::string raw)
        : Error("unparseable knowledge state: '" + raw + "'"), raw_(std::move(raw)) {}

    [[nodiscard]] const std::string& raw() const noexcept { return raw_; }

  private:
    std::string raw_;
};

// Gateway failures. Each kind is distinguishable by type; only TransportError
// and retryable EndpointError statuses are retried by the gateway.

class TransportError : public Error {
  public:
    using Error::Error;
};

class TimeoutError : public Error {
  public:
    using Error::Error;
};

class EndpointError : public Error {
  public:
    EndpointError(int status, const std::string& body)
        : Error("endpoint returned status " + std::to_string(status) + ": " + body),
          status_(status) {}

    [[nodiscard]] int status() const noexcept { return status_; }
    [[nodiscard]] bool retryable() const noexcept { return status_ == 429 || status_ >= 500; }

  private:
    int status_;
};

class MalformedResponseError : public Error {
  public:
    using Error::Error;
};

/// Index file could not be read back (bad magic, version, truncation, CRC).
class IndexFormatError : public Error {
  public:
    using Error::Error;
};

/// Input file content is malformed; carries the 1-based line number.
class InputFormatError : public Error {
  public:
    InputFormatError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    [[nodiscard]] std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

}  // namespace faith
