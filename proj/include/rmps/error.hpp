#pragma once

#include <stdexcept>
#include <string>

namespace rmps {

// Every failure raised by the library derives from Error so the CLI can map
// categories onto exit codes without string matching.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
  public:
    using Error::Error;
};

class InputError : public Error {
  public:
    using Error::Error;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

class ContractError : public Error {
  public:
    using Error::Error;
};

class OracleError : public Error {
  public:
    using Error::Error;
};

class ParseError : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    using Error::Error;
};

} // namespace rmps
