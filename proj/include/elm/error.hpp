#pragma once

#include <stdexcept>
#include <string>

namespace elm {

enum class ErrorKind {
  Dimension,
  Index,
  Domain,
  Contract,
  Length,
  Config,
  Budget,
  Divergence,
  Io,
  Parse,
};

const char* to_string(ErrorKind kind) noexcept;

// Every library failure is an elm::Error carrying a category, so the CLI can
// report "<category>: <message>" and pick an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define ELM_DEFINE_ERROR(Name, Kind)                                    \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& message) : Error(ErrorKind::Kind, message) {} \
  };

ELM_DEFINE_ERROR(DimensionError, Dimension)
ELM_DEFINE_ERROR(IndexError, Index)
ELM_DEFINE_ERROR(DomainError, Domain)
ELM_DEFINE_ERROR(ContractError, Contract)
ELM_DEFINE_ERROR(LengthError, Length)
ELM_DEFINE_ERROR(ConfigError, Config)
ELM_DEFINE_ERROR(BudgetError, Budget)
ELM_DEFINE_ERROR(DivergenceError, Divergence)
ELM_DEFINE_ERROR(IoError, Io)
ELM_DEFINE_ERROR(ParseError, Parse)

#undef ELM_DEFINE_ERROR

}  // namespace elm
