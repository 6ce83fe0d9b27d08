#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vidseq {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { public: using Error::Error; };
class IndexError : public Error { public: using Error::Error; };
class DomainError : public Error { public: using Error::Error; };
class KindError : public Error { public: using Error::Error; };
class FormatError : public Error { public: using Error::Error; };
class RankError : public Error { public: using Error::Error; };
class EmptyLossError : public Error { public: using Error::Error; };
class NonFiniteError : public Error { public: using Error::Error; };
class OptimizerError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class AlignmentError : public Error { public: using Error::Error; };
class InputError : public Error { public: using Error::Error; };

// Raised by the task codec; position is the index of the offending token.
class ParseError : public Error {
 public:
  ParseError(std::size_t position, const std::string& what)
      : Error("parse error at position " + std::to_string(position) + ": " + what),
        position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

}  // namespace vidseq
