#pragma once

#include <stdexcept>
#include <string>

namespace cvnn {

enum class ErrorKind {
  invalid_argument,
  shape,
  graph,
  contract,
  ingest,
  io,
  numeric,
};

/// Base of every exception thrown by the library. The C API maps `kind()`
/// onto its status codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::shape, what) {}
};

class GraphError : public Error {
 public:
  explicit GraphError(const std::string& what) : Error(ErrorKind::graph, what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorKind::contract, what) {}
};

class IngestError : public Error {
 public:
  explicit IngestError(const std::string& what) : Error(ErrorKind::ingest, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

class ArgumentError : public Error {
 public:
  explicit ArgumentError(const std::string& what) : Error(ErrorKind::invalid_argument, what) {}
};

}  // namespace cvnn
