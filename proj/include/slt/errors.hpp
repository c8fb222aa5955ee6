#pragma once

#include <stdexcept>
#include <string>

namespace slt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input data: unreadable files, misaligned corpora, malformed lines.
class DataError : public Error {
 public:
  using Error::Error;
};

class PathError : public DataError {
 public:
  explicit PathError(const std::string& path, const std::string& what = "cannot open")
      : DataError(what + ": " + path), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class AlignmentError : public DataError {
 public:
  AlignmentError(std::size_t source_count, std::size_t target_count)
      : DataError("alignment error: source has " + std::to_string(source_count) +
                  " lines, target has " + std::to_string(target_count)),
        source_count_(source_count),
        target_count_(target_count) {}
  std::size_t source_count() const { return source_count_; }
  std::size_t target_count() const { return target_count_; }

 private:
  std::size_t source_count_;
  std::size_t target_count_;
};

class EmptyCorpusError : public DataError {
 public:
  using DataError::DataError;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : DataError("parse error at line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Inconsistent settings (missing splits, mismatched vocabularies, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Violated precondition of an operation.
class ContractError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

class IndexError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Non-finite values encountered during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace slt
