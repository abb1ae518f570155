#pragma once

#include <stdexcept>
#include <string>

namespace tvmpc {

/// Base class of every error raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class InvalidMatrix : public Error
{
public:
  using Error::Error;
};

class InvalidModel : public Error
{
public:
  using Error::Error;
};

class SolverError : public Error
{
public:
  using Error::Error;
};

class UnboundedError : public Error
{
public:
  using Error::Error;
};

class NotConverged : public Error
{
public:
  NotConverged(const std::string& what, int iterations) : Error(what), iterations_(iterations) {}
  int iterations() const { return iterations_; }

private:
  int iterations_;
};

class VerificationFailed : public Error
{
public:
  VerificationFailed(const std::string& what, int index) : Error(what), index_(index) {}
  /// Index of the violated inclusion or inequality.
  int index() const { return index_; }

private:
  int index_;
};

class SdpInfeasible : public Error
{
public:
  using Error::Error;
};

class InsufficientTokens : public Error
{
public:
  using Error::Error;
};

class NotInTerminalSet : public Error
{
public:
  using Error::Error;
};

class InfeasibleProblem : public Error
{
public:
  InfeasibleProblem(const std::string& what, long step) : Error(what), step_(step) {}
  long step() const { return step_; }

private:
  long step_;
};

class ConfigError : public Error
{
public:
  using Error::Error;
};

}  // namespace tvmpc
