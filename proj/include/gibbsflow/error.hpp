#pragma once

#include <stdexcept>
#include <string>

namespace gibbsflow
{

/// Base class for all errors raised by the library.
class Error : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// A density was evaluated where it is zero or not finite.
class DomainError : public Error
{
  public:
    using Error::Error;
};

/// A quadrature integrand produced a non-finite value at a node.
class QuadratureError : public Error
{
  public:
    QuadratureError(const std::string& what, double node)
        : Error(what + " at node " + std::to_string(node)), node_(node)
    {
    }

    double node() const noexcept { return node_; }

  private:
    double node_;
};

/// Invalid argument or configuration supplied by the caller.
class InvalidArgument : public Error
{
  public:
    using Error::Error;
};

/// The adaptive integrator could not make progress.
class StiffError : public Error
{
  public:
    StiffError(const std::string& what, double t) : Error(what), t_(t) {}

    double time() const noexcept { return t_; }

  private:
    double t_;
};

/// Every particle carries zero weight.
class EnsembleDied : public Error
{
  public:
    EnsembleDied() : Error("ensemble died: every log-weight is -inf") {}
};

} // namespace gibbsflow
