#pragma once

#include "tvmpc/models.hpp"
#include "tvmpc/synthesis.hpp"

namespace tvmpc::testing {

/// Batch reactor behind a token bucket with g = 1, c = 8, b = 22.
inline TokenBucketParams reactor_token_bucket()
{
  TokenBucketParams p;
  std::tie(p.a, p.b) = batch_reactor(0.1);
  p.q = 10.0 * Matrix::Identity(4, 4);
  p.r = Matrix::Identity(2, 2);
  p.g = 1;
  p.c = 8;
  p.bucket = 22;
  p.xp = Polytope::box(Vector::Constant(4, 2.0));
  p.up = Polytope::box(Vector::Constant(2, 3.0));
  return p;
}

inline TokenBucketState reactor_token_bucket_start()
{
  TokenBucketState s;
  s.xp = (Vector(4) << 1.0, 0.0, 1.0, 0.0).finished();
  s.us = Vector::Zero(2);
  s.beta = 22;
  return s;
}

/// Two decoupled batch reactors with four single-input actuators.
inline ActuatorParams reactor_actuators()
{
  ActuatorParams p;
  std::tie(p.a, p.b) = two_batch_reactors(0.1);
  p.q = Matrix::Identity(8, 8);
  p.q.bottomRightCorner(4, 4) *= 10.0;
  p.r = Eigen::Vector4d(10.0, 0.1, 1.0, 1.0).asDiagonal().toDenseMatrix();
  p.widths = {1, 1, 1, 1};
  p.base_schedule = {0, 1, 2, 3};
  return p;
}

inline Vector reactor_actuators_start() { return (Vector(8) << 1, 0, 1, 0, 1, 0, 1, 0).finished(); }

/// Synthesized once per test binary.
inline const PeriodicTerminalIngredients& reactor_token_bucket_ingredients()
{
  static const PeriodicTerminalIngredients ing = synthesize_tb(reactor_token_bucket());
  return ing;
}

inline const PeriodicTerminalIngredients& reactor_actuator_ingredients()
{
  static const PeriodicTerminalIngredients ing = synthesize_act(reactor_actuators());
  return ing;
}

inline Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }
inline Vector vec1(double v) { return Vector::Constant(1, v); }

}  // namespace tvmpc::testing
