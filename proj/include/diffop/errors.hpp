/*
 Copyright 2026 The diffop authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#pragma once

#include <stdexcept>
#include <string>

namespace diffop {

/// Base class for every error raised by the library.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Incompatible vector/matrix shapes at an API boundary.
struct DimensionMismatch : Error {
  using Error::Error;
};

/// A linear system whose pivots fall below the scale-aware cutoff.
struct SingularMatrix : Error {
  using Error::Error;
};

/// A model or cost evaluation produced NaN or Inf.
struct NonFiniteEvaluation : Error {
  using Error::Error;
};

/// Log-density query outside the truncated support box.
struct OutOfSupport : Error {
  using Error::Error;
};

/// The fast gradient route was asked to run with active constraints present.
struct ActiveConstraintsPresent : Error {
  using Error::Error;
};

/// The stacked constraint Jacobian lost row rank during factorization.
struct RankDeficient : Error {
  using Error::Error;
};

/// Every sampled trajectory in a gradient batch was rejected.
struct NoValidTrajectories : Error {
  using Error::Error;
};

/// An input outside the mathematical domain of a formula.
struct DomainError : Error {
  using Error::Error;
};

/// A solver gave up in a way that leaves no usable iterate.
struct SolverFailure : Error {
  using Error::Error;
};

/// A malformed or contradictory configuration document.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace diffop
