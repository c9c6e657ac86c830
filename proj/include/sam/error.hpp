// Copyright 2026 The SAM Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SAM_ERROR_HPP_
#define SAM_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace sam {

// Base of every library error. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SAM_DEFINE_ERROR(Name)        \
  class Name : public Error {         \
   public:                            \
    using Error::Error;               \
  };

SAM_DEFINE_ERROR(DegenerateVector)
SAM_DEFINE_ERROR(DimensionMismatch)
SAM_DEFINE_ERROR(ShapeMismatch)
SAM_DEFINE_ERROR(InvalidConfig)
SAM_DEFINE_ERROR(ManifestError)
SAM_DEFINE_ERROR(ShapeError)
SAM_DEFINE_ERROR(LabelError)
SAM_DEFINE_ERROR(NonFiniteFeature)
SAM_DEFINE_ERROR(InsufficientData)
SAM_DEFINE_ERROR(EmptyCategory)
SAM_DEFINE_ERROR(UnknownCategory)
SAM_DEFINE_ERROR(SameCategory)
SAM_DEFINE_ERROR(MissingProjection)
SAM_DEFINE_ERROR(NonFiniteGradient)
SAM_DEFINE_ERROR(DivergenceDetected)
SAM_DEFINE_ERROR(IncompatibleCheckpoint)
SAM_DEFINE_ERROR(IoError)

#undef SAM_DEFINE_ERROR

}  // namespace sam

#endif  // SAM_ERROR_HPP_
