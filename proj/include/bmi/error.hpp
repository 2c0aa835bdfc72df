#pragma once

#include <stdexcept>
#include <string>

namespace bmi {

// Root of every error raised by the library. Subclasses name the failure
// category so callers (and the CLI exit-code mapping) can dispatch on type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define BMI_DEFINE_ERROR(Name)              \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  }

BMI_DEFINE_ERROR(InvalidValueError);    // non-finite numbers
BMI_DEFINE_ERROR(ShapeError);           // tensor shape mismatch
BMI_DEFINE_ERROR(UsageError);           // API called in the wrong state
BMI_DEFINE_ERROR(InputError);           // malformed caller input
BMI_DEFINE_ERROR(ConfigError);          // invalid configuration value
BMI_DEFINE_ERROR(DataError);            // not enough data for the request
BMI_DEFINE_ERROR(EmptyCorpusError);
BMI_DEFINE_ERROR(EmptySampleError);
BMI_DEFINE_ERROR(DecodeError);
BMI_DEFINE_ERROR(CapacityError);
BMI_DEFINE_ERROR(DegenerateWeightError);
BMI_DEFINE_ERROR(StatisticsError);
BMI_DEFINE_ERROR(ComparisonError);
BMI_DEFINE_ERROR(DivergenceError);
BMI_DEFINE_ERROR(CheckpointError);

#undef BMI_DEFINE_ERROR

}  // namespace bmi
