#pragma once

#include <stdexcept>
#include <string>

namespace advrep {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ADVREP_DEFINE_ERROR(Name)          \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

ADVREP_DEFINE_ERROR(DimensionError);
ADVREP_DEFINE_ERROR(LabelError);
ADVREP_DEFINE_ERROR(RankError);
ADVREP_DEFINE_ERROR(NumericError);
ADVREP_DEFINE_ERROR(FormatError);
ADVREP_DEFINE_ERROR(ConsistencyError);
ADVREP_DEFINE_ERROR(IoError);
ADVREP_DEFINE_ERROR(ConfigError);
ADVREP_DEFINE_ERROR(InjectivityError);
ADVREP_DEFINE_ERROR(PreconditionError);
ADVREP_DEFINE_ERROR(ArgumentError);
ADVREP_DEFINE_ERROR(DegenerateError);
ADVREP_DEFINE_ERROR(SchemaError);
ADVREP_DEFINE_ERROR(DivergenceError);

#undef ADVREP_DEFINE_ERROR

}  // namespace advrep
