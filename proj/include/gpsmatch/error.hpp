#pragma once

#include <stdexcept>
#include <string>

namespace gpsmatch {

// Broad failure class, used by the CLI to pick an exit status.
enum class ErrorCategory { config, data, numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define GPSMATCH_DEFINE_ERROR(Name, Category)                             \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(Category, what) {}     \
  };

// Configuration and input contracts.
GPSMATCH_DEFINE_ERROR(ConfigError, ErrorCategory::config)
GPSMATCH_DEFINE_ERROR(CaliperError, ErrorCategory::config)
GPSMATCH_DEFINE_ERROR(InputError, ErrorCategory::config)

// Problems with the data itself.
GPSMATCH_DEFINE_ERROR(SchemaError, ErrorCategory::data)
GPSMATCH_DEFINE_ERROR(ParseError, ErrorCategory::data)
GPSMATCH_DEFINE_ERROR(SizeError, ErrorCategory::data)
GPSMATCH_DEFINE_ERROR(TypeError, ErrorCategory::data)
GPSMATCH_DEFINE_ERROR(BlockError, ErrorCategory::data)
GPSMATCH_DEFINE_ERROR(PositivityError, ErrorCategory::data)

// Numerical failures.
GPSMATCH_DEFINE_ERROR(FitError, ErrorCategory::numerical)
GPSMATCH_DEFINE_ERROR(DegeneracyError, ErrorCategory::numerical)
GPSMATCH_DEFINE_ERROR(StandardizationError, ErrorCategory::numerical)
GPSMATCH_DEFINE_ERROR(OrthogonalizationError, ErrorCategory::numerical)
GPSMATCH_DEFINE_ERROR(ConvergenceError, ErrorCategory::numerical)
GPSMATCH_DEFINE_ERROR(TuningError, ErrorCategory::numerical)
GPSMATCH_DEFINE_ERROR(PipelineError, ErrorCategory::numerical)

#undef GPSMATCH_DEFINE_ERROR

}  // namespace gpsmatch
