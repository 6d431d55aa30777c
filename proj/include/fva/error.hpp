#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fva {

// Base error: carries the name of the module that raised it so the CLI can
// print provenance.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& message)
      : std::runtime_error(module + ": " + message), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

// Distinct failure classes for the on-disk formats (EMB1, trials, model files).
enum class FormatErrorCode {
  kIo,
  kBadMagic,
  kUnsupportedVersion,
  kBadModality,
  kZeroDim,
  kTruncatedHeader,
  kTruncatedRecord,
  kEmptyId,
  kInvalidUtf8,
  kDuplicateId,
  kNonFiniteValue,
  kTrailingBytes,
  kIdTooLong,
  kColumnCount,
  kBadLabel,
  kEmptyField,
  kMalformedDocument,
  kFormatMismatch,
  kKindMismatch,
  kVersionMismatch,
  kSchemaViolation,
  kNonFiniteParameter,
};

const char* to_string(FormatErrorCode code);

class FormatError : public Error {
 public:
  FormatError(FormatErrorCode code, const std::string& message,
              std::int64_t offset = -1)
      : Error("corpus_io", compose(code, message, offset)),
        code_(code),
        offset_(offset) {}

  FormatErrorCode code() const noexcept { return code_; }
  // Byte offset (EMB1), line number (trials) or -1 when not applicable.
  std::int64_t offset() const noexcept { return offset_; }

 private:
  static std::string compose(FormatErrorCode code, const std::string& message,
                             std::int64_t offset) {
    std::string out = to_string(code);
    if (offset >= 0) out += " at " + std::to_string(offset);
    if (!message.empty()) out += ": " + message;
    return out;
  }

  FormatErrorCode code_;
  std::int64_t offset_;
};

}  // namespace fva
