// include/esf/error.h

// Copyright 2026  The ESF Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef ESF_ERROR_H_
#define ESF_ERROR_H_

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace esf {

enum class ErrorKind {
  kArgument,
  kConfig,
  kIo,
  kFormat,
  kCorruption,
  kTruncation,
  kDomain,
  kEmptyInput,
  kGeometry,
  kDegenerate,
  kProtocol,
  kNetwork,
  kDelivery,
  kScorerContract,
  kSize,
  kLaunch,
};

const char* ErrorKindName(ErrorKind kind);

// Every failure surfaced by the library is an esf::Error.  The kind decides
// how callers (notably the CLI) classify it; byte offsets are attached for
// on-disk and on-wire corruption.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message,
        std::optional<uint64_t> offset = std::nullopt);

  ErrorKind kind() const { return kind_; }
  // The message without the "<kind> error: " prefix that what() carries.
  const std::string& message() const { return message_; }
  std::optional<uint64_t> offset() const { return offset_; }

 private:
  ErrorKind kind_;
  std::string message_;
  std::optional<uint64_t> offset_;
};

[[noreturn]] void Fail(ErrorKind kind, const std::string& message);

}  // namespace esf

#endif  // ESF_ERROR_H_
