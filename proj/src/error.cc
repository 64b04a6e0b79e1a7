// src/error.cc

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

#include "esf/error.h"

namespace esf {

const char* ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kArgument: return "argument";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kCorruption: return "corruption";
    case ErrorKind::kTruncation: return "truncation";
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kEmptyInput: return "empty-input";
    case ErrorKind::kGeometry: return "degenerate-geometry";
    case ErrorKind::kDegenerate: return "degenerate";
    case ErrorKind::kProtocol: return "protocol";
    case ErrorKind::kNetwork: return "network";
    case ErrorKind::kDelivery: return "delivery";
    case ErrorKind::kScorerContract: return "scorer-contract";
    case ErrorKind::kSize: return "size";
    case ErrorKind::kLaunch: return "launch";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message,
             std::optional<uint64_t> offset)
    : std::runtime_error(std::string(ErrorKindName(kind)) + " error: " +
                         message),
      kind_(kind),
      message_(message),
      offset_(offset) {}

void Fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace esf
