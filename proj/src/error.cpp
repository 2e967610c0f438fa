// Copyright 2026 The snrkit Authors.
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

#include "snrkit/error.hpp"

namespace snrkit {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kUnsupportedFormat: return "unsupported format";
    case ErrorCode::kIo: return "I/O error";
    case ErrorCode::kDomain: return "domain error";
    case ErrorCode::kLength: return "length error";
    case ErrorCode::kKind: return "kind error";
    case ErrorCode::kTooShort: return "too short";
    case ErrorCode::kState: return "state error";
    case ErrorCode::kConfig: return "config error";
    case ErrorCode::kDimension: return "dimension mismatch";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kSize: return "size error";
    case ErrorCode::kFit: return "fit error";
    case ErrorCode::kArity: return "arity mismatch";
    case ErrorCode::kMissing: return "missing artifact";
  }
  return "error";
}

}  // namespace snrkit
