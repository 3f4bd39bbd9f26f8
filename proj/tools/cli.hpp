// Copyright 2026 The cfglab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <ostream>

namespace cfglab::cli {

/// Process exit statuses.
enum Exit : int {
  kOk = 0,
  kOther = 1,
  kUsage = 2,           // unknown flag, missing argument
  kIoFailure = 3,       // unreadable or unwritable path
  kBadConfig = 4,       // invalid config or parameter
  kNumerical = 5,       // divergence, degenerate time
  kPartial = 6,         // experiment finished with failed cells
};

/// Runs one subcommand. Errors go to `err` as a single line
///   error: code=<name> exit=<status> msg=<text>
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cfglab::cli
