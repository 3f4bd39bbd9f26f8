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

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cfglab {

/// Flat "dotted.key = value" text; '#' starts a comment. Keys are unique and
/// iterate in sorted order, which makes canonical() stable for digests.
class Config {
 public:
  Config() = default;

  /// kInvalidConfig on a malformed line or a duplicate key.
  static Config parse(std::string_view text, std::string_view source = "<config>");
  static Config load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  /// Applies "key=value"; kInvalidConfig if there is no '='.
  void set_assignment(std::string_view assignment);
  void erase(const std::string& key) { values_.erase(key); }

  std::optional<std::string> find(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }

  /// One "key = value" line per entry, sorted.
  std::string canonical() const;

 private:
  std::map<std::string, std::string> values_;
};

double parse_double(std::string_view s, std::string_view what);
long long parse_int(std::string_view s, std::string_view what);
std::vector<std::string> split_list(std::string_view s);
std::string trim(std::string_view s);

}  // namespace cfglab
